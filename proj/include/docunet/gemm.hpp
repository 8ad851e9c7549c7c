#pragma once

#include <cstddef>

#ifdef DOCUNET_HAVE_CBLAS
#include <cblas.h>
#endif

namespace docunet::detail {

/// C[m x n] += op(A) * op(B), row-major, where op(A) is [m x k] and op(B)
/// is [k x n]. A transposed operand is stored as [k x m] (resp. [n x k]).
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 const double* A, const double* B, double* C) {
  if (m == 0 || n == 0 || k == 0) return;
#ifdef DOCUNET_HAVE_CBLAS
  // One BLAS thread keeps summation order, and so results, fixed.
  static const bool single_threaded = (openblas_set_num_threads(1), true);
  (void)single_threaded;
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, int(m), int(n), int(k), 1.0, A,
              int(trans_a ? m : k), B, int(trans_b ? k : n), 1.0, C, int(n));
#else
  if (!trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* c = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double a = trans_a ? A[p * m + i] : A[i * k + p];
        const double* b = B + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += (trans_a ? A[p * m + i] : A[i * k + p]) * B[j * k + p];
        C[i * n + j] += s;
      }
  }
#endif
}

}  // namespace docunet::detail
