#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "docunet/binary_io.hpp"
#include "docunet/encoder.hpp"

namespace docunet {

enum class PairStrategy { Similarity, Context };

inline const char* to_string(PairStrategy s) {
  return s == PairStrategy::Similarity ? "similarity" : "context";
}

/// Entity-level relation matrix: one D-channel feature vector per ordered
/// entity pair. Rows and columns at or beyond n_entities are zero padding.
struct RelationMatrixF {
  Tensor values;  // [N x N x D]
  std::size_t n_entities = 0;
  PairStrategy strategy = PairStrategy::Context;

  std::size_t size() const { return values.dim(0); }
  std::size_t channels() const { return values.dim(2); }
};

/// Learnable weights of the pair-feature stage.
struct PairFeatureParams {
  Tensor w1;  // [d x d] bilinear similarity
  Tensor w2;  // [d x D] context projection
  Tensor b2;  // [D]
  // Similarity features as [es*eo ; cos ; bilinear] (d + 2 channels) instead
  // of three scalars.
  bool elementwise_similarity = false;
};

/// Logsumexp-pooled entity embeddings stacked as [n x d].
inline Tensor entity_embeddings(const EncodedDoc& enc) {
  if (enc.mention_index.empty()) throw DataError("document has no entities");
  std::vector<Tensor> rows;
  const std::size_t d = enc.hidden.dim(1);
  for (const auto& mentions : enc.mention_index) {
    rows.push_back(reshape(entity_pool(enc, mentions), {1, d}));
  }
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

namespace detail {

// Row indices (s, o) for all n*n ordered pairs in row-major order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> pair_indices(std::size_t n) {
  std::vector<std::size_t> subj, obj;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < n; ++o) {
      subj.push_back(s);
      obj.push_back(o);
    }
  return {subj, obj};
}

// Pair features [n*n x D] to a zero-padded [N x N x D] matrix.
inline Tensor pad_pairs(const Tensor& rows, std::size_t n, std::size_t N) {
  Tensor cube = reshape(rows, {n, n, rows.dim(1)});
  return pad(pad(cube, 0, 0, N - n), 1, 0, N - n);
}

}  // namespace detail

/// Assembles F for every ordered pair (s, o) with s, o < n, diagonal
/// included, zero-padded to N x N.
inline RelationMatrixF build_matrix(const EncodedDoc& enc, const Tensor& entities,
                                    PairStrategy strategy, const PairFeatureParams& params,
                                    std::size_t N) {
  const std::size_t n = entities.dim(0);
  if (n > N) {
    throw CapacityError(detail::cat("document has ", n, " entities but the matrix size N is ", N));
  }
  auto [subj, obj] = detail::pair_indices(n);
  Tensor features;
  if (strategy == PairStrategy::Similarity) {
    Tensor es = gather_rows(entities, subj), eo = gather_rows(entities, obj);
    const std::size_t P = n * n;
    Tensor prod = mul(es, eo);
    Tensor cos = reshape(cosine_rows(es, eo), {P, 1});
    Tensor bil = reshape(sum(mul(matmul(es, params.w1), eo), 1), {P, 1});
    if (params.elementwise_similarity) {
      features = concat({prod, cos, bil}, 1);
    } else {
      features = concat({reshape(sum(prod, 1), {P, 1}), cos, bil}, 1);
    }
  } else {
    const std::size_t K = enc.heads(), L = enc.length();
    std::vector<Tensor> attn_rows;
    for (const auto& mentions : enc.mention_index) {
      attn_rows.push_back(reshape(entity_attention(enc, mentions), {1, K * L}));
    }
    Tensor attn = attn_rows.size() == 1 ? attn_rows[0] : concat(attn_rows, 0);
    Tensor prod = mul(gather_rows(attn, subj), gather_rows(attn, obj));
    Tensor a = softmax(sum(reshape(prod, {n * n, K, L}), 1), 1);  // [n*n x L]
    features = linear(matmul(a, enc.hidden), params.w2, params.b2);
  }
  return {detail::pad_pairs(features, n, N), n, strategy};
}

/// Per-cell affine map W3 from D to D'' channels. The bias is applied only to
/// cells inside the n x n entity block, so padding stays exactly zero.
inline RelationMatrixF reduce_channels(const RelationMatrixF& F, const Tensor& w3,
                                       const Tensor& b3) {
  const std::size_t N = F.size(), D = F.channels();
  if (w3.rank() != 2 || w3.dim(0) != D) {
    throw DimensionError(detail::cat("reduce_channels: W3 ", detail::shape_str(w3.shape()),
                                     " does not map ", D, " channels"));
  }
  const std::size_t out_dim = w3.dim(1);
  std::vector<double> mask(N * N, 0.0);
  for (std::size_t s = 0; s < F.n_entities; ++s)
    for (std::size_t o = 0; o < F.n_entities; ++o) mask[s * N + o] = 1.0;
  Tensor cells = matmul(reshape(F.values, {N * N, D}), w3);
  Tensor bias = matmul(Tensor::from({N * N, 1}, std::move(mask)), reshape(b3, {1, out_dim}));
  return {reshape(add(cells, bias), {N, N, out_dim}), F.n_entities, F.strategy};
}

/// Zeroes every cell outside the n x n block; idempotent.
inline RelationMatrixF apply_padding_mask(const RelationMatrixF& F) {
  const std::size_t N = F.size(), D = F.channels();
  std::vector<double> mask(N * N * D, 0.0);
  for (std::size_t s = 0; s < F.n_entities; ++s)
    for (std::size_t o = 0; o < F.n_entities; ++o)
      for (std::size_t c = 0; c < D; ++c) mask[(s * N + o) * D + c] = 1.0;
  return {mul(F.values, Tensor::from(F.values.shape(), std::move(mask))), F.n_entities,
          F.strategy};
}

/// [N x N x D] to channel-first [D x N x N].
inline Tensor to_image(const RelationMatrixF& F) {
  const std::size_t N = F.size(), D = F.channels();
  return reshape(transpose(reshape(F.values, {N * N, D})), {D, N, N});
}

/// Cell vectors of the n x n entity block of a [C x N x N] image, as rows
/// [n*n x C] in (s, o) row-major order.
inline Tensor pair_cells(const Tensor& image, std::size_t n) {
  const std::size_t C = image.dim(0), N = image.dim(1);
  Tensor rows = transpose(reshape(image, {C, N * N}));
  std::vector<std::size_t> idx;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < n; ++o) idx.push_back(s * N + o);
  return gather_rows(rows, idx);
}

/// Writes F as "DUNF", u32 N, u32 D, u32 n_entities, then N*N*D
/// little-endian doubles in (s, o, channel) order.
inline void dump_matrix(const RelationMatrixF& F, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write("DUNF", 4);
  binio::put_u32(out, std::uint32_t(F.size()));
  binio::put_u32(out, std::uint32_t(F.channels()));
  binio::put_u32(out, std::uint32_t(F.n_entities));
  for (double v : F.values.data()) binio::put_f64(out, v);
}

inline RelationMatrixF load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open " + path);
  char magic[4];
  binio::read_exact(in, magic, 4);
  if (std::string(magic, 4) != "DUNF") throw IngestionError(path + ": not a DUNF matrix dump");
  const std::size_t N = binio::get_u32(in), D = binio::get_u32(in), n = binio::get_u32(in);
  std::vector<double> values(N * N * D);
  for (auto& v : values) v = binio::get_f64(in);
  return {Tensor::from({N, N, D}, std::move(values)), n, PairStrategy::Context};
}

}  // namespace docunet
