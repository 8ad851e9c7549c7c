#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "docunet/tensor.hpp"

namespace docunet {

struct GradCheckOptions {
  double eps = 1e-5;
  // Denominator floor: err = |analytic - numeric| / max(|analytic|, |numeric|, floor).
  // Central differences in double precision carry ~1e-10 of roundoff, so
  // gradients below the floor are effectively held to an absolute tolerance
  // of tol * floor instead of a relative one.
  double floor = 1e-3;
  // An entry whose error exceeds this is re-measured with a step of eps / 100
  // and the smaller error is kept. A relu or max-pool kink inside the probe
  // interval spoils the estimate at one step but not at a much smaller one;
  // a wrong gradient is wrong at every step.
  double retry_above = 1e-5;
  // 0 checks every entry; otherwise at most this many entries per tensor
  // (always including the entry with the largest analytic gradient).
  std::size_t max_entries_per_tensor = 0;
  unsigned seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::string worst;  // "<tensor label>[index] analytic=.. numeric=.."
};

/// Compares reverse-mode gradients of `loss_fn` with central differences.
///
/// `loss_fn` must rebuild the computation from the given leaves each call and
/// return a scalar. Leaves are restored to their original values afterwards.
inline GradCheckResult check_gradients(const std::function<Tensor()>& loss_fn,
                                       std::vector<Tensor> leaves,
                                       const std::vector<std::string>& labels = {},
                                       const GradCheckOptions& opts = {}) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }

  auto eval = [&] {
    NoGradScope no_grad;
    return loss_fn().item();
  };

  GradCheckResult result;
  std::mt19937 rng(opts.seed);
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    auto analytic = leaves[t].grad();
    auto values = leaves[t].mutable_data();
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_entries_per_tensor && idx.size() > opts.max_entries_per_tensor) {
      auto largest = std::max_element(analytic.begin(), analytic.end(), [](double a, double b) {
                       return std::abs(a) < std::abs(b);
                     }) - analytic.begin();
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_entries_per_tensor - 1);
      idx.push_back(std::size_t(largest));
    }
    for (std::size_t i : idx) {
      const double saved = values[i];
      auto measure = [&](double eps, double& numeric) {
        values[i] = saved + eps;
        const double up = eval();
        values[i] = saved - eps;
        const double down = eval();
        values[i] = saved;
        numeric = (up - down) / (2 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opts.floor});
        return std::abs(analytic[i] - numeric) / denom;
      };
      double numeric = 0;
      double err = measure(opts.eps, numeric);
      if (err > opts.retry_above) {
        double fine = 0;
        const double fine_err = measure(opts.eps / 100, fine);
        if (fine_err < err) err = fine_err, numeric = fine;
      }
      ++result.entries_checked;
      if (err > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error) {
          std::string label = t < labels.size() ? labels[t] : "leaf" + std::to_string(t);
          result.worst = label + "[" + std::to_string(i) + "] analytic=" +
                         std::to_string(analytic[i]) + " numeric=" + std::to_string(numeric);
        }
      }
    }
  }
  return result;
}

}  // namespace docunet
