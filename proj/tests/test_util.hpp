#pragma once

#include <random>

#include "docunet/params.hpp"

namespace docunet::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Adds noise to every parameter so zero-initialized biases do not leave
// relu inputs sitting exactly on the kink, where central differences lie.
inline void jitter(ParamStore& store, std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& p : store.all())
    for (auto& v : p.value.mutable_data()) v += dist(rng);
}

}  // namespace docunet::testing
