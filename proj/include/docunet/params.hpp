#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "docunet/tensor.hpp"

namespace docunet {

/// Optimizer parameter group: the encoder and everything downstream of it
/// train with separate learning rates.
enum class ParamGroup { Encoder, Head };

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = true;  // false for biases and normalization offsets
  ParamGroup group = ParamGroup::Head;
};

/// Owns every learnable tensor of a model, in registration order.
class ParamStore {
 public:
  Tensor add(std::string name, Tensor init, bool decay, ParamGroup group) {
    for (const auto& p : params_) {
      if (p.name == name) throw UsageError("duplicate parameter name " + name);
    }
    init.set_requires_grad(true);
    params_.push_back({std::move(name), init, decay, group});
    return init;
  }

  const std::vector<Parameter>& all() const { return params_; }
  std::vector<Parameter>& all() { return params_; }

  const Parameter& get(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p;
    throw UsageError("unknown parameter " + name);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& p : params_) out.push_back(p.name);
    return out;
  }

 private:
  std::vector<Parameter> params_;
};

namespace init {

inline Tensor normal(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v));
}

/// Glorot-uniform for a [fan_in x fan_out] matrix.
inline Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(v));
}

/// He-normal convolution kernel [cout x cin x k x k].
inline Tensor he_kernel(std::size_t cout, std::size_t cin, std::size_t k, std::mt19937_64& rng) {
  return normal({cout, cin, k, k}, std::sqrt(2.0 / double(cin * k * k)), rng);
}

}  // namespace init
}  // namespace docunet
