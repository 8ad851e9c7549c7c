#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "docunet/params.hpp"

namespace docunet {

/// Linear warmup from 0 to 1 over the first `warmup` fraction of steps,
/// then linear decay back to 0 at `total`.
inline double lr_schedule(std::size_t step, std::size_t total, double warmup = 0.06) {
  if (total == 0) return 0.0;
  step = std::min(step, total);
  const double w = warmup * double(total);
  const double t = double(step);
  if (t < w) return t / w;
  if (w >= double(total)) return 1.0;
  return std::max(0.0, (double(total) - t) / (double(total) - w));
}

inline double global_grad_norm(const ParamStore& store) {
  double sq = 0.0;
  for (const auto& p : store.all())
    if (p.value.has_grad())
      for (double g : p.value.grad_view()) sq += g * g;
  return std::sqrt(sq);
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping was needed).
inline double clip_gradients(ParamStore& store, double max_norm = 1.0) {
  const double norm = global_grad_norm(store);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto& p : store.all())
    if (p.value.has_grad())
      for (auto& g : p.value.mutable_grad()) g *= factor;
  return factor;
}

struct AdamWConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 5e-4;
};

/// AdamW with decoupled weight decay, skipped for parameters flagged as
/// biases. Moments are kept in parameter registration order.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamStore& store, AdamWConfig cfg) : cfg_(cfg) {
    for (const auto& p : store.all()) {
      m_.emplace_back(p.value.numel(), 0.0);
      v_.emplace_back(p.value.numel(), 0.0);
    }
  }

  /// One update with per-group learning rates (encoder, head).
  void step(ParamStore& store, double lr_encoder, double lr_head) {
    auto& params = store.all();
    if (params.size() != m_.size()) throw UsageError("AdamW: parameter set changed");
    for (const auto& p : params) {
      if (!p.value.has_grad()) continue;
      for (double g : p.value.grad_view()) {
        if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter " + p.name);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      const double lr = p.group == ParamGroup::Encoder ? lr_encoder : lr_head;
      auto w = p.value.mutable_data();
      const bool has = p.value.has_grad();
      auto g = p.value.grad_view();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = has ? g[j] : 0.0;
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * gj;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * gj * gj;
        const double mhat = m_[i][j] / bc1, vhat = v_[i][j] / bc2;
        if (p.decay) w[j] -= lr * cfg_.weight_decay * w[j];
        w[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace docunet
