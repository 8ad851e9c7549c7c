#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "docunet/ops.hpp"
#include "docunet/params.hpp"

namespace docunet {

enum class CombineMode { Concat, Add };
enum class LossKind { Balanced, BCE };

inline const char* to_string(CombineMode m) { return m == CombineMode::Concat ? "concat" : "add"; }
inline const char* to_string(LossKind k) { return k == LossKind::Balanced ? "balanced" : "bce"; }

struct PairHeadConfig {
  std::size_t entity_dim = 64;
  std::size_t cell_dim = 16;  // channels of the segmentation output
  std::size_t hidden_dim = 64;
  std::size_t num_relations = 1;
  CombineMode combine = CombineMode::Concat;
};

/// Projects both entities together with their matrix cell and scores every
/// relation with a per-relation bilinear form plus bias.
class PairHead {
 public:
  PairHead() = default;
  PairHead(const PairHeadConfig& cfg, ParamStore& store, std::mt19937_64& rng,
           const std::string& name = "head")
      : cfg_(cfg) {
    if (cfg.num_relations == 0) throw ConfigError("pair head needs at least one relation");
    if (cfg.hidden_dim == 0 || cfg.entity_dim == 0 || cfg.cell_dim == 0) {
      throw ConfigError("pair head dimensions must be positive");
    }
    const std::size_t d = cfg.entity_dim, c = cfg.cell_dim, z = cfg.hidden_dim;
    const std::size_t in = cfg.combine == CombineMode::Concat ? d + c : d;
    auto H = ParamGroup::Head;
    ws_ = store.add(name + ".ws", init::glorot(in, z, rng), true, H);
    bs_ = store.add(name + ".bs", Tensor::zeros({z}), false, H);
    wo_ = store.add(name + ".wo", init::glorot(in, z, rng), true, H);
    bo_ = store.add(name + ".bo", Tensor::zeros({z}), false, H);
    if (cfg.combine == CombineMode::Add) {
      wy_ = store.add(name + ".wy", init::glorot(c, z, rng), true, H);
    }
    // Relation r occupies columns [r*z, (r+1)*z).
    wr_ = store.add(name + ".wr",
                    init::normal({z, cfg.num_relations * z}, 1.0 / double(z), rng), true, H);
    br_ = store.add(name + ".br", Tensor::zeros({cfg.num_relations}), false, H);
  }

  const PairHeadConfig& config() const { return cfg_; }

  /// Scores for P pairs: subjects [P x d], objects [P x d], cells [P x C] -> [P x R].
  Tensor scores(const Tensor& subjects, const Tensor& objects, const Tensor& cells) const {
    const std::size_t P = subjects.dim(0), z = cfg_.hidden_dim, R = cfg_.num_relations;
    if (objects.dim(0) != P || cells.dim(0) != P) {
      throw DimensionError(detail::cat("pair head: row counts ", P, ", ", objects.dim(0), ", ",
                                       cells.dim(0), " differ"));
    }
    Tensor zs, zo;
    if (cfg_.combine == CombineMode::Concat) {
      zs = tanh(linear(concat({subjects, cells}, 1), ws_, bs_));
      zo = tanh(linear(concat({objects, cells}, 1), wo_, bo_));
    } else {
      Tensor y = matmul(cells, wy_);
      zs = tanh(add(linear(subjects, ws_, bs_), y));
      zo = tanh(add(linear(objects, wo_, bo_), y));
    }
    Tensor left = matmul(zs, wr_);  // [P x R*z]
    Tensor right = R == 1 ? zo : concat(std::vector<Tensor>(R, zo), 1);
    return add_bias(sum(reshape(mul(left, right), {P, R, z}), 2), br_);
  }

  /// Scores of a single pair, [R].
  Tensor pair_logits(const Tensor& subject, const Tensor& object, const Tensor& cell) const {
    Tensor s = scores(reshape(subject, {1, subject.numel()}), reshape(object, {1, object.numel()}),
                      reshape(cell, {1, cell.numel()}));
    return reshape(s, {cfg_.num_relations});
  }

 private:
  PairHeadConfig cfg_;
  Tensor ws_, bs_, wo_, bo_, wy_, wr_, br_;
};

/// Per-row balanced softmax loss with a zero threshold:
///   log(1 + sum_{neg} e^{s_i}) + log(1 + sum_{pos} e^{-s_j}).
/// `scores` is [P x R]; `gold` holds 0/1 indicators in the same layout.
inline Tensor balanced_softmax_rows(const Tensor& scores, const std::vector<double>& gold) {
  if (scores.rank() != 2 || gold.size() != scores.numel()) {
    throw DimensionError(detail::cat("balanced softmax: scores ", detail::shape_str(scores.shape()),
                                     " and ", gold.size(), " labels"));
  }
  const std::size_t P = scores.dim(0), R = scores.dim(1);
  auto S = scores.data();
  std::vector<double> out(P), mneg(P), mpos(P), zneg(P), zpos(P);
  for (std::size_t p = 0; p < P; ++p) {
    // Each term is a logsumexp over {0} and the signed scores of one class.
    double a = 0.0, b = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      const double s = S[p * R + r];
      if (gold[p * R + r] > 0.5) b = std::max(b, -s); else a = std::max(a, s);
    }
    double za = std::exp(-a), zb = std::exp(-b);
    for (std::size_t r = 0; r < R; ++r) {
      const double s = S[p * R + r];
      if (gold[p * R + r] > 0.5) zb += std::exp(-s - b); else za += std::exp(s - a);
    }
    mneg[p] = a, mpos[p] = b, zneg[p] = za, zpos[p] = zb;
    out[p] = a + std::log(za) + b + std::log(zb);
  }
  auto sn = scores.node();
  return detail::make_result(
      {P}, std::move(out), scores.requires_grad(),
      [sn, gold, mneg, mpos, zneg, zpos, R](detail::TensorNode& o) {
        if (!sn->requires_grad) return;
        sn->ensure_grad();
        for (std::size_t p = 0; p < o.data.size(); ++p)
          for (std::size_t r = 0; r < R; ++r) {
            const double s = sn->data[p * R + r];
            const double g = gold[p * R + r] > 0.5 ? -std::exp(-s - mpos[p]) / zpos[p]
                                                   : std::exp(s - mneg[p]) / zneg[p];
            sn->grad[p * R + r] += o.grad[p] * g;
          }
      });
}

/// Balanced softmax loss of one pair's scores [R] against a gold relation set.
inline Tensor balanced_softmax_loss(const Tensor& scores, const std::vector<std::size_t>& gold) {
  const std::size_t R = scores.numel();
  std::vector<double> y(R, 0.0);
  for (auto r : gold) {
    if (r >= R) throw DataError(detail::cat("gold relation ", r, " out of range for R=", R));
    y[r] = 1.0;
  }
  return reshape(balanced_softmax_rows(reshape(scores, {1, R}), y), {1});
}

/// Per-row binary cross-entropy summed over relations, [P].
inline Tensor bce_rows(const Tensor& scores, const std::vector<double>& gold) {
  if (gold.size() != scores.numel()) throw DimensionError("bce: label count mismatch");
  Tensor y = Tensor::from(scores.shape(), gold);
  return sum(sub(log1p_exp(scores), mul(y, scores)), 1);
}

inline Tensor pair_losses(const Tensor& scores, const std::vector<double>& gold, LossKind kind) {
  return kind == LossKind::Balanced ? balanced_softmax_rows(scores, gold) : bce_rows(scores, gold);
}

/// Mean loss over the pairs with include[p] set, summed in row order.
inline Tensor batch_loss(const Tensor& scores, const std::vector<double>& gold,
                         const std::vector<bool>& include, LossKind kind = LossKind::Balanced) {
  const std::size_t P = scores.dim(0);
  if (include.size() != P) throw DimensionError("batch_loss: mask length mismatch");
  std::vector<std::size_t> rows;
  for (std::size_t p = 0; p < P; ++p)
    if (include[p]) rows.push_back(p);
  if (rows.empty()) throw DataError("batch_loss: no pairs included in the loss");
  const std::size_t R = scores.dim(1);
  std::vector<double> picked;
  picked.reserve(rows.size() * R);
  for (auto p : rows) picked.insert(picked.end(), gold.begin() + p * R, gold.begin() + (p + 1) * R);
  Tensor losses = pair_losses(gather_rows(scores, rows), picked, kind);
  return scale(reduce_sum(losses), 1.0 / double(rows.size()));
}

/// Relations whose score clears the zero threshold; empty means no relation.
inline std::vector<std::size_t> decode(std::span<const double> scores) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < scores.size(); ++r)
    if (scores[r] > 0.0) out.push_back(r);
  return out;
}

}  // namespace docunet
