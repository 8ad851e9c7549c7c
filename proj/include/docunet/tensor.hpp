#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "docunet/errors.hpp"

namespace docunet {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool is_leaf = true;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

using NodePtr = std::shared_ptr<TensorNode>;

}  // namespace detail

/// Dense row-major array of doubles with optional gradient tracking.
///
/// A Tensor is a cheap handle. Values produced by operations are never
/// modified afterwards, so sharing the underlying buffer between handles is
/// not observable. Leaves (parameters, inputs) may be updated in place through
/// mutable_data() between training steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values) {
    if (numel_of(shape) != values.size()) {
      throw DimensionError(detail::cat("tensor shape ", detail::shape_str(shape),
                                       " does not hold ", values.size(), " values"));
    }
    for (auto extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive");
    }
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->data = std::move(values);
    return t;
  }
  static Tensor full(Shape shape, double value) {
    auto n = numel_of(shape);
    return from(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return from({1}, {value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::vector<double> values() const { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double item() const {
    if (numel() != 1) {
      throw UsageError(detail::cat("item() on tensor of shape ", detail::shape_str(shape())));
    }
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  Tensor& set_requires_grad(bool flag) {
    if (!node_->is_leaf) throw UsageError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = flag;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; zeros when no gradient has reached this tensor.
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
  }
  /// Gradient without copying; empty when no gradient has been accumulated.
  std::span<const double> grad_view() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// In-place access for leaves only.
  std::span<double> mutable_data() {
    if (!node_->is_leaf) throw UsageError("mutable_data() is only available on leaf tensors");
    return node_->data;
  }

  /// Deep copy without gradient history.
  Tensor detach() const { return from(shape(), node_->data); }

  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

/// Ordered record of executed differentiable operations.
class Tape {
 public:
  struct Entry {
    detail::NodePtr output;
    std::function<void(detail::TensorNode&)> backward;
  };

  void record(detail::NodePtr output, std::function<void(detail::TensorNode&)> backward) {
    entries_.push_back({std::move(output), std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Reverse pass from a scalar loss. Leaf gradients accumulate across calls.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw UsageError("backward() requires a scalar loss");
    }
    if (!loss.requires_grad()) {
      throw UsageError("backward(): loss does not depend on any tensor requiring grad");
    }
    for (auto& entry : entries_) entry.output->grad.clear();
    auto& root = *loss.node();
    if (root.is_leaf) {
      root.ensure_grad();
      root.grad[0] += 1.0;
      return;
    }
    root.grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward(*it->output);
    }
  }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<Entry> entries_;
};

/// Makes a tape the recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(Tape::active()) { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording; operations inside produce plain values.
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape::active()) { Tape::active() = nullptr; }
  ~NoGradScope() { Tape::active() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

inline void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw UsageError("backward() called with no active tape");
  tape->backward(loss);
}

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

/// Wraps freshly computed values as an op output and records the backward
/// closure when a tape is active and some input requires grad.
template <typename Backward>
Tensor make_result(Shape shape, std::vector<double> values, bool needs_grad, Backward&& bw) {
  Tensor out = Tensor::from(std::move(shape), std::move(values));
  Tape* tape = Tape::active();
  if (needs_grad && tape) {
    out.node()->requires_grad = true;
    out.node()->is_leaf = false;
    tape->record(out.node(), std::forward<Backward>(bw));
  }
  return out;
}

}  // namespace detail
}  // namespace docunet
