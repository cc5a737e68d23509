#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "winnorm/tensor.hpp"

namespace winnorm {

/// A value on (or off) the tape. Parameters are long-lived nodes owned by a model;
/// intermediates are owned by the tape that produced them.
template <typename T>
struct Node {
  Tensor4<T> value;
  Tensor4<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;

  Tensor4<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor4<T>(value.dims());
    return grad;
  }
  void zero_grad() { grad = Tensor4<T>(); }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_node(Tensor4<T> value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

template <typename T>
class Tape;

/// Handle to a node plus the tape it is recorded on.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(NodePtr<T> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  const Tensor4<T>& value() const { return node_->value; }
  const Dims& dims() const { return node_->value.dims(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Tensor4<T>& grad() const { return node_->grad; }
  /// Scalar value of a 1 x 1 x 1 x 1 node.
  T item() const { return node_->value[0]; }

  Tape<T>& tape() const { return *tape_; }
  const NodePtr<T>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr<T> node_;
  Tape<T>* tape_ = nullptr;
};

/// Records primitive applications in execution order; backward() replays their
/// vector-Jacobian products in exact reverse order.
template <typename T>
class Tape {
 public:
  using Vjp = std::function<void(const Tensor4<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor4<T> value) { return Var<T>(make_node(std::move(value), false), this); }
  Var<T> leaf(Tensor4<T> value, bool requires_grad = true) {
    return Var<T>(make_node(std::move(value), requires_grad), this);
  }
  /// Wraps a persistent node (e.g. a model parameter) without copying it.
  Var<T> watch(const NodePtr<T>& node) { return Var<T>(node, this); }

  /// Output node for a primitive; it tracks gradients only when recording and some input does.
  Var<T> result(Tensor4<T> value, bool any_input_requires_grad) {
    return Var<T>(make_node(std::move(value), grad_enabled_ && any_input_requires_grad), this);
  }
  void record(const Var<T>& out, Vjp vjp) {
    if (out.requires_grad()) records_.push_back(Record{out.node(), std::move(vjp)});
  }

  /// Accumulates d(loss)/d(leaf) into every leaf that requires grad. Gradients of
  /// intermediate results are released as soon as their last VJP has run unless
  /// retain_intermediate is set.
  void backward(const Var<T>& loss, bool retain_intermediate = false) {
    if (loss.value().size() != 1) throw ShapeError("backward() needs a scalar loss, got " + loss.dims().str());
    for (auto& rec : records_) rec.out->zero_grad();
    if (!loss.requires_grad()) return;
    // Earliest record per output node; replay reaches it last.
    std::unordered_map<const Node<T>*, std::size_t> first;
    for (std::size_t i = records_.size(); i-- > 0;) first[records_[i].out.get()] = i;
    loss.node()->grad_buffer()[0] += T{1};
    for (std::size_t i = records_.size(); i-- > 0;) {
      Record& rec = records_[i];
      if (rec.out->grad.empty()) continue;
      rec.vjp(rec.out->grad);
      if (!retain_intermediate && first[rec.out.get()] == i) rec.out->zero_grad();
    }
  }

  bool grad_enabled() const noexcept { return grad_enabled_; }
  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
  std::size_t size() const noexcept { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  struct Record {
    NodePtr<T> out;
    Vjp vjp;
  };
  std::vector<Record> records_;
  bool grad_enabled_ = true;
};

template <typename T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<T>& tape) : tape_(tape), prev_(tape.grad_enabled()) { tape_.set_grad_enabled(false); }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>& tape_;
  bool prev_;
};

}  // namespace winnorm
