#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <unordered_map>

#include "cadtrack/tensor.hpp"

namespace cadtrack {

template <typename T>
class Graph;

/// Handle to a value recorded on a Graph. Cheap to copy; only valid while
/// its graph is alive.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  std::size_t numel() const { return value().numel(); }
};

/// Reverse-mode tape. Operations append nodes in execution order;
/// backward() replays adjoints strictly in reverse. A graph is owned by a
/// single thread of execution.
///
/// With gradients disabled the graph only stores values, which is what the
/// tracker uses at inference time.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> v) { return push(std::move(v), nullptr, false, {}); }

  Var<T> input(Tensor<T> v, bool requires_grad = true) {
    return push(std::move(v), nullptr, requires_grad && grad_enabled_, {});
  }

  /// Leaf bound to an externally owned parameter tensor. Repeated calls with
  /// the same tensor return the same node, so gradients accumulate in one
  /// place. The tensor must outlive the graph and stay unmodified.
  Var<T> param(const Tensor<T>& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var<T>{this, it->second};
    auto v = push(Tensor<T>{}, &p, grad_enabled_, {});
    param_ids_.emplace(&p, v.id);
    return v;
  }

  /// Appends an op result. `backward` runs only if some parent requires
  /// gradients and receives d(loss)/d(result).
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward) {
    return record(std::move(value), std::vector<Var<T>>(parents), std::move(backward));
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& parents, BackwardFn backward) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.id].requires_grad;
    }
    if (!needs) backward = nullptr;
    return push(std::move(value), nullptr, needs, std::move(backward));
  }

  bool requires_grad(Var<T> v) const {
    check_owned(v);
    return nodes_[v.id].requires_grad;
  }

  const Tensor<T>& value(Var<T> v) const {
    check_owned(v);
    const auto& n = nodes_[v.id];
    return n.external ? *n.external : n.own;
  }

  /// Gradient buffer of v for accumulation inside backward closures, or
  /// nullptr when v does not require gradients.
  Tensor<T>* grad_buffer(Var<T> v) {
    auto& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
    return &n.grad;
  }

  void accumulate(Var<T> v, const Tensor<T>& g) {
    if (auto* buf = grad_buffer(v)) {
      if (buf->shape() != g.shape()) throw dim_error("accumulate", buf->shape(), g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) (*buf)[i] += g[i];
    }
  }

  void backward(Var<T> loss) {
    if (loss.graph != this) throw std::invalid_argument("backward: loss is not on this tape");
    if (value(loss).numel() != 1) {
      throw DimensionError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
    }
    if (!grad_enabled_) throw std::logic_error("backward: gradients are disabled on this tape");
    if (!nodes_[loss.id].requires_grad) return;
    grad_buffer(loss)->fill(T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(n.grad);
    }
  }

  /// d(loss)/dv after backward(); exactly zero when v is off every path to the loss.
  Tensor<T> grad(Var<T> v) const {
    check_owned(v);
    const auto& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor<T>(value(v).shape());
    return n.grad;
  }

  Tensor<T> param_grad(const Tensor<T>& p) const {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return grad(Var<T>{const_cast<Graph*>(this), it->second});
    return Tensor<T>(p.shape());
  }

 private:
  struct Node {
    Tensor<T> own;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var<T> v) const {
    if (v.graph != this || v.id >= nodes_.size()) throw std::invalid_argument("Var does not belong to this tape");
  }

  Var<T> push(Tensor<T> v, const Tensor<T>* ext, bool req, BackwardFn fn) {
    Node n;
    n.own = std::move(v);
    n.external = ext;
    n.requires_grad = req;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> param_ids_;
};

}  // namespace cadtrack
