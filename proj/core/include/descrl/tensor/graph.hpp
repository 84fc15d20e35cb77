#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "descrl/tensor/parameters.hpp"
#include "descrl/tensor/tensor.hpp"

namespace descrl::tensor {

template <typename Real>
class Graph;

/// Handle to a node on a Graph tape.
template <typename Real>
struct Var {
  Graph<Real>* graph = nullptr;
  int id = -1;

  const Tensor<Real>& value() const { return graph->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order,
/// so every node's parents precede it and reverse insertion order is a valid
/// backward schedule. Parameter values are referenced, not copied; the
/// ParameterSet must outlive the graph and stay unmodified while it is alive.
template <typename Real>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(const ParameterSet<Real>& params);

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Non-differentiable input.
  Var<Real> constant(Tensor<Real> value, std::string_view name = "input");
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var<Real> param(ParamId id);
  Var<Real> param(std::string_view name) { return param(params_->id(name)); }

  /// Treat the parameter as a constant: no gradient flows into it and
  /// backward reports zeros for it.
  void freeze(ParamId id);

  const Tensor<Real>& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::string_view op_name(int id) const { return nodes_[id].op; }
  std::size_t node_count() const { return nodes_.size(); }
  const ParameterSet<Real>& parameters() const { return *params_; }

  /// Appends a node. Used by op implementations.
  Var<Real> record(std::string_view op, Tensor<Real> value,
                   std::vector<int> parents, BackwardFn backward);

  /// Throws ShapeError naming the node about to be created.
  [[noreturn]] void fail(std::string_view op, const std::string& what) const;

  /// Gradient of the node during backward; empty tensor if none arrived.
  const Tensor<Real>& grad(int id) const { return grads_[id]; }
  /// Gradient accumulator of a parent, zero-initialised on first access.
  Tensor<Real>& grad_acc(int id);

  /// Reverse pass from a scalar loss. Returns one gradient per parameter
  /// (zeros for parameters the loss does not reach).
  Gradients<Real> backward(Var<Real> loss);

 private:
  struct Node {
    Tensor<Real> owned;
    const Tensor<Real>* ref = nullptr;
    std::vector<int> parents;
    BackwardFn backward;
    std::string_view op;
    long param = -1;
    bool requires_grad = false;
  };

  const ParameterSet<Real>* params_;
  std::vector<Node> nodes_;
  std::vector<int> param_nodes_;
  std::vector<bool> frozen_;
  std::vector<Tensor<Real>> grads_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace descrl::tensor
