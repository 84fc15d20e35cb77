#include "descrl/tensor/graph.hpp"

#include <sstream>

namespace descrl::tensor {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Real>
Graph<Real>::Graph(const ParameterSet<Real>& params)
    : params_(&params),
      param_nodes_(params.size(), -1),
      frozen_(params.size(), false) {
  nodes_.reserve(256);
}

template <typename Real>
Var<Real> Graph<Real>::constant(Tensor<Real> value, std::string_view name) {
  Node n;
  n.owned = std::move(value);
  n.op = name;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename Real>
Var<Real> Graph<Real>::param(ParamId id) {
  if (id >= param_nodes_.size()) {
    throw std::out_of_range("graph: parameter id out of range");
  }
  if (param_nodes_[id] >= 0) return {this, param_nodes_[id]};
  Node n;
  n.ref = &params_->value(id);
  n.op = "param";
  n.param = static_cast<long>(id);
  n.requires_grad = !frozen_[id];
  nodes_.push_back(std::move(n));
  param_nodes_[id] = static_cast<int>(nodes_.size() - 1);
  return {this, param_nodes_[id]};
}

template <typename Real>
void Graph<Real>::freeze(ParamId id) {
  frozen_.at(id) = true;
  if (param_nodes_[id] >= 0) nodes_[param_nodes_[id]].requires_grad = false;
}

template <typename Real>
const Tensor<Real>& Graph<Real>::value(int id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

template <typename Real>
Var<Real> Graph<Real>::record(std::string_view op, Tensor<Real> value,
                              std::vector<int> parents, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  n.op = op;
  for (int p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename Real>
void Graph<Real>::fail(std::string_view op, const std::string& what) const {
  throw ShapeError("node #" + std::to_string(nodes_.size()) + " (" +
                   std::string(op) + "): " + what);
}

template <typename Real>
Tensor<Real>& Graph<Real>::grad_acc(int id) {
  Tensor<Real>& g = grads_[id];
  if (g.empty() && value(id).size() > 0) g = Tensor<Real>(value(id).shape());
  return g;
}

template <typename Real>
Gradients<Real> Graph<Real>::backward(Var<Real> loss) {
  if (loss.graph != this) throw std::invalid_argument("backward: foreign node");
  const Tensor<Real>& lv = value(loss.id);
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_to_string(lv.shape()));
  }
  grads_.assign(nodes_.size(), Tensor<Real>());
  grads_[loss.id] = Tensor<Real>(lv.shape(), Real{1});
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || grads_[i].empty() || !n.backward) continue;
    n.backward(*this, i);
  }
  Gradients<Real> out;
  out.reserve(params_->size());
  for (ParamId p = 0; p < params_->size(); ++p) {
    const int node = param_nodes_[p];
    if (node >= 0 && node <= loss.id && !frozen_[p] && !grads_[node].empty()) {
      out.push_back(std::move(grads_[node]));
    } else {
      out.emplace_back(params_->value(p).shape());
    }
  }
  grads_.clear();
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace descrl::tensor
