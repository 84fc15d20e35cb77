#include "descrl/tensor/adam.hpp"

#include <cmath>
#include <string>

namespace descrl::tensor {

template <typename Real>
Adam<Real>::Adam(const ParameterSet<Real>& params, AdamConfig config) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (ParamId i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(i).shape());
    v_.emplace_back(params.value(i).shape());
  }
}

template <typename Real>
void Adam<Real>::step(ParameterSet<Real>& params, const Gradients<Real>& grads,
                      std::span<const ParamId> trainable) {
  if (grads.size() != params.size() || m_.size() != params.size()) {
    throw ShapeError("adam: gradient count does not match parameter count");
  }
  std::vector<ParamId> ids(trainable.begin(), trainable.end());
  if (ids.empty()) ids = params.all_ids();
  for (ParamId id : ids) {
    if (grads[id].shape() != params.value(id).shape()) {
      throw ShapeError("adam: gradient shape mismatch for '" + params.name(id) + "'");
    }
    if (!grads[id].all_finite()) {
      throw NumericError("adam: non-finite gradient for '" + params.name(id) +
                         "', update refused");
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (ParamId id : ids) {
    Tensor<Real>& p = params.value(id);
    Tensor<Real>& m = m_[id];
    Tensor<Real>& v = v_[id];
    const Tensor<Real>& g = grads[id];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = static_cast<Real>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<Real>(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
      const double mhat = c1 > 0 ? m[i] / c1 : m[i];
      const double vhat = c2 > 0 ? v[i] / c2 : v[i];
      p[i] = static_cast<Real>(p[i] - config_.lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

template <typename Real>
double clip_grad_norm(Gradients<Real>& grads, double max_norm) {
  double sq = 0;
  for (const auto& g : grads) {
    for (Real v : g.data()) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const Real s = static_cast<Real>(max_norm / (norm + 1e-6));
    for (auto& g : grads) {
      for (Real& v : g.data()) v *= s;
    }
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm(Gradients<float>&, double);
template double clip_grad_norm(Gradients<double>&, double);

}  // namespace descrl::tensor
