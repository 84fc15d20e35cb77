#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "descrl/tensor/parameters.hpp"

namespace descrl::tensor {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter in the same
/// order as the ParameterSet it was created for.
template <typename Real>
class Adam {
 public:
  Adam(const ParameterSet<Real>& params, AdamConfig config);

  /// Applies one update to the parameters listed in `trainable` (all when
  /// empty). Refuses the whole update, leaving parameters and state
  /// untouched, if any selected gradient is not finite.
  void step(ParameterSet<Real>& params, const Gradients<Real>& grads,
            std::span<const ParamId> trainable = {});

  std::uint64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }
  const Tensor<Real>& first_moment(ParamId id) const { return m_.at(id); }
  const Tensor<Real>& second_moment(ParamId id) const { return v_.at(id); }

 private:
  AdamConfig config_;
  std::vector<Tensor<Real>> m_;
  std::vector<Tensor<Real>> v_;
  std::uint64_t step_ = 0;
};

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename Real>
double clip_grad_norm(Gradients<Real>& grads, double max_norm);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace descrl::tensor
