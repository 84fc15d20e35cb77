#pragma once

#include <cmath>
#include <random>

#include "descrl/tensor/tensor.hpp"

namespace descrl::tensor {

using Rng = std::mt19937_64;

/// Xavier/Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <typename Real>
Tensor<Real> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<Real> t(std::move(shape));
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  for (Real& v : t.data()) v = static_cast<Real>(dist(rng));
  return t;
}

template <typename Real>
Tensor<Real> normal(Shape shape, double stddev, Rng& rng) {
  Tensor<Real> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Real& v : t.data()) v = static_cast<Real>(dist(rng));
  return t;
}

}  // namespace descrl::tensor
