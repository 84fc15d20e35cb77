#include "descrl/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace descrl::tensor {
namespace {

double evaluate(ParameterSet<double>& params, const LossBuilder& loss) {
  Graph<double> g(params);
  return loss(g).value().item();
}

}  // namespace

GradientCheckResult gradient_check(ParameterSet<double>& params, const LossBuilder& loss,
                                   GradientCheckOptions options) {
  Gradients<double> analytic;
  {
    Graph<double> g(params);
    Var<double> l = loss(g);
    analytic = g.backward(l);
  }
  std::mt19937_64 rng(options.seed);
  GradientCheckResult result;
  for (ParamId id = 0; id < params.size(); ++id) {
    Tensor<double>& p = params.value(id);
    std::vector<std::size_t> entries(p.size());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_param > 0 && entries.size() > options.max_entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_param);
    }
    for (std::size_t i : entries) {
      const double saved = p[i];
      p[i] = saved + options.step;
      const double up = evaluate(params, loss);
      p[i] = saved - options.step;
      const double down = evaluate(params, loss);
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[id][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++result.probed;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = params.name(id);
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace descrl::tensor
