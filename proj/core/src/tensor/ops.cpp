#include "descrl/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace descrl::tensor {
namespace {

template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using CMap = Eigen::Map<const Mat<Real>>;
template <typename Real>
using MMap = Eigen::Map<Mat<Real>>;

template <typename Real>
CMap<Real> as_matrix(const Tensor<Real>& t, std::size_t rows, std::size_t cols) {
  return CMap<Real>(t.raw(), static_cast<Eigen::Index>(rows),
                    static_cast<Eigen::Index>(cols));
}

template <typename Real>
MMap<Real> as_matrix(Tensor<Real>& t, std::size_t rows, std::size_t cols) {
  return MMap<Real>(t.raw(), static_cast<Eigen::Index>(rows),
                    static_cast<Eigen::Index>(cols));
}

template <typename Real>
Graph<Real>& graph_of(Var<Real> v) {
  if (!v.valid()) throw std::invalid_argument("op on invalid Var");
  return *v.graph;
}

template <typename Real>
void same_graph(Var<Real> a, Var<Real> b, std::string_view op) {
  if (a.graph != b.graph) graph_of(a).fail(op, "operands live on different graphs");
}

template <typename Real>
void require_same_shape(Var<Real> a, Var<Real> b, std::string_view op) {
  same_graph(a, b, op);
  if (a.shape() != b.shape()) {
    graph_of(a).fail(op, "shape mismatch " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
  }
}

// Applies f elementwise and records df/dx (as a function of x and y).
template <typename Real, typename F, typename DF>
Var<Real> unary(std::string_view op, Var<Real> x, F f, DF df) {
  Graph<Real>& g = graph_of(x);
  const Tensor<Real>& xv = x.value();
  Tensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const int xi = x.id;
  return g.record(op, std::move(out), {xi}, [xi, df](Graph<Real>& gr, int self) {
    if (!gr.requires_grad(xi)) return;
    const Tensor<Real>& gy = gr.grad(self);
    const Tensor<Real>& xv2 = gr.value(xi);
    const Tensor<Real>& yv = gr.value(self);
    Tensor<Real>& gx = gr.grad_acc(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xv2[i], yv[i]);
  });
}

}  // namespace

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  require_same_shape(a, b, "add");
  Tensor<Real> out = a.value();
  const Tensor<Real>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const int ai = a.id, bi = b.id;
  return graph_of(a).record("add", std::move(out), {ai, bi},
                            [ai, bi](Graph<Real>& g, int self) {
                              const Tensor<Real>& gy = g.grad(self);
                              for (int p : {ai, bi}) {
                                if (!g.requires_grad(p)) continue;
                                Tensor<Real>& gp = g.grad_acc(p);
                                for (std::size_t i = 0; i < gy.size(); ++i) gp[i] += gy[i];
                              }
                            });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  require_same_shape(a, b, "sub");
  Tensor<Real> out = a.value();
  const Tensor<Real>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const int ai = a.id, bi = b.id;
  return graph_of(a).record("sub", std::move(out), {ai, bi},
                            [ai, bi](Graph<Real>& g, int self) {
                              const Tensor<Real>& gy = g.grad(self);
                              if (g.requires_grad(ai)) {
                                Tensor<Real>& ga = g.grad_acc(ai);
                                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
                              }
                              if (g.requires_grad(bi)) {
                                Tensor<Real>& gb = g.grad_acc(bi);
                                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
                              }
                            });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  require_same_shape(a, b, "mul");
  Tensor<Real> out = a.value();
  const Tensor<Real>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const int ai = a.id, bi = b.id;
  return graph_of(a).record("mul", std::move(out), {ai, bi},
                            [ai, bi](Graph<Real>& g, int self) {
                              const Tensor<Real>& gy = g.grad(self);
                              if (g.requires_grad(ai)) {
                                const Tensor<Real>& bv2 = g.value(bi);
                                Tensor<Real>& ga = g.grad_acc(ai);
                                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv2[i];
                              }
                              if (g.requires_grad(bi)) {
                                const Tensor<Real>& av2 = g.value(ai);
                                Tensor<Real>& gb = g.grad_acc(bi);
                                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av2[i];
                              }
                            });
}

template <typename Real>
Var<Real> scale(Var<Real> x, double factor) {
  const Real c = static_cast<Real>(factor);
  return unary<Real>(
      "scale", x, [c](Real v) { return v * c; }, [c](Real, Real) { return c; });
}

template <typename Real>
Var<Real> add_broadcast(Var<Real> x, Var<Real> y) {
  same_graph(x, y, "add_broadcast");
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() ||
      !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<long>(ys.size()))) {
    graph_of(x).fail("add_broadcast", "cannot broadcast " + shape_to_string(ys) +
                                          " onto " + shape_to_string(xs));
  }
  const std::size_t inner = y.value().size();
  Tensor<Real> out = x.value();
  const Tensor<Real>& yv = y.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i % inner];
  const int xi = x.id, yi = y.id;
  return graph_of(x).record("add_broadcast", std::move(out), {xi, yi},
                            [xi, yi, inner](Graph<Real>& g, int self) {
                              const Tensor<Real>& gy = g.grad(self);
                              if (g.requires_grad(xi)) {
                                Tensor<Real>& gx = g.grad_acc(xi);
                                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                              }
                              if (g.requires_grad(yi)) {
                                Tensor<Real>& gyy = g.grad_acc(yi);
                                for (std::size_t i = 0; i < gy.size(); ++i) gyy[i % inner] += gy[i];
                              }
                            });
}

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  same_graph(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    graph_of(a).fail("matmul", "incompatible shapes " + shape_to_string(as) +
                                   " x " + shape_to_string(bs));
  }
  const std::size_t n = as[0], k = as[1], m = bs[1];
  Tensor<Real> out({n, m});
  as_matrix(out, n, m).noalias() = as_matrix(a.value(), n, k) * as_matrix(b.value(), k, m);
  const int ai = a.id, bi = b.id;
  return graph_of(a).record(
      "matmul", std::move(out), {ai, bi}, [ai, bi, n, k, m](Graph<Real>& g, int self) {
        const auto gy = as_matrix(g.grad(self), n, m);
        if (g.requires_grad(ai)) {
          as_matrix(g.grad_acc(ai), n, k).noalias() +=
              gy * as_matrix(g.value(bi), k, m).transpose();
        }
        if (g.requires_grad(bi)) {
          as_matrix(g.grad_acc(bi), k, m).noalias() +=
              as_matrix(g.value(ai), n, k).transpose() * gy;
        }
      });
}

template <typename Real>
Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> b) {
  same_graph(x, w, "linear");
  const Tensor<Real>& xv = x.value();
  const Shape& ws = w.shape();
  if (ws.size() != 2 || xv.rank() == 0 || xv.cols() != ws[0]) {
    graph_of(x).fail("linear", "input " + shape_to_string(xv.shape()) +
                                   " incompatible with weight " + shape_to_string(ws));
  }
  const bool has_bias = b.valid();
  if (has_bias && (b.shape().size() != 1 || b.shape()[0] != ws[1])) {
    graph_of(x).fail("linear", "bias " + shape_to_string(b.shape()) +
                                   " does not match weight " + shape_to_string(ws));
  }
  const std::size_t n = xv.rows(), k = ws[0], m = ws[1];
  Shape out_shape = xv.shape();
  out_shape.back() = m;
  Tensor<Real> out(out_shape);
  auto y = as_matrix(out, n, m);
  y.noalias() = as_matrix(xv, n, k) * as_matrix(w.value(), k, m);
  if (has_bias) {
    const auto bv = Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(
        b.value().raw(), static_cast<Eigen::Index>(m));
    y.rowwise() += bv;
  }
  const int xi = x.id, wi = w.id, bi = has_bias ? b.id : -1;
  std::vector<int> parents{xi, wi};
  if (has_bias) parents.push_back(bi);
  return graph_of(x).record(
      "linear", std::move(out), std::move(parents),
      [xi, wi, bi, n, k, m](Graph<Real>& g, int self) {
        const auto gy = as_matrix(g.grad(self), n, m);
        if (g.requires_grad(xi)) {
          as_matrix(g.grad_acc(xi), n, k).noalias() +=
              gy * as_matrix(g.value(wi), k, m).transpose();
        }
        if (g.requires_grad(wi)) {
          as_matrix(g.grad_acc(wi), k, m).noalias() +=
              as_matrix(g.value(xi), n, k).transpose() * gy;
        }
        if (bi >= 0 && g.requires_grad(bi)) {
          as_matrix(g.grad_acc(bi), 1, m) += gy.colwise().sum();
        }
      });
}

template <typename Real>
Var<Real> gelu(Var<Real> x) {
  constexpr double kA = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kB = 0.044715;
  return unary<Real>(
      "gelu", x,
      [](Real v) {
        const double u = kA * (v + kB * v * v * v);
        return static_cast<Real>(0.5 * v * (1.0 + std::tanh(u)));
      },
      [](Real v, Real) {
        const double u = kA * (v + kB * v * v * v);
        const double t = std::tanh(u);
        const double du = kA * (1.0 + 3.0 * kB * v * v);
        return static_cast<Real>(0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
      });
}

template <typename Real>
Var<Real> relu(Var<Real> x) {
  return unary<Real>(
      "relu", x, [](Real v) { return v > 0 ? v : Real{0}; },
      [](Real v, Real) { return v > 0 ? Real{1} : Real{0}; });
}

template <typename Real>
Var<Real> tanh(Var<Real> x) {
  return unary<Real>(
      "tanh", x, [](Real v) { return std::tanh(v); },
      [](Real, Real y) { return Real{1} - y * y; });
}

template <typename Real>
Var<Real> exp(Var<Real> x) {
  return unary<Real>(
      "exp", x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <typename Real>
Var<Real> clamp(Var<Real> x, double lo, double hi) {
  const Real l = static_cast<Real>(lo), h = static_cast<Real>(hi);
  return unary<Real>(
      "clamp", x, [l, h](Real v) { return std::clamp(v, l, h); },
      [l, h](Real v, Real) { return (v >= l && v <= h) ? Real{1} : Real{0}; });
}

template <typename Real>
Var<Real> minimum(Var<Real> a, Var<Real> b) {
  require_same_shape(a, b, "minimum");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  Tensor<Real> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::min(av[i], bv[i]);
  const int ai = a.id, bi = b.id;
  return graph_of(a).record("minimum", std::move(out), {ai, bi},
                            [ai, bi](Graph<Real>& g, int self) {
                              const Tensor<Real>& gy = g.grad(self);
                              const Tensor<Real>& av2 = g.value(ai);
                              const Tensor<Real>& bv2 = g.value(bi);
                              const bool ga_on = g.requires_grad(ai);
                              const bool gb_on = g.requires_grad(bi);
                              for (std::size_t i = 0; i < gy.size(); ++i) {
                                if (av2[i] <= bv2[i]) {
                                  if (ga_on) g.grad_acc(ai)[i] += gy[i];
                                } else if (gb_on) {
                                  g.grad_acc(bi)[i] += gy[i];
                                }
                              }
                            });
}

template <typename Real>
Var<Real> softmax(Var<Real> x) {
  const Tensor<Real>& xv = x.value();
  if (xv.rank() == 0) graph_of(x).fail("softmax", "scalar input");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<Real> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = xv.raw() + r * cols;
    Real* o = out.raw() + r * cols;
    const Real mx = *std::max_element(in, in + cols);
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      s += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= s;
  }
  const int xi = x.id;
  return graph_of(x).record("softmax", std::move(out), {xi},
                            [xi, rows, cols](Graph<Real>& g, int self) {
                              if (!g.requires_grad(xi)) return;
                              const Tensor<Real>& y = g.value(self);
                              const Tensor<Real>& gy = g.grad(self);
                              Tensor<Real>& gx = g.grad_acc(xi);
                              for (std::size_t r = 0; r < rows; ++r) {
                                const std::size_t o = r * cols;
                                Real dot = 0;
                                for (std::size_t c = 0; c < cols; ++c) dot += gy[o + c] * y[o + c];
                                for (std::size_t c = 0; c < cols; ++c) {
                                  gx[o + c] += y[o + c] * (gy[o + c] - dot);
                                }
                              }
                            });
}

template <typename Real>
Var<Real> log_softmax(Var<Real> x) {
  const Tensor<Real>& xv = x.value();
  if (xv.rank() == 0) graph_of(x).fail("log_softmax", "scalar input");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor<Real> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = xv.raw() + r * cols;
    Real* o = out.raw() + r * cols;
    const Real mx = *std::max_element(in, in + cols);
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(in[c] - mx);
    const Real lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
  const int xi = x.id;
  return graph_of(x).record("log_softmax", std::move(out), {xi},
                            [xi, rows, cols](Graph<Real>& g, int self) {
                              if (!g.requires_grad(xi)) return;
                              const Tensor<Real>& y = g.value(self);
                              const Tensor<Real>& gy = g.grad(self);
                              Tensor<Real>& gx = g.grad_acc(xi);
                              for (std::size_t r = 0; r < rows; ++r) {
                                const std::size_t o = r * cols;
                                Real s = 0;
                                for (std::size_t c = 0; c < cols; ++c) s += gy[o + c];
                                for (std::size_t c = 0; c < cols; ++c) {
                                  gx[o + c] += gy[o + c] - std::exp(y[o + c]) * s;
                                }
                              }
                            });
}

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, double eps) {
  same_graph(x, gamma, "layer_norm");
  same_graph(x, beta, "layer_norm");
  const Tensor<Real>& xv = x.value();
  const std::size_t cols = xv.cols(), rows = xv.rows();
  if (gamma.shape() != Shape{cols} || beta.shape() != Shape{cols}) {
    graph_of(x).fail("layer_norm", "affine parameters must have shape [" +
                                       std::to_string(cols) + "]");
  }
  Tensor<Real> out(xv.shape());
  // Normalised activations and inverse std are kept for the reverse pass.
  auto xhat = std::make_shared<std::vector<Real>>(xv.size());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  const Tensor<Real>& gv = gamma.value();
  const Tensor<Real>& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = xv.raw() + r * cols;
    Real mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<Real>(cols);
    Real var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<Real>(cols);
    const Real is = Real{1} / std::sqrt(var + static_cast<Real>(eps));
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const Real h = (in[c] - mu) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return graph_of(x).record(
      "layer_norm", std::move(out), {xi, gi, bi},
      [xi, gi, bi, rows, cols, xhat, inv_std](Graph<Real>& g, int self) {
        const Tensor<Real>& gy = g.grad(self);
        const Tensor<Real>& gv2 = g.value(gi);
        if (g.requires_grad(gi)) {
          Tensor<Real>& gg = g.grad_acc(gi);
          for (std::size_t i = 0; i < gy.size(); ++i) gg[i % cols] += gy[i] * (*xhat)[i];
        }
        if (g.requires_grad(bi)) {
          Tensor<Real>& gb = g.grad_acc(bi);
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i % cols] += gy[i];
        }
        if (g.requires_grad(xi)) {
          Tensor<Real>& gx = g.grad_acc(xi);
          const Real n = static_cast<Real>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * cols;
            Real s1 = 0, s2 = 0;
            for (std::size_t c = 0; c < cols; ++c) {
              const Real d = gy[o + c] * gv2[c];
              s1 += d;
              s2 += d * (*xhat)[o + c];
            }
            const Real k = (*inv_std)[r] / n;
            for (std::size_t c = 0; c < cols; ++c) {
              const Real d = gy[o + c] * gv2[c];
              gx[o + c] += k * (n * d - s1 - (*xhat)[o + c] * s2);
            }
          }
        }
      });
}

template <typename Real>
Var<Real> gather_rows(Var<Real> table, std::span<const int> index) {
  const Tensor<Real>& tv = table.value();
  if (tv.rank() != 2) graph_of(table).fail("gather_rows", "table must be rank 2");
  const std::size_t u = tv.dim(0), d = tv.dim(1);
  std::vector<int> idx(index.begin(), index.end());
  Tensor<Real> out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= u) {
      graph_of(table).fail("gather_rows", "index " + std::to_string(idx[i]) +
                                              " out of range " + std::to_string(u));
    }
    std::copy_n(tv.raw() + static_cast<std::size_t>(idx[i]) * d, d, out.raw() + i * d);
  }
  const int ti = table.id;
  return graph_of(table).record("gather_rows", std::move(out), {ti},
                                [ti, d, idx = std::move(idx)](Graph<Real>& g, int self) {
                                  if (!g.requires_grad(ti)) return;
                                  const Tensor<Real>& gy = g.grad(self);
                                  Tensor<Real>& gt = g.grad_acc(ti);
                                  for (std::size_t i = 0; i < idx.size(); ++i) {
                                    Real* dst = gt.raw() + static_cast<std::size_t>(idx[i]) * d;
                                    const Real* src = gy.raw() + i * d;
                                    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                                  }
                                });
}

template <typename Real>
Var<Real> reshape(Var<Real> x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    graph_of(x).fail("reshape", "cannot reshape " + shape_to_string(x.shape()) +
                                    " to " + shape_to_string(shape));
  }
  Tensor<Real> out = x.value().reshaped(std::move(shape));
  const int xi = x.id;
  return graph_of(x).record("reshape", std::move(out), {xi}, [xi](Graph<Real>& g, int self) {
    if (!g.requires_grad(xi)) return;
    const Tensor<Real>& gy = g.grad(self);
    Tensor<Real>& gx = g.grad_acc(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

template <typename Real>
Var<Real> concat_last(const std::vector<Var<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
  Graph<Real>& g = graph_of(parts.front());
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::vector<int> parents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    same_graph(parts.front(), p, "concat_last");
    const Tensor<Real>& v = p.value();
    if (v.rows() != rows || v.rank() != parts.front().value().rank()) {
      g.fail("concat_last", "leading dims differ: " + shape_to_string(v.shape()) +
                                " vs " + shape_to_string(parts.front().shape()));
    }
    widths.push_back(v.cols());
    parents.push_back(p.id);
    total += v.cols();
  }
  Shape shape = parts.front().shape();
  shape.back() = total;
  Tensor<Real> out(shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<Real>& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.raw() + r * widths[k], widths[k], out.raw() + r * total + off);
    }
    off += widths[k];
  }
  return g.record("concat_last", std::move(out), parents,
                  [parents, widths, rows, total](Graph<Real>& gr, int self) {
                    const Tensor<Real>& gy = gr.grad(self);
                    std::size_t o = 0;
                    for (std::size_t k = 0; k < parents.size(); ++k) {
                      if (gr.requires_grad(parents[k])) {
                        Tensor<Real>& gp = gr.grad_acc(parents[k]);
                        for (std::size_t r = 0; r < rows; ++r) {
                          for (std::size_t c = 0; c < widths[k]; ++c) {
                            gp[r * widths[k] + c] += gy[r * total + o + c];
                          }
                        }
                      }
                      o += widths[k];
                    }
                  });
}

template <typename Real>
Var<Real> slice_last(Var<Real> x, std::size_t begin, std::size_t end) {
  const Tensor<Real>& xv = x.value();
  const std::size_t cols = xv.cols(), rows = xv.rows();
  if (xv.rank() == 0 || begin >= end || end > cols) {
    graph_of(x).fail("slice_last", "bad range [" + std::to_string(begin) + "," +
                                       std::to_string(end) + ") for " +
                                       shape_to_string(xv.shape()));
  }
  const std::size_t w = end - begin;
  Shape shape = xv.shape();
  shape.back() = w;
  Tensor<Real> out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.raw() + r * cols + begin, w, out.raw() + r * w);
  }
  const int xi = x.id;
  return graph_of(x).record("slice_last", std::move(out), {xi},
                            [xi, rows, cols, begin, w](Graph<Real>& g, int self) {
                              if (!g.requires_grad(xi)) return;
                              const Tensor<Real>& gy = g.grad(self);
                              Tensor<Real>& gx = g.grad_acc(xi);
                              for (std::size_t r = 0; r < rows; ++r) {
                                for (std::size_t c = 0; c < w; ++c) {
                                  gx[r * cols + begin + c] += gy[r * w + c];
                                }
                              }
                            });
}

template <typename Real>
Var<Real> slice_seq(Var<Real> x, std::size_t begin, std::size_t end) {
  const Tensor<Real>& xv = x.value();
  if (xv.rank() != 3 || begin >= end || end > xv.dim(1)) {
    graph_of(x).fail("slice_seq", "bad range [" + std::to_string(begin) + "," +
                                      std::to_string(end) + ") for " +
                                      shape_to_string(xv.shape()));
  }
  const std::size_t b = xv.dim(0), t = xv.dim(1), d = xv.dim(2), w = end - begin;
  Tensor<Real> out({b, w, d});
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(xv.raw() + (i * t + begin) * d, w * d, out.raw() + i * w * d);
  }
  const int xi = x.id;
  return graph_of(x).record("slice_seq", std::move(out), {xi},
                            [xi, b, t, d, w, begin](Graph<Real>& g, int self) {
                              if (!g.requires_grad(xi)) return;
                              const Tensor<Real>& gy = g.grad(self);
                              Tensor<Real>& gx = g.grad_acc(xi);
                              for (std::size_t i = 0; i < b; ++i) {
                                for (std::size_t j = 0; j < w * d; ++j) {
                                  gx[(i * t + begin) * d + j] += gy[i * w * d + j];
                                }
                              }
                            });
}

template <typename Real>
Var<Real> concat_seq(Var<Real> a, Var<Real> b) {
  same_graph(a, b, "concat_seq");
  const Tensor<Real>& av = a.value();
  const Tensor<Real>& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2)) {
    graph_of(a).fail("concat_seq", "incompatible " + shape_to_string(av.shape()) +
                                       " and " + shape_to_string(bv.shape()));
  }
  const std::size_t n = av.dim(0), ta = av.dim(1), tb = bv.dim(1), d = av.dim(2);
  Tensor<Real> out({n, ta + tb, d});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.raw() + i * ta * d, ta * d, out.raw() + i * (ta + tb) * d);
    std::copy_n(bv.raw() + i * tb * d, tb * d, out.raw() + (i * (ta + tb) + ta) * d);
  }
  const int ai = a.id, bi = b.id;
  return graph_of(a).record("concat_seq", std::move(out), {ai, bi},
                            [ai, bi, n, ta, tb, d](Graph<Real>& g, int self) {
                              const Tensor<Real>& gy = g.grad(self);
                              if (g.requires_grad(ai)) {
                                Tensor<Real>& ga = g.grad_acc(ai);
                                for (std::size_t i = 0; i < n; ++i)
                                  for (std::size_t j = 0; j < ta * d; ++j)
                                    ga[i * ta * d + j] += gy[i * (ta + tb) * d + j];
                              }
                              if (g.requires_grad(bi)) {
                                Tensor<Real>& gb = g.grad_acc(bi);
                                for (std::size_t i = 0; i < n; ++i)
                                  for (std::size_t j = 0; j < tb * d; ++j)
                                    gb[i * tb * d + j] += gy[(i * (ta + tb) + ta) * d + j];
                              }
                            });
}

template <typename Real>
Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v, std::size_t heads,
                    std::span<const std::uint8_t> key_mask, bool causal) {
  same_graph(q, k, "attention");
  same_graph(q, v, "attention");
  const Tensor<Real>& qv = q.value();
  const Tensor<Real>& kv = k.value();
  const Tensor<Real>& vv = v.value();
  Graph<Real>& g = graph_of(q);
  if (qv.rank() != 3 || kv.rank() != 3 || kv.shape() != vv.shape() ||
      qv.dim(0) != kv.dim(0) || qv.dim(2) != kv.dim(2)) {
    g.fail("attention", "q " + shape_to_string(qv.shape()) + ", k " +
                            shape_to_string(kv.shape()) + ", v " +
                            shape_to_string(vv.shape()));
  }
  const std::size_t nb = qv.dim(0), nt = qv.dim(1), ns = kv.dim(1), d = qv.dim(2);
  if (heads == 0 || d % heads != 0) g.fail("attention", "model width not divisible by heads");
  if (!key_mask.empty() && key_mask.size() != nb * ns) g.fail("attention", "key mask size");
  if (causal && nt != ns) g.fail("attention", "causal attention needs T == S");
  const std::size_t dh = d / heads;
  const Real inv = Real{1} / std::sqrt(static_cast<Real>(dh));
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  // probs: [B, H, T, S]
  auto probs = std::make_shared<std::vector<Real>>(nb * heads * nt * ns, Real{0});
  Tensor<Real> out({nb, nt, d});
  std::vector<Real> row(ns);
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < nt; ++t) {
        const Real* qr = qv.raw() + (b * nt + t) * d + h * dh;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t s = 0; s < ns; ++s) {
          const bool ok = (mask.empty() || mask[b * ns + s]) && (!causal || s <= t);
          if (!ok) {
            row[s] = -std::numeric_limits<Real>::infinity();
            continue;
          }
          const Real* kr = kv.raw() + (b * ns + s) * d + h * dh;
          Real dot = 0;
          for (std::size_t c = 0; c < dh; ++c) dot += qr[c] * kr[c];
          row[s] = dot * inv;
          mx = std::max(mx, row[s]);
        }
        Real* p = probs->data() + ((b * heads + h) * nt + t) * ns;
        if (mx == -std::numeric_limits<Real>::infinity()) continue;
        Real z = 0;
        for (std::size_t s = 0; s < ns; ++s) {
          p[s] = row[s] == -std::numeric_limits<Real>::infinity() ? Real{0}
                                                                   : std::exp(row[s] - mx);
          z += p[s];
        }
        Real* o = out.raw() + (b * nt + t) * d + h * dh;
        for (std::size_t s = 0; s < ns; ++s) {
          p[s] /= z;
          if (p[s] == Real{0}) continue;
          const Real* vr = vv.raw() + (b * ns + s) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p[s] * vr[c];
        }
      }
    }
  }
  const int qi = q.id, ki = k.id, vi = v.id;
  return g.record(
      "attention", std::move(out), {qi, ki, vi},
      [qi, ki, vi, nb, nt, ns, d, heads, dh, inv, probs](Graph<Real>& gr, int self) {
        const Tensor<Real>& gy = gr.grad(self);
        const Tensor<Real>& qv2 = gr.value(qi);
        const Tensor<Real>& kv2 = gr.value(ki);
        const Tensor<Real>& vv2 = gr.value(vi);
        const bool gq_on = gr.requires_grad(qi);
        const bool gk_on = gr.requires_grad(ki);
        const bool gv_on = gr.requires_grad(vi);
        Tensor<Real>* gq = gq_on ? &gr.grad_acc(qi) : nullptr;
        Tensor<Real>* gk = gk_on ? &gr.grad_acc(ki) : nullptr;
        Tensor<Real>* gv = gv_on ? &gr.grad_acc(vi) : nullptr;
        std::vector<Real> dp(ns);
        for (std::size_t b = 0; b < nb; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < nt; ++t) {
              const Real* p = probs->data() + ((b * heads + h) * nt + t) * ns;
              const Real* go = gy.raw() + (b * nt + t) * d + h * dh;
              Real acc = 0;
              for (std::size_t s = 0; s < ns; ++s) {
                if (p[s] == Real{0}) {
                  dp[s] = 0;
                  continue;
                }
                const Real* vr = vv2.raw() + (b * ns + s) * d + h * dh;
                Real dot = 0;
                for (std::size_t c = 0; c < dh; ++c) dot += go[c] * vr[c];
                dp[s] = dot;
                acc += p[s] * dot;
                if (gv) {
                  Real* gvr = gv->raw() + (b * ns + s) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gvr[c] += p[s] * go[c];
                }
              }
              if (!gq && !gk) continue;
              const Real* qr = qv2.raw() + (b * nt + t) * d + h * dh;
              for (std::size_t s = 0; s < ns; ++s) {
                if (p[s] == Real{0}) continue;
                const Real ds = p[s] * (dp[s] - acc) * inv;
                const Real* kr = kv2.raw() + (b * ns + s) * d + h * dh;
                if (gq) {
                  Real* gqr = gq->raw() + (b * nt + t) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gqr[c] += ds * kr[c];
                }
                if (gk) {
                  Real* gkr = gk->raw() + (b * ns + s) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkr[c] += ds * qr[c];
                }
              }
            }
          }
        }
      });
}

template <typename Real>
Var<Real> sum(Var<Real> x) {
  const Tensor<Real>& xv = x.value();
  Real s = 0;
  for (Real v : xv.data()) s += v;
  const int xi = x.id;
  return graph_of(x).record("sum", Tensor<Real>::scalar(s), {xi}, [xi](Graph<Real>& g, int self) {
    if (!g.requires_grad(xi)) return;
    const Real gy = g.grad(self)[0];
    Tensor<Real>& gx = g.grad_acc(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy;
  });
}

template <typename Real>
Var<Real> mean(Var<Real> x) {
  const std::size_t n = x.value().size();
  if (n == 0) graph_of(x).fail("mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

template <typename Real>
Var<Real> pick(Var<Real> x, std::span<const int> index) {
  const Tensor<Real>& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (xv.rank() < 1 || index.size() != rows) {
    graph_of(x).fail("pick", "need one index per row of " + shape_to_string(xv.shape()));
  }
  std::vector<int> idx(index.begin(), index.end());
  Tensor<Real> out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= cols) {
      graph_of(x).fail("pick", "index " + std::to_string(idx[r]) + " out of range");
    }
    out[r] = xv[r * cols + static_cast<std::size_t>(idx[r])];
  }
  const int xi = x.id;
  return graph_of(x).record("pick", std::move(out), {xi},
                            [xi, cols, idx = std::move(idx)](Graph<Real>& g, int self) {
                              if (!g.requires_grad(xi)) return;
                              const Tensor<Real>& gy = g.grad(self);
                              Tensor<Real>& gx = g.grad_acc(xi);
                              for (std::size_t r = 0; r < idx.size(); ++r) {
                                gx[r * cols + static_cast<std::size_t>(idx[r])] += gy[r];
                              }
                            });
}

namespace {

template <typename Real>
std::vector<Real> resolve_weights(Graph<Real>& g, std::string_view op,
                                  std::span<const Real> weights, std::size_t rows) {
  if (weights.empty()) return std::vector<Real>(rows, Real{1});
  if (weights.size() != rows) {
    g.fail(op, std::to_string(weights.size()) + " weights for " + std::to_string(rows) +
                   " rows");
  }
  return {weights.begin(), weights.end()};
}

// Shared kernel of hard and soft cross-entropy: loss = sum_r w_r * H(q_r,
// softmax(z_r / T)) / sum_r w_r. `target_prob(r, c)` gives q.
template <typename Real, typename Q>
Var<Real> cross_entropy_impl(std::string_view op, Var<Real> logits, std::vector<Real> w,
                             double temperature, Q target_prob) {
  Graph<Real>& g = graph_of(logits);
  const Tensor<Real>& zv = logits.value();
  const std::size_t rows = zv.rows(), cols = zv.cols();
  const Real inv_t = static_cast<Real>(1.0 / temperature);
  Real wsum = 0;
  for (Real x : w) wsum += x;
  auto probs = std::make_shared<std::vector<Real>>(rows * cols);
  double loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* z = zv.raw() + r * cols;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, z[c] * inv_t);
    Real s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(z[c] * inv_t - mx);
    const Real lse = mx + std::log(s);
    double row_loss = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const Real lp = z[c] * inv_t - lse;
      (*probs)[r * cols + c] = std::exp(lp);
      const Real qc = target_prob(r, c);
      if (qc != Real{0}) row_loss -= static_cast<double>(qc) * lp;
    }
    if (w[r] != Real{0}) loss += static_cast<double>(w[r]) * row_loss;
  }
  const Real value = wsum > 0 ? static_cast<Real>(loss / static_cast<double>(wsum)) : Real{0};
  const int zi = logits.id;
  return g.record(
      op, Tensor<Real>::scalar(value), {zi},
      [zi, rows, cols, inv_t, wsum, w = std::move(w), probs, target_prob](Graph<Real>& gr,
                                                                          int self) {
        if (!gr.requires_grad(zi) || wsum <= 0) return;
        const Real gy = gr.grad(self)[0];
        Tensor<Real>& gz = gr.grad_acc(zi);
        for (std::size_t r = 0; r < rows; ++r) {
          if (w[r] == Real{0}) continue;
          const Real k = gy * w[r] / wsum * inv_t;
          Real qsum = 0;
          for (std::size_t c = 0; c < cols; ++c) qsum += target_prob(r, c);
          for (std::size_t c = 0; c < cols; ++c) {
            gz[r * cols + c] += k * ((*probs)[r * cols + c] * qsum - target_prob(r, c));
          }
        }
      });
}

}  // namespace

template <typename Real>
Var<Real> cross_entropy(Var<Real> logits, std::span<const int> targets,
                        std::span<const Real> weights) {
  Graph<Real>& g = graph_of(logits);
  const Tensor<Real>& zv = logits.value();
  if (zv.rank() == 0) g.fail("cross_entropy", "scalar logits");
  const std::size_t rows = zv.rows(), cols = zv.cols();
  if (targets.size() != rows) {
    g.fail("cross_entropy", std::to_string(targets.size()) + " targets for " +
                                std::to_string(rows) + " rows");
  }
  auto w = resolve_weights(g, "cross_entropy", weights, rows);
  auto t = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  for (std::size_t r = 0; r < rows; ++r) {
    if (w[r] == Real{0}) continue;
    if ((*t)[r] < 0 || static_cast<std::size_t>((*t)[r]) >= cols) {
      g.fail("cross_entropy", "target id " + std::to_string((*t)[r]) + " outside [0," +
                                  std::to_string(cols) + ")");
    }
  }
  auto q = [t](std::size_t r, std::size_t c) {
    return static_cast<std::size_t>((*t)[r]) == c ? Real{1} : Real{0};
  };
  return cross_entropy_impl<Real>("cross_entropy", logits, std::move(w), 1.0, q);
}

template <typename Real>
Var<Real> soft_cross_entropy(Var<Real> logits, const Tensor<Real>& targets,
                             std::span<const Real> weights, double temperature) {
  Graph<Real>& g = graph_of(logits);
  const Tensor<Real>& zv = logits.value();
  if (zv.rank() == 0 || targets.size() != zv.size() || targets.cols() != zv.cols()) {
    g.fail("soft_cross_entropy", "targets " + shape_to_string(targets.shape()) +
                                     " do not match logits " + shape_to_string(zv.shape()));
  }
  if (!(temperature > 0)) g.fail("soft_cross_entropy", "temperature must be positive");
  auto w = resolve_weights(g, "soft_cross_entropy", weights, zv.rows());
  auto dense = std::make_shared<Tensor<Real>>(targets);
  const std::size_t cols = zv.cols();
  auto q = [dense, cols](std::size_t r, std::size_t c) { return (*dense)[r * cols + c]; };
  return cross_entropy_impl<Real>("soft_cross_entropy", logits, std::move(w), temperature, q);
}

template <typename Real>
Var<Real> squared_error(Var<Real> x, const Tensor<Real>& target, std::span<const Real> weights) {
  Graph<Real>& g = graph_of(x);
  const Tensor<Real>& xv = x.value();
  if (target.size() != xv.size() || target.cols() != xv.cols()) {
    g.fail("squared_error", "target " + shape_to_string(target.shape()) +
                                " does not match " + shape_to_string(xv.shape()));
  }
  const std::size_t rows = xv.rows(), cols = xv.cols();
  auto w = resolve_weights(g, "squared_error", weights, rows);
  Real wsum = 0;
  for (Real v : w) wsum += v;
  const Real denom = wsum * static_cast<Real>(cols);
  double loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (w[r] == Real{0}) continue;
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = xv[r * cols + c] - target[r * cols + c];
      s += e * e;
    }
    loss += w[r] * s;
  }
  const Real value = denom > 0 ? static_cast<Real>(loss / denom) : Real{0};
  auto tgt = std::make_shared<Tensor<Real>>(target);
  const int xi = x.id;
  return g.record("squared_error", Tensor<Real>::scalar(value), {xi},
                  [xi, rows, cols, denom, w = std::move(w), tgt](Graph<Real>& gr, int self) {
                    if (!gr.requires_grad(xi) || denom <= 0) return;
                    const Real gy = gr.grad(self)[0];
                    const Tensor<Real>& xv2 = gr.value(xi);
                    Tensor<Real>& gx = gr.grad_acc(xi);
                    for (std::size_t r = 0; r < rows; ++r) {
                      if (w[r] == Real{0}) continue;
                      const Real k = gy * Real{2} * w[r] / denom;
                      for (std::size_t c = 0; c < cols; ++c) {
                        gx[r * cols + c] += k * (xv2[r * cols + c] - (*tgt)[r * cols + c]);
                      }
                    }
                  });
}

#define DESCRL_INSTANTIATE_OPS(R)                                                       \
  template Var<R> add(Var<R>, Var<R>);                                                  \
  template Var<R> sub(Var<R>, Var<R>);                                                  \
  template Var<R> mul(Var<R>, Var<R>);                                                  \
  template Var<R> scale(Var<R>, double);                                                \
  template Var<R> add_broadcast(Var<R>, Var<R>);                                        \
  template Var<R> matmul(Var<R>, Var<R>);                                               \
  template Var<R> linear(Var<R>, Var<R>, Var<R>);                                       \
  template Var<R> gelu(Var<R>);                                                         \
  template Var<R> relu(Var<R>);                                                         \
  template Var<R> tanh(Var<R>);                                                         \
  template Var<R> exp(Var<R>);                                                          \
  template Var<R> clamp(Var<R>, double, double);                                        \
  template Var<R> minimum(Var<R>, Var<R>);                                              \
  template Var<R> softmax(Var<R>);                                                      \
  template Var<R> log_softmax(Var<R>);                                                  \
  template Var<R> layer_norm(Var<R>, Var<R>, Var<R>, double);                           \
  template Var<R> gather_rows(Var<R>, std::span<const int>);                            \
  template Var<R> reshape(Var<R>, Shape);                                               \
  template Var<R> concat_last(const std::vector<Var<R>>&);                              \
  template Var<R> slice_last(Var<R>, std::size_t, std::size_t);                         \
  template Var<R> slice_seq(Var<R>, std::size_t, std::size_t);                          \
  template Var<R> concat_seq(Var<R>, Var<R>);                                           \
  template Var<R> attention(Var<R>, Var<R>, Var<R>, std::size_t,                        \
                            std::span<const std::uint8_t>, bool);                       \
  template Var<R> sum(Var<R>);                                                          \
  template Var<R> mean(Var<R>);                                                         \
  template Var<R> pick(Var<R>, std::span<const int>);                                   \
  template Var<R> cross_entropy(Var<R>, std::span<const int>, std::span<const R>);      \
  template Var<R> soft_cross_entropy(Var<R>, const Tensor<R>&, std::span<const R>,      \
                                     double);                                           \
  template Var<R> squared_error(Var<R>, const Tensor<R>&, std::span<const R>);

DESCRL_INSTANTIATE_OPS(float)
DESCRL_INSTANTIATE_OPS(double)

#undef DESCRL_INSTANTIATE_OPS

}  // namespace descrl::tensor
