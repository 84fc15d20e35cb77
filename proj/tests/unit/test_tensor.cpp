#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>
#include <sstream>

#include "descrl/tensor/adam.hpp"
#include "descrl/tensor/checkpoint.hpp"
#include "descrl/tensor/gradcheck.hpp"
#include "descrl/tensor/init.hpp"
#include "descrl/tensor/ops.hpp"
#include "primitive_cases.hpp"

namespace {

using namespace descrl::tensor;
using TD = Tensor<double>;
using TF = Tensor<float>;

TEST(TensorForward, SoftmaxOfZerosIsUniform) {
  ParameterSet<double> p;
  Graph<double> g(p);
  auto y = softmax(g.constant(TD({1, 3})));
  for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(TensorForward, LayerNormOfConstantIsZero) {
  ParameterSet<double> p;
  Graph<double> g(p);
  auto y = layer_norm(g.constant(TD({1, 4}, 2.5)), g.constant(TD({4}, 1.0)), g.constant(TD({4})));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(TensorForward, MatmulByIdentity) {
  ParameterSet<double> p;
  Graph<double> g(p);
  auto y = matmul(g.constant(TD({2, 2}, {1, 2, 3, 4})), g.constant(TD({2, 2}, {1, 0, 0, 1})));
  EXPECT_EQ(y.value(), TD({2, 2}, {1, 2, 3, 4}));
}

TEST(TensorForward, ShapeMismatchNamesTheNode) {
  ParameterSet<double> p;
  Graph<double> g(p);
  auto a = g.constant(TD({2, 3}));
  auto b = g.constant(TD({4, 2}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos) << e.what();
  }
}

TEST(TensorForward, SoftmaxRowsAreDistributions) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterSet<float> p;
    Graph<float> g(p);
    auto y = softmax(g.constant(normal<float>({5, 11}, 4.0, rng)));
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 11; ++c) {
        const float v = y.value().at(r, c);
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(TensorForward, ForwardIsPure) {
  std::mt19937_64 rng(11);
  ParameterSet<float> p;
  p.add("x", normal<float>({2, 3, 8}, 1.0, rng));
  p.add("w", normal<float>({8, 8}, 1.0, rng));
  auto run = [&] {
    Graph<float> g(p);
    auto h = linear(g.param("x"), g.param("w"), Var<float>{});
    return attention(h, h, h, 2, {}, true).value();
  };
  const TF a = run();
  const TF b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint32_t>(a[i]), std::bit_cast<std::uint32_t>(b[i]));
  }
}

TEST(TensorBackward, SumGivesOnes) {
  ParameterSet<double> p;
  p.add("x", TD({2, 3, 2}, 0.7));
  Graph<double> g(p);
  auto grads = g.backward(sum(g.param("x")));
  for (double v : grads[0].data()) EXPECT_EQ(v, 1.0);
}

TEST(TensorBackward, SquareAtThree) {
  ParameterSet<double> p;
  p.add("x", TD::scalar(3.0));
  Graph<double> g(p);
  auto x = g.param("x");
  auto grads = g.backward(sum(x * x));
  EXPECT_DOUBLE_EQ(grads[0].item(), 6.0);
}

TEST(TensorBackward, NonScalarLossRejected) {
  ParameterSet<double> p;
  p.add("x", TD({2}));
  Graph<double> g(p);
  EXPECT_THROW(g.backward(g.param("x")), ShapeError);
}

TEST(TensorBackward, UnreachableParameterGetsExactZeros) {
  ParameterSet<double> p;
  p.add("used", TD({3}, 1.5));
  p.add("unused", TD({2, 2}, 4.0));
  Graph<double> g(p);
  auto grads = g.backward(sum(g.param("used") * g.param("used")));
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads[1].shape(), (Shape{2, 2}));
  for (double v : grads[1].data()) EXPECT_EQ(v, 0.0);
}

TEST(TensorBackward, FrozenParameterGetsZeros) {
  ParameterSet<double> p;
  p.add("a", TD({3}, 1.5));
  p.add("b", TD({3}, 2.0));
  Graph<double> g(p);
  g.freeze(1);
  auto grads = g.backward(sum(g.param("a") * g.param("b")));
  for (double v : grads[0].data()) EXPECT_EQ(v, 2.0);
  for (double v : grads[1].data()) EXPECT_EQ(v, 0.0);
}

TEST(GradientCheck, EveryPrimitiveOverFiftySeeds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (auto& c : descrl::testing::primitive_cases(seed)) {
      const auto r = gradient_check(c.params, c.loss);
      EXPECT_LT(r.max_relative_error, 1e-4)
          << c.name << " seed " << seed << " at " << r.worst_parameter << "[" << r.worst_index
          << "] analytic " << r.analytic << " numeric " << r.numeric;
    }
  }
}

TEST(GradientCheck, DetectsAWrongBackward) {
  ParameterSet<double> p;
  p.add("x", TD({3}, {0.5, -1.0, 2.0}));
  const auto r = gradient_check(p, [](Graph<double>& g) {
    Var<double> x = g.param("x");
    TD y = x.value();
    for (double& v : y.data()) v = v * v;
    // Claims d(x^2)/dx = x instead of 2x.
    Var<double> sq = g.record("bad_square", y, {x.id}, [x](Graph<double>& gr, int self) {
      auto& gx = gr.grad_acc(x.id);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gr.grad(self)[i] * x.value()[i];
    });
    return sum(sq);
  });
  EXPECT_NEAR(r.max_relative_error, 0.5, 1e-6);
  EXPECT_EQ(r.probed, 3u);
}

TEST(GradientCheck, LinearLayerBelowOneInAMillion) {
  std::mt19937_64 rng(5);
  ParameterSet<double> p;
  p.add("x", normal<double>({4, 6}, 1.0, rng));
  p.add("w", normal<double>({6, 3}, 1.0, rng));
  p.add("b", normal<double>({3}, 1.0, rng));
  const TD probe = normal<double>({4, 3}, 1.0, rng);
  const auto r = gradient_check(p, [&](Graph<double>& g) {
    return sum(linear(g.param("x"), g.param("w"), g.param("b")) * g.constant(probe));
  });
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(GradientCheck, CrossEntropyHead) {
  std::mt19937_64 rng(6);
  ParameterSet<double> p;
  p.add("h", normal<double>({5, 8}, 1.0, rng));
  p.add("w", normal<double>({8, 10}, 0.5, rng));
  p.add("b", normal<double>({10}, 0.1, rng));
  const int targets[] = {0, 9, 4, 4, 2};
  const auto r = gradient_check(p, [&](Graph<double>& g) {
    return cross_entropy<double>(linear(g.param("h"), g.param("w"), g.param("b")), targets);
  });
  EXPECT_LT(r.max_relative_error, 1e-5);
}

TEST(GradientCheck, RandomThreeLayerMlp) {
  std::mt19937_64 rng(8);
  ParameterSet<double> p;
  p.add("x", normal<double>({3, 5}, 1.0, rng));
  p.add("w1", xavier_uniform<double>({5, 7}, 5, 7, rng));
  p.add("b1", normal<double>({7}, 0.1, rng));
  p.add("w2", xavier_uniform<double>({7, 7}, 7, 7, rng));
  p.add("b2", normal<double>({7}, 0.1, rng));
  p.add("w3", xavier_uniform<double>({7, 2}, 7, 2, rng));
  p.add("b3", normal<double>({2}, 0.1, rng));
  const TD target = normal<double>({3, 2}, 1.0, rng);
  const auto r = gradient_check(p, [&](Graph<double>& g) {
    auto h = tanh(linear(g.param("x"), g.param("w1"), g.param("b1")));
    h = gelu(linear(h, g.param("w2"), g.param("b2")));
    return squared_error<double>(linear(h, g.param("w3"), g.param("b3")), target);
  });
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  ParameterSet<float> p;
  p.add("x", TF({3}, {1.f, -2.f, 0.5f}));
  const auto before = p;
  Adam<float> opt(p, {});
  opt.step(p, {TF({3})});
  EXPECT_EQ(p, before);
}

TEST(Adam, ZeroBetasReduceToSignScaledStep) {
  ParameterSet<double> p;
  p.add("x", TD({2}, {1.0, 1.0}));
  Adam<double> opt(p, {.lr = 0.1, .beta1 = 0.0, .beta2 = 0.0, .eps = 1e-8});
  opt.step(p, {TD({2}, {0.5, -3.0})});
  EXPECT_NEAR(p.value(0)[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(p.value(0)[1], 1.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-12);
}

TEST(Adam, QuadraticDescentIsMonotone) {
  ParameterSet<double> p;
  p.add("x", TD::scalar(1.0));
  Adam<double> opt(p, {.lr = 0.1});
  double prev = 1.0;
  for (int i = 0; i < 10; ++i) {
    opt.step(p, {TD::scalar(2.0 * p.value(0).item())});
    const double now = std::abs(p.value(0).item());
    EXPECT_LT(now, prev);
    prev = now;
  }
  EXPECT_EQ(opt.step_count(), 10u);
}

TEST(Adam, NanGradientRefused) {
  ParameterSet<float> p;
  p.add("a", TF({2}, 1.f));
  p.add("b", TF({2}, 1.f));
  const auto before = p;
  Adam<float> opt(p, {});
  EXPECT_THROW(opt.step(p, {TF({2}, 1.f), TF({2}, {0.f, std::nanf("")})}), NumericError);
  EXPECT_EQ(p, before);
  EXPECT_EQ(opt.step_count(), 0u);
}

TEST(Adam, OnlyTrainableSubsetMoves) {
  ParameterSet<float> p;
  p.add("a", TF({2}, 1.f));
  p.add("b", TF({2}, 1.f));
  Adam<float> opt(p, {});
  const ParamId trainable[] = {1};
  opt.step(p, {TF({2}, 1.f), TF({2}, 1.f)}, trainable);
  EXPECT_EQ(p.value(0), TF({2}, 1.f));
  EXPECT_NE(p.value(1), TF({2}, 1.f));
}

TEST(Adam, ClipGradNormScalesToMaximum) {
  Gradients<double> grads{TD({2}, {3.0, 0.0}), TD({1}, {4.0})};
  const double norm = clip_grad_norm(grads, 1.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  const double after = std::sqrt(grads[0][0] * grads[0][0] + grads[1][0] * grads[1][0]);
  EXPECT_NEAR(after, 1.0, 1e-6);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  ParameterSet<float> p;
  p.add("enc.w", normal<float>({3, 4}, 1.0, rng));
  p.add("scalar", TF::scalar(-0.0f));
  p.add("empty_dim", TF({0, 2}));
  std::stringstream buf;
  write_checkpoint(buf, p);
  const auto q = read_checkpoint(buf);
  ASSERT_EQ(q.size(), p.size());
  for (ParamId i = 0; i < p.size(); ++i) {
    EXPECT_EQ(q.name(i), p.name(i));
    EXPECT_EQ(q.value(i).shape(), p.value(i).shape());
    for (std::size_t k = 0; k < p.value(i).size(); ++k) {
      EXPECT_EQ(std::bit_cast<std::uint32_t>(q.value(i)[k]),
                std::bit_cast<std::uint32_t>(p.value(i)[k]));
    }
  }
  EXPECT_EQ(parameter_digest(p), parameter_digest(q));
}

TEST(Checkpoint, HeaderLayout) {
  ParameterSet<float> p;
  p.add("ab", TF({1}, {1.0f}));
  std::stringstream buf;
  write_checkpoint(buf, p);
  const std::string bytes = buf.str();
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 4), "DRL1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);  // version, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1u);  // parameter count
  // 4 magic + 4 version + 8 count + 4 name len + 2 name + 4 rank + 8 dim + 4 data
  EXPECT_EQ(bytes.size(), 38u);
}

TEST(Checkpoint, BadMagicRejected) {
  std::stringstream buf("NOPE0000000000000000");
  EXPECT_THROW(read_checkpoint(buf), CheckpointError);
}

TEST(Checkpoint, TruncatedStreamRejected) {
  ParameterSet<float> p;
  p.add("x", TF({4}, 1.f));
  std::stringstream buf;
  write_checkpoint(buf, p);
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream cut(bytes);
  EXPECT_THROW(read_checkpoint(cut), CheckpointError);
}

}  // namespace
