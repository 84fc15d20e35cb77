#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "descrl/adgen/adgen.hpp"
#include "descrl/tensor/gradcheck.hpp"

namespace {

using namespace descrl;
using namespace descrl::adgen;

std::vector<AdgenSample> oracle_samples(std::uint64_t seed, std::size_t n) {
  describe::DatasetConfig cfg;
  cfg.seed = seed;
  cfg.samples = n;
  cfg.mode = describe::Mode::kPast;
  cfg.worlds = 4;
  return make_samples(describe::build_dataset(cfg));
}

AdgenConfig tiny(std::uint64_t seed = 0) {
  AdgenConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.ffn = 8;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.patch_embed = 2;
  c.seed = seed;
  return c;
}

std::vector<const AdgenSample*> pointers(const std::vector<AdgenSample>& s, std::size_t n) {
  std::vector<const AdgenSample*> out;
  for (std::size_t i = 0; i < n && i < s.size(); ++i) out.push_back(&s[i]);
  return out;
}

TEST(Adgen, ZeroHeadGivesUniformCrossEntropy) {
  const auto samples = oracle_samples(1, 16);
  AdgenModel model;
  const auto batch = collate(pointers(samples, 16), model.layout().vocab);
  tensor::Graph<float> g(model.params());
  const double ce = teacher_forced_loss(g, model.layout(), batch).value().item();
  EXPECT_NEAR(ce, std::log(static_cast<double>(model.layout().vocab)), 1e-4);
}

TEST(Adgen, CollateRejectsMalformedSamples) {
  auto samples = oracle_samples(2, 2);
  const std::size_t v = describe::Vocabulary::instance().size();
  AdgenSample bad = samples[0];
  bad.tokens.push_back(static_cast<int>(v));
  std::vector<const AdgenSample*> p{&bad};
  EXPECT_THROW(collate(p, v), std::invalid_argument);
  bad = samples[0];
  bad.actions.pop_back();
  EXPECT_THROW(collate(p, v), std::invalid_argument);
}

TEST(Adgen, PaddingDoesNotChangePerSampleLoss) {
  const auto samples = oracle_samples(3, 8);
  AdgenModel model(tiny(4));
  // Perturb the zero head so the check is not trivial.
  std::mt19937_64 rng(5);
  std::normal_distribution<float> dist(0.f, 0.5f);
  for (float& v : model.params().value("adgen.out.w").data()) v = dist(rng);
  const auto& l = model.layout();
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<const AdgenSample*> alone{&samples[i]};
    std::vector<const AdgenSample*> padded{&samples[i], &samples[(i + 1) % 8],
                                           &samples[(i + 5) % 8]};
    tensor::Graph<float> ga(model.params());
    const auto la = teacher_forced_loss(ga, l, collate(alone, l.vocab)).value().item();
    const auto bp = collate(padded, l.vocab);
    tensor::Graph<float> gb(model.params());
    Var<float> mem = encode_trajectory(gb, l, bp);
    const auto logits = decode_logits(gb, l, mem, bp.frame_mask, shift_right(bp), bp.batch, bp.length);
    std::vector<int> t(bp.targets.begin(), bp.targets.begin() + static_cast<long>(bp.length));
    std::vector<float> w(t.size());
    for (std::size_t j = 0; j < t.size(); ++j) w[j] = t[j] == describe::kPad ? 0.f : 1.f;
    // Row-wise oracle over sample 0 of the padded batch.
    const auto& v = logits.value();
    double ce = 0.0;
    double count = 0.0;
    for (std::size_t j = 0; j < bp.length; ++j) {
      if (t[j] == describe::kPad) continue;
      const float* row = v.raw() + j * l.vocab;
      double mx = row[0];
      for (std::size_t k = 1; k < l.vocab; ++k) mx = std::max(mx, static_cast<double>(row[k]));
      double z = 0.0;
      for (std::size_t k = 0; k < l.vocab; ++k) z += std::exp(row[k] - mx);
      ce += mx + std::log(z) - row[t[j]];
      count += 1.0;
    }
    EXPECT_NEAR(la, ce / count, 1e-5);
  }
}

TEST(Adgen, DecoderIsCausal) {
  const auto samples = oracle_samples(6, 2);
  AdgenModel model(tiny(7));
  std::mt19937_64 rng(8);
  std::normal_distribution<float> dist(0.f, 0.5f);
  for (float& v : model.params().value("adgen.out.w").data()) v = dist(rng);
  const auto& l = model.layout();
  std::vector<const AdgenSample*> p{&samples[0]};
  const auto b = collate(p, l.vocab);
  auto inputs = shift_right(b);
  auto run = [&](const std::vector<int>& in) {
    tensor::Graph<float> g(model.params());
    auto mem = encode_trajectory(g, l, b);
    return decode_logits(g, l, mem, b.frame_mask, in, 1, b.length).value();
  };
  const auto base = run(inputs);
  const std::size_t cut = b.length / 2;
  for (std::size_t j = cut; j < inputs.size(); ++j) inputs[j] = describe::kPad + 3;
  const auto changed = run(inputs);
  for (std::size_t j = 0; j < cut * l.vocab; ++j) EXPECT_EQ(base[j], changed[j]);
}

TEST(Adgen, GradientCheckInDoublePrecision) {
  const auto samples = oracle_samples(9, 3);
  tensor::ParameterSet<double> params;
  const auto layout = build_adgen(params, tiny(10), describe::Vocabulary::instance().size());
  std::mt19937_64 rng(11);
  std::normal_distribution<double> dist(0.0, 0.3);
  for (double& v : params.value("adgen.out.w").data()) v = dist(rng);
  const auto batch = collate(pointers(samples, 3), layout.vocab);
  tensor::GradientCheckOptions opts;
  opts.max_entries_per_param = 6;
  opts.seed = 12;
  const auto res = tensor::gradient_check(
      params, [&](tensor::Graph<double>& g) { return teacher_forced_loss(g, layout, batch); }, opts);
  EXPECT_LT(res.max_relative_error, 1e-4) << res.worst_parameter << "[" << res.worst_index << "]";
}

TEST(Adgen, OverfitsAndGeneratesTinySet) {
  const auto samples = oracle_samples(13, 8);
  AdgenConfig cfg = tiny(14);
  cfg.d_model = 32;
  cfg.ffn = 64;
  AdgenModel model(cfg);
  TrainAdgenConfig tc;
  tc.epochs = 150;
  tc.batch_size = 8;
  tc.lr = 3e-3;
  tc.val_fraction = 0.0;
  const auto res = train_adgen(model, samples, tc);
  EXPECT_LT(res.curve.back().train_ce, 0.1 * res.initial_val_ce);
  std::mt19937_64 rng(0);
  const auto out = generate(model, pointers(samples, 8), {}, rng);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < out.size(); ++i) exact += out[i] == samples[i].tokens;
  EXPECT_GE(exact, 6u);
}

TEST(Adgen, TrainingIsDeterministic) {
  const auto samples = oracle_samples(15, 12);
  TrainAdgenConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  tc.seed = 16;
  AdgenModel a(tiny(17));
  AdgenModel b(tiny(17));
  const auto ra = train_adgen(a, samples, tc);
  const auto rb = train_adgen(b, samples, tc);
  EXPECT_TRUE(a.params() == b.params());
  EXPECT_EQ(ra.curve.back().val_ce, rb.curve.back().val_ce);
  EXPECT_EQ(ra.val_indices, rb.val_indices);
}

}  // namespace
