// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
//
//   descrl_acceptance [--only 1,2,...] [--runs DIR] [--fresh]
//
// Criteria 9 and 10 train the toy SAVNav grid through the sweep driver;
// finished runs under DIR are reused unless --fresh is given.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "descrl/adgen/adgen.hpp"
#include "descrl/cli/commands.hpp"
#include "descrl/tensor/adam.hpp"
#include "descrl/tensor/gradcheck.hpp"
#include "descrl/tensor/ops.hpp"
#include "descrl/train/trainer.hpp"
#include "descrl/util/seed.hpp"
#include "metric_oracle.hpp"
#include "primitive_cases.hpp"

#ifndef DESCRL_SOURCE_DIR
#define DESCRL_SOURCE_DIR "."
#endif

namespace {

namespace fs = std::filesystem;
using namespace descrl;
using agent::AuxKind;
using Clock = std::chrono::steady_clock;
using tensor::ParameterSet;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

agent::AgentConfig tiny_agent(AuxKind aux, std::uint64_t seed) {
  agent::AgentConfig c;
  c.d_model = 8;
  c.heads = 2;
  c.ffn = 8;
  c.n_enc_layers = 1;
  c.memory = 4;
  c.patch_embed = 2;
  c.aux = aux;
  c.seed = seed;
  agent::set_shared_layers(c, 2);
  return c;
}

train::TrainConfig tiny_train(AuxKind aux, double lambda, std::uint64_t seed) {
  train::TrainConfig c;
  c.agent = tiny_agent(aux, seed);
  c.lambda = lambda;
  c.envs = 3;
  c.horizon = 8;
  c.ppo.minibatch = 8;
  c.ppo.epochs = 2;
  c.updates = 4;
  c.train_worlds = 4;
  c.description_stride = 1;
  c.description_k = 5;
  c.sampling.max_steps = 15;
  c.eval_episodes = 6;
  c.eval_worlds = 2;
  c.pretrain_updates = 6;
  c.pretrain_samples = 36;
  c.pretrain_batch = 6;
  c.seed = seed;
  return c;
}

template <typename Real>
void perturb(ParameterSet<Real>& p, std::uint64_t seed,
             const std::function<bool(std::string_view)>& which, double sd = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sd);
  for (tensor::ParamId i = 0; i < p.size(); ++i) {
    if (!which(p.name(i))) continue;
    for (auto& v : p.value(i).data()) v = static_cast<Real>(dist(rng));
  }
}

bool is_head(std::string_view n) {
  return n.starts_with("policy_head.") || n.starts_with("value_head.") ||
         n.starts_with("ad_head.") || n.starts_with("aux.");
}

std::vector<const train::Sample*> pointers(const std::vector<train::Sample>& s) {
  std::vector<const train::Sample*> out;
  for (const auto& x : s) out.push_back(&x);
  return out;
}

double grad_norm(const tensor::Gradients<float>& g, const ParameterSet<float>& p,
                 const std::function<bool(std::string_view)>& pred) {
  double n = 0.0;
  for (tensor::ParamId i = 0; i < p.size(); ++i) {
    if (!pred(p.name(i)) || g[i].size() == 0) continue;
    for (std::size_t k = 0; k < g[i].size(); ++k) n += double(g[i][k]) * g[i][k];
  }
  return std::sqrt(n);
}

auto prefix(std::string_view pre) {
  return [pre](std::string_view n) { return n.starts_with(pre); };
}

// 1 -------------------------------------------------------------------------

Outcome autodiff_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (auto& c : descrl::testing::primitive_cases(seed)) {
      const auto r = tensor::gradient_check(c.params, c.loss, {.seed = seed});
      ++cases;
      if (r.max_relative_error > worst) {
        worst = r.max_relative_error;
        worst_name = c.name;
      }
    }
  }

  // Full agent loss: PPO terms, goal descriptor and description CE.
  const auto ac = tiny_agent(AuxKind::kDescPast, 21);
  agent::Agent fa(ac);
  auto cfg = tiny_train(AuxKind::kDescPast, 0.7, 21);
  cfg.envs = 2;
  cfg.horizon = 3;
  train::RolloutPool pool(cfg, 1);
  auto samples = pool.collect(fa);
  ParameterSet<double> params;
  const auto layout = agent::build_agent(params, ac);
  perturb(params, 22, is_head);
  {
    tensor::Graph<double> g(params);
    std::vector<std::span<const sim::Observation>> w;
    for (const auto& s : samples) w.emplace_back(s.window);
    const auto f = agent::forward_policy(g, layout, agent::pack_memory(w, ac.memory));
    const auto lp = tensor::log_softmax(f.action_logits).value();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      samples[i].log_prob =
          static_cast<float>(lp.at(i, static_cast<std::size_t>(samples[i].action)));
      samples[i].advantage = 0.3 * (static_cast<double>(i % 3) - 1.0) + 0.1;
    }
  }
  const auto batch = pointers(samples);
  const auto agent_res = tensor::gradient_check(
      params,
      [&](tensor::Graph<double>& g) { return train::minibatch_loss(g, layout, cfg, batch).total; },
      {.step = 1e-5, .max_entries_per_param = 4, .seed = 23});

  // Standalone generator loss.
  describe::DatasetConfig dc;
  dc.seed = 9;
  dc.samples = 3;
  dc.worlds = 2;
  const auto gen_samples = adgen::make_samples(describe::build_dataset(dc));
  ParameterSet<double> gparams;
  adgen::AdgenConfig gc;
  gc.d_model = 8;
  gc.heads = 2;
  gc.ffn = 8;
  gc.enc_layers = 1;
  gc.dec_layers = 1;
  gc.patch_embed = 2;
  const auto glayout =
      adgen::build_adgen(gparams, gc, describe::Vocabulary::instance().size());
  perturb(gparams, 11, [](std::string_view n) { return n == "adgen.out.w"; });
  std::vector<const adgen::AdgenSample*> gp;
  for (const auto& s : gen_samples) gp.push_back(&s);
  const auto gbatch = adgen::collate(gp, glayout.vocab);
  const auto gen_res = tensor::gradient_check(
      gparams,
      [&](tensor::Graph<double>& g) { return adgen::teacher_forced_loss(g, glayout, gbatch); },
      {.max_entries_per_param = 6, .seed = 12});

  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-4 && agent_res.max_relative_error < 1e-4 &&
                    gen_res.max_relative_error < 1e-4 && secs < 120.0;
  return {pass, "primitives " + std::to_string(cases) + " cases max " + fmt("%.2e", worst) + " (" +
                    worst_name + "), agent loss " + fmt("%.2e", agent_res.max_relative_error) +
                    ", generator loss " + fmt("%.2e", gen_res.max_relative_error) + ", " +
                    fmt("%.1f s", secs)};
}

// 2 -------------------------------------------------------------------------

Outcome metric_oracle() {
  const auto t0 = Clock::now();
  bool exact = true, invariant = true;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto records = descrl::testing::random_records(seed, 500);
    const auto m = eval::compute_metrics(records);
    const auto o = descrl::testing::oracle_metrics(records);
    exact = exact && m.sr == o.sr && m.spl == o.spl && m.sna == o.sna && m.dtg == o.dtg &&
            m.sws.has_value() == o.sws.has_value() && (!m.sws || *m.sws == *o.sws);
    invariant = invariant && m.spl <= m.sr && m.sna <= m.sr;
    for (const auto& r : records) {
      const auto one = eval::compute_metrics(std::span<const eval::EpisodeRecord>(&r, 1));
      invariant = invariant && one.spl <= one.sr && one.sna <= one.sr;
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  return {exact && invariant && secs < 10.0,
          std::string("5 sets of 500 records ") + (exact ? "match exactly" : "MISMATCH") +
              ", SPL<=SR and SNA<=SR " + (invariant ? "hold" : "VIOLATED") + " on " +
              std::to_string(checked) + " records, " + fmt("%.2f s", secs)};
}

// 3 -------------------------------------------------------------------------

Outcome init_oracle() {
  const double log_v = std::log(static_cast<double>(describe::Vocabulary::instance().size()));
  describe::DatasetConfig dc;
  dc.seed = 1;
  dc.samples = 16;
  dc.worlds = 4;
  const auto samples = adgen::make_samples(describe::build_dataset(dc));
  adgen::AdgenModel model;
  std::vector<const adgen::AdgenSample*> p;
  for (const auto& s : samples) p.push_back(&s);
  const auto batch = adgen::collate(p, model.layout().vocab);
  tensor::Graph<float> g(model.params());
  const double gen_ce = adgen::teacher_forced_loss(g, model.layout(), batch).value().item();

  agent::Agent a(tiny_agent(AuxKind::kDescPast, 0));
  const auto cfg = tiny_train(AuxKind::kDescPast, 0.1, 0);
  train::RolloutPool pool(cfg, 1);
  const auto rs = pool.collect(a);
  tensor::Graph<float> g2(a.params());
  const double pred_ce = train::minibatch_loss(g2, a.layout(), cfg, pointers(rs)).ce->value().item();

  agent::Agent b(tiny_agent(AuxKind::kNextAction, 0));
  const auto ncfg = tiny_train(AuxKind::kNextAction, 0.1, 0);
  train::RolloutPool npool(ncfg, 1);
  const auto ns = npool.collect(b);
  tensor::Graph<float> g3(b.params());
  const double next_ce =
      train::minibatch_loss(g3, b.layout(), ncfg, pointers(ns)).aux->value().item();

  const bool pass = std::abs(gen_ce - log_v) <= 1e-4 && std::abs(pred_ce - log_v) <= 1e-4 &&
                    std::abs(next_ce - std::log(4.0)) <= 1e-4;
  return {pass, "ln|V| " + fmt("%.6f", log_v) + ": generator " + fmt("%.6f", gen_ce) +
                    ", predictor " + fmt("%.6f", pred_ce) + "; next action " +
                    fmt("%.6f", next_ce) + " vs ln 4 " + fmt("%.6f", std::log(4.0))};
}

// 4 -------------------------------------------------------------------------

Outcome gradient_routing() {
  agent::Agent a(tiny_agent(AuxKind::kDescPast, 13));
  perturb(a.params(), 14, is_head);
  const auto cfg = tiny_train(AuxKind::kDescPast, 0.1, 13);
  train::RolloutPool pool(cfg, 1);
  const auto samples = pool.collect(a);
  const auto batch = pointers(samples);
  const auto& p = a.params();
  tensor::Graph<float> g1(a.params());
  const auto ce = g1.backward(*train::minibatch_loss(g1, a.layout(), cfg, batch).ce);
  tensor::Graph<float> g2(a.params());
  const auto rl = g2.backward(train::minibatch_loss(g2, a.layout(), cfg, batch).rl);

  const double ce_policy = grad_norm(ce, p, agent::is_policy_param);
  const double rl_desc = grad_norm(rl, p, agent::is_description_param);
  const double ce_shared = grad_norm(ce, p, prefix("shared_dec."));
  const double ce_obs = grad_norm(ce, p, prefix("obs."));
  const double ce_enc = grad_norm(ce, p, prefix("enc."));
  const bool pass = a.config().n_shared_dec == 2 && ce_policy == 0.0 && rl_desc == 0.0 &&
                    ce_shared > 0.0 && ce_obs > 0.0 && ce_enc > 0.0;
  return {pass, "N_SD=2: |dCE/policy side| " + fmt("%g", ce_policy) + ", |dRL/description side| " +
                    fmt("%g", rl_desc) + ", |dCE/shared decoder| " + fmt("%.3g", ce_shared) +
                    ", |dCE/observation encoder| " + fmt("%.3g", ce_obs) +
                    ", |dCE/memory encoder| " + fmt("%.3g", ce_enc)};
}

// 5 -------------------------------------------------------------------------

Outcome freeze_contract() {
  auto cfg = tiny_train(AuxKind::kDescPast, 0.1, 11);
  agent::Agent a(cfg.agent);
  perturb(a.params(), 12, is_head);
  const auto before = a.params();
  describe::DatasetConfig dc;
  dc.seed = 12;
  dc.samples = cfg.pretrain_samples;
  dc.k = cfg.description_k;
  dc.worlds = 3;
  const auto samples = train::pretrain_samples(describe::build_dataset(dc), cfg.agent.memory, 13);
  const auto result = train::pretrain_adpredictor(a, samples, cfg);
  std::size_t frozen = 0, moved_frozen = 0, description_moved = 0;
  for (tensor::ParamId i = 0; i < a.params().size(); ++i) {
    const auto& n = a.params().name(i);
    const bool same = a.params().value(i) == before.value(i);
    if (agent::is_policy_param(n)) {
      ++frozen;
      moved_frozen += !same;
    } else if (agent::is_description_param(n) && !same) {
      ++description_moved;
    }
  }
  const bool pass = frozen > 0 && moved_frozen == 0 && description_moved > 0 &&
                    result.ce_curve.back() < result.ce_curve.front();
  return {pass, std::to_string(frozen) + " policy-side tensors, " + std::to_string(moved_frozen) +
                    " changed; " + std::to_string(description_moved) +
                    " description tensors trained, CE " + fmt("%.3f", result.ce_curve.front()) +
                    " -> " + fmt("%.3f", result.ce_curve.back())};
}

// 6 -------------------------------------------------------------------------

Outcome generator_learning() {
  const auto t0 = Clock::now();
  describe::DatasetConfig dc;
  dc.seed = 2024;
  dc.samples = 2000;
  dc.mode = describe::Mode::kPast;
  dc.k = 8;
  const auto samples = adgen::make_samples(describe::build_dataset(dc));
  adgen::AdgenConfig mc;
  mc.d_model = 64;
  mc.heads = 4;
  mc.ffn = 128;
  mc.enc_layers = 2;
  mc.dec_layers = 2;
  mc.seed = 7;
  adgen::AdgenModel model(mc);
  adgen::TrainAdgenConfig tc;
  tc.epochs = 10;
  tc.batch_size = 32;
  tc.lr = 1e-3;
  tc.val_fraction = 0.1;
  tc.seed = 7;
  const auto res = adgen::train_adgen(model, samples, tc);
  double best = res.initial_val_ce;
  int best_epoch = 0;
  for (const auto& e : res.curve) {
    if (e.val_ce < best) {
      best = e.val_ce;
      best_epoch = e.epoch;
    }
  }
  const double threshold = 0.5 * std::log(static_cast<double>(model.layout().vocab));

  const std::size_t shown = std::min<std::size_t>(200, res.train_indices.size());
  std::vector<const adgen::AdgenSample*> p;
  for (std::size_t i = 0; i < shown; ++i) p.push_back(&samples[res.train_indices[i]]);
  std::mt19937_64 rng(0);
  const auto out = adgen::generate(model, p, eval::DecodeConfig{}, rng);
  std::size_t matched = 0, total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& target = p[i]->tokens;
    for (std::size_t k = 0; k < target.size(); ++k) {
      matched += k < out[i].size() && out[i][k] == target[k];
    }
    total += target.size();
  }
  const double match = static_cast<double>(matched) / static_cast<double>(total);
  const double secs = seconds_since(t0);
  const bool pass = best < threshold && match >= 0.6 && secs < 600.0;
  return {pass, "val CE " + fmt("%.3f", res.initial_val_ce) + " -> " + fmt("%.3f", best) +
                    " (epoch " + std::to_string(best_epoch) + ", target < " +
                    fmt("%.3f", threshold) + "), token match on " + std::to_string(shown) +
                    " train samples " + fmt("%.1f%%", 100.0 * match) + ", " +
                    fmt("%.0f s", secs)};
}

// 7 -------------------------------------------------------------------------

// PPO written out without any auxiliary term, seeded like train_joint.
void pure_ppo(agent::Agent& a, const train::TrainConfig& cfg) {
  train::RolloutPool pool(cfg, util::derive_seed(cfg.seed, "rollout"));
  tensor::Adam<float> opt(a.params(), {.lr = cfg.ppo.lr});
  std::mt19937_64 rng(util::derive_seed(cfg.seed, "minibatch"));
  for (int u = 0; u < cfg.updates; ++u) {
    auto samples = pool.collect(a);
    std::vector<double> adv;
    for (const auto& s : samples) adv.push_back(s.advantage);
    train::normalize(adv);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].advantage = adv[i];
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (int e = 0; e < cfg.ppo.epochs; ++e) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t start = 0; start < order.size(); start += cfg.ppo.minibatch) {
        std::vector<const train::Sample*> batch;
        for (std::size_t i = start; i < std::min(order.size(), start + cfg.ppo.minibatch); ++i) {
          batch.push_back(&samples[order[i]]);
        }
        tensor::Gradients<float> grads;
        {
          tensor::Graph<float> g(a.params());
          grads = g.backward(train::minibatch_loss(g, a.layout(), cfg, batch).rl);
        }
        tensor::clip_grad_norm(grads, cfg.ppo.max_grad_norm);
        opt.step(a.params(), grads);
      }
    }
  }
}

Outcome lambda_reduction() {
  const auto base = tiny_train(AuxKind::kNone, 0.0, 7);
  agent::Agent reference(base.agent);
  pure_ppo(reference, base);
  agent::Agent joint(base.agent);
  train::train_joint(joint, base);
  const bool same_none = joint.params() == reference.params();

  auto desc = base;
  desc.agent.aux = AuxKind::kDescPast;
  agent::Agent with_desc(desc.agent);
  train::train_joint(with_desc, desc);
  const bool same_desc = with_desc.params() == reference.params();

  auto comp = tiny_train(AuxKind::kDescPast, 0.37, 5);
  agent::Agent c(comp.agent);
  train::RolloutPool pool(comp, 2);
  const auto samples = pool.collect(c);
  tensor::Graph<float> g(c.params());
  const auto l = train::minibatch_loss(g, c.layout(), comp, pointers(samples));
  const float expect = l.rl.value().item() + static_cast<float>(comp.lambda) * l.ce->value().item();
  const bool composes = l.total.value().item() == expect;
  tensor::Graph<float> g0(c.params());
  auto zero = comp;
  zero.lambda = 0.0;
  const auto l0 = train::minibatch_loss(g0, c.layout(), zero, pointers(samples));
  const bool zero_exact = l0.total.value().item() == l0.rl.value().item();

  return {same_none && same_desc && composes && zero_exact,
          std::string("lambda=0 aux=none vs hand-written PPO: ") +
              (same_none ? "bit-identical" : "DIFFERENT") + "; lambda=0 desc_past: " +
              (same_desc ? "bit-identical" : "DIFFERENT") + "; total = L_RL + lambda*L_CE " +
              (composes ? "exact" : "INEXACT") + "; lambda=0 total = L_RL " +
              (zero_exact ? "exact" : "INEXACT")};
}

// 8 -------------------------------------------------------------------------

Outcome distill_reduction() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto cfg = tiny_train(AuxKind::kDescPast, 0.1, 40 + seed);
    agent::Agent a(cfg.agent);
    perturb(a.params(), 50 + seed, prefix("ad_head."), 0.5);
    train::RolloutPool pool(cfg, 60 + seed);
    const auto samples = pool.collect(a);
    const auto batch = pointers(samples);
    tensor::Graph<float> g1(a.params());
    const double hard = train::minibatch_loss(g1, a.layout(), cfg, batch).ce->value().item();
    cfg.distill = true;
    cfg.smoothing = 0.0;
    cfg.distill_temperature = 1.0;
    tensor::Graph<float> g2(a.params());
    const double soft = train::minibatch_loss(g2, a.layout(), cfg, batch).ce->value().item();
    worst = std::max(worst, std::abs(soft - hard));
  }
  return {worst <= 1e-6, "max |soft - hard| over 5 random batches " + fmt("%.2e", worst)};
}

// 9 and 10 ----------------------------------------------------------------

struct TrendRuns {
  std::map<std::string, std::map<std::uint64_t, eval::Metrics>> sr;
  double fresh_seconds = 0.0;
  std::size_t fresh = 0;
  std::size_t reused = 0;
};

cli::SweepSpec toy_spec(const std::vector<std::pair<std::string, nlohmann::json>>& cells,
                        std::vector<std::uint64_t> seeds) {
  nlohmann::json grid{{"base", "toy_savnav.json"}, {"cells", nlohmann::json::array()}, {"seeds", seeds}};
  for (const auto& [name, o] : cells) grid["cells"].push_back({{"name", name}, {"overrides", o}});
  return cli::sweep_from_json(grid, fs::path(DESCRL_SOURCE_DIR) / "configs");
}

void run_toy(TrendRuns& runs, const cli::SweepSpec& spec, const fs::path& dir) {
  const auto t0 = Clock::now();
  std::ostringstream log;
  for (const auto& r : cli::run_sweep(spec, dir, log)) {
    runs.sr[r.cell][r.seed] = r.metrics;
    (r.reused ? runs.reused : runs.fresh) += 1;
  }
  runs.fresh_seconds += seconds_since(t0);
}

std::string sr_list(const std::map<std::uint64_t, eval::Metrics>& m) {
  std::string s;
  for (const auto& [seed, v] : m) s += (s.empty() ? "" : " ") + fmt("%.3f", v.sr);
  return s;
}

double mean_sr(const std::map<std::uint64_t, eval::Metrics>& m) {
  double t = 0.0;
  for (const auto& [seed, v] : m) t += v.sr;
  return t / static_cast<double>(m.size());
}

Outcome desc_trend(TrendRuns& runs, const fs::path& dir) {
  const std::size_t fresh_before = runs.fresh;
  const double secs_before = runs.fresh_seconds;
  run_toy(runs, toy_spec({{"none", {{"aux", "none"}, {"lambda", 0.0}}}, {"desc_past", {{"aux", "desc_past"}}}},
                         {1, 2, 3, 4, 5}),
          dir);
  const auto& none = runs.sr["none"];
  const auto& desc = runs.sr["desc_past"];
  int wins = 0;
  for (const auto& [seed, m] : desc) wins += m.sr > none.at(seed).sr;
  const double secs = runs.fresh_seconds - secs_before;
  const std::size_t fresh = runs.fresh - fresh_before;
  const bool pass = mean_sr(desc) >= mean_sr(none) && wins >= 3 && secs < 7200.0;
  return {pass, "mean SR desc_past " + fmt("%.3f", mean_sr(desc)) + " [" + sr_list(desc) +
                    "] vs none " + fmt("%.3f", mean_sr(none)) + " [" + sr_list(none) + "], wins " +
                    std::to_string(wins) + "/5, " + std::to_string(fresh) + " runs trained in " +
                    fmt("%.0f s", secs) +
                    (fresh < 10 ? ", " + std::to_string(10 - fresh) + " reused from " + dir.string()
                                : "")};
}

Outcome pretrain_ablation(TrendRuns& runs, const fs::path& dir) {
  const std::size_t fresh_before = runs.fresh;
  const double secs_before = runs.fresh_seconds;
  run_toy(runs, toy_spec({{"desc_past", {{"aux", "desc_past"}}},
                          {"desc_past_pt", {{"aux", "desc_past"}, {"pt", "on"}}}},
                         {1, 2, 3}),
          dir);
  std::map<std::uint64_t, eval::Metrics> off, on;
  for (std::uint64_t s : {1, 2, 3}) {
    off[s] = runs.sr["desc_past"].at(s);
    on[s] = runs.sr["desc_past_pt"].at(s);
  }
  const bool pass = mean_sr(on) >= mean_sr(off);
  return {pass, "mean SR PT=on " + fmt("%.3f", mean_sr(on)) + " [" + sr_list(on) + "] vs PT=off " +
                    fmt("%.3f", mean_sr(off)) + " [" + sr_list(off) + "], " +
                    std::to_string(runs.fresh - fresh_before) + " runs trained in " +
                    fmt("%.0f s", runs.fresh_seconds - secs_before)};
}

// 11 ------------------------------------------------------------------------

Outcome decoding_properties() {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> dist(0.0, 3.0);
  const int vocab = describe::Vocabulary::instance().size();
  auto logits = [&] {
    std::vector<float> v(static_cast<std::size_t>(vocab));
    for (float& x : v) x = static_cast<float>(dist(gen));
    return v;
  };
  bool topk1 = true, greedy_tau = true, nucleus_ok = true;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto l = logits();
    const int ref = eval::argmax(l);
    topk1 = topk1 && eval::decode_token(l, {.strategy = eval::Strategy::kTopK, .temperature = 2.0, .k = 1}, rng) == ref;
    for (double t : {0.1, 1.0, 2.0, 25.0}) {
      greedy_tau = greedy_tau && eval::decode_token(l, {.temperature = t}, rng) == ref;
    }
  }
  const eval::DecodeConfig top_p{.strategy = eval::Strategy::kTopP, .temperature = 2.0, .p = 0.95};
  const auto l = logits();
  const auto set = eval::nucleus(l, top_p.temperature, top_p.p);
  const std::set<int> allowed(set.begin(), set.end());
  for (int i = 0; i < 10000; ++i) nucleus_ok = nucleus_ok && allowed.contains(eval::decode_token(l, top_p, rng));

  // Published settings end to end on an agent.
  bool runs = true;
  try {
    agent::Agent a(tiny_agent(AuxKind::kDescPast, 5));
    perturb(a.params(), 6, is_head);
    const auto cfg = tiny_train(AuxKind::kDescPast, 0.1, 5);
    train::RolloutPool pool(cfg, 1);
    const auto samples = pool.collect(a);
    std::vector<std::span<const sim::Observation>> w;
    for (std::size_t i = 0; i < 6; ++i) w.emplace_back(samples[i].window);
    const auto batch = agent::pack_memory(w, a.config().memory);
    for (const eval::DecodeConfig& d :
         {eval::DecodeConfig{.strategy = eval::Strategy::kGreedy, .temperature = 2.0},
          eval::DecodeConfig{.strategy = eval::Strategy::kTopK, .temperature = 2.0, .k = 10},
          eval::DecodeConfig{.strategy = eval::Strategy::kTopP, .temperature = 2.0, .p = 0.95}}) {
      eval::validate(d);
      std::mt19937_64 r(7);
      for (const auto& tokens : agent::decode_descriptions(a, batch, d, r)) {
        runs = runs && !tokens.empty() &&
               tokens.size() <= static_cast<std::size_t>(describe::kMaxDescriptionLength);
      }
    }
  } catch (const std::exception&) {
    runs = false;
  }
  const bool pass = topk1 && greedy_tau && nucleus_ok && runs;
  return {pass, std::string("top-k(1)=greedy ") + (topk1 ? "yes" : "NO") + ", greedy tau-invariant " +
                    (greedy_tau ? "yes" : "NO") + ", 10000 top-p draws inside nucleus of " +
                    std::to_string(set.size()) + " " + (nucleus_ok ? "yes" : "NO") +
                    ", tau=2 k=10 p=0.95 decoding " + (runs ? "ran" : "FAILED")};
}

// 12 ------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

/// Relative paths of every CSV and JSONL file under `root` (or `root` itself).
std::vector<fs::path> data_files(const fs::path& root) {
  std::vector<fs::path> out;
  auto keep = [](const fs::path& p) { return p.extension() == ".csv" || p.extension() == ".jsonl"; };
  if (fs::is_regular_file(root)) {
    if (keep(root)) out.emplace_back();
    return out;
  }
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && keep(e.path())) out.push_back(fs::relative(e.path(), root));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Outcome manifest_determinism(const fs::path& work) {
  fs::remove_all(work);
  fs::create_directories(work);
  train::TrainConfig tc = tiny_train(AuxKind::kDescPast, 0.2, 3);
  const auto cfg_path = work / "tiny.json";
  std::ofstream(cfg_path) << train::to_json(tc).dump(2);
  const nlohmann::json grid{{"base", "tiny.json"},
                            {"cells",
                             {{{"name", "none"}, {"overrides", {{"aux", "none"}, {"lambda", 0.0}}}},
                              {{"name", "pt"}, {"overrides", {{"pt", "on"}}}}}},
                            {"seeds", {1, 2}}};
  std::ofstream(work / "grid.json") << grid.dump(2);

  struct Command {
    std::string name;
    std::vector<std::string> args;
    fs::path out;
    fs::path manifest;
  };
  const auto w = [&](const char* p) { return (work / p).string(); };
  std::vector<Command> commands{
      {"gen-dataset",
       {"gen-dataset", "--seed", "5", "--n", "40", "--mode", "pf", "--k", "7"},
       work / "data.jsonl",
       work / "data.jsonl.manifest.json"},
      {"pretrain-adgen",
       {"pretrain-adgen", "--data", w("data.jsonl"), "--epochs", "2", "--d-model", "8", "--heads",
        "2", "--ffn", "8", "--layers", "1", "--batch", "8", "--show", "5"},
       work / "adgen",
       work / "adgen/manifest.json"},
      {"train",
       {"train", "--config", cfg_path.string(), "--pt", "on", "--nsd", "1", "--seed", "4"},
       work / "train",
       work / "train/manifest.json"},
      {"eval",
       {"eval", "--run", w("train"), "--episodes", "5", "--decode", "top_p", "--temperature", "2",
        "--unheard"},
       work / "eval",
       work / "eval/manifest.json"},
      {"sweep", {"sweep", "--grid", w("grid.json")}, work / "sweep", work / "sweep/manifest.json"}};

  std::size_t files = 0;
  std::vector<std::string> problems;
  for (auto& c : commands) {
    auto args = c.args;
    args.push_back("--out");
    args.push_back(c.out.string());
    std::ostringstream out, err;
    if (cli::run(args, out, err) != 0) {
      problems.push_back(c.name + " failed: " + err.str());
      continue;
    }
    const fs::path again = c.out.string() + ".rerun" + c.out.extension().string();
    if (cli::run({"rerun", "--manifest", c.manifest.string(), "--out", again.string()}, out, err) != 0) {
      problems.push_back(c.name + " rerun failed: " + err.str());
      continue;
    }
    const auto first = data_files(c.out);
    const auto second = data_files(again);
    if (first.empty() || first != second) {
      problems.push_back(c.name + " produced different file sets");
      continue;
    }
    for (const auto& rel : first) {
      ++files;
      if (slurp(c.out / rel) != slurp(again / rel)) {
        problems.push_back(c.name + " " + (c.out / rel).filename().string() + " differs");
      }
    }
  }
  std::string detail = std::to_string(commands.size()) + " commands rerun from manifests, " +
                       std::to_string(files) + " CSV/JSONL files compared";
  for (const auto& p : problems) detail += "; " + p;
  if (problems.empty()) fs::remove_all(work);
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path runs_dir = fs::current_path() / "acceptance_runs";
  bool fresh = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else if (a == "--runs" && i + 1 < argc) {
      runs_dir = argv[++i];
    } else if (a == "--fresh") {
      fresh = true;
    } else {
      std::cerr << "usage: descrl_acceptance [--only 1,2,...] [--runs DIR] [--fresh]\n";
      return 2;
    }
  }
  if (fresh) fs::remove_all(runs_dir / "toy");

  TrendRuns trend;
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, autodiff_suite},
      {2, metric_oracle},
      {3, init_oracle},
      {4, gradient_routing},
      {5, freeze_contract},
      {6, generator_learning},
      {7, lambda_reduction},
      {8, distill_reduction},
      {9, [&] { return desc_trend(trend, runs_dir / "toy"); }},
      {10, [&] { return pretrain_ablation(trend, runs_dir / "toy"); }},
      {11, decoding_properties},
      {12, [&] { return manifest_determinism(runs_dir / "determinism"); }},
  };
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
