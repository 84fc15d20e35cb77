#include "descrl/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

#include "descrl/tensor/checkpoint.hpp"
#include "descrl/util/csv.hpp"
#include "descrl/util/seed.hpp"

namespace descrl::train {

using agent::ConfigError;
using tensor::Graph;
using tensor::Tensor;

// GAE -------------------------------------------------------------------

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> done, double bootstrap, double gamma,
                      double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || done.size() != n) {
    throw std::invalid_argument("rewards, values and done flags differ in length");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double gae = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = i + 1 < n ? values[i + 1] : bootstrap;
    const double live = done[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    gae = delta + gamma * lambda * live * gae;
    out.advantages[i] = gae;
    out.returns[i] = gae + values[i];
  }
  return out;
}

void normalize(std::vector<double>& x) {
  if (x.empty()) return;
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(x.size()));
  for (double& v : x) v = sd > 1e-8 ? (v - mean) / sd : v - mean;
}

// Configuration ---------------------------------------------------------

void validate(const TrainConfig& cfg) {
  agent::validate(cfg.agent);
  if (!(cfg.lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (cfg.envs == 0 || cfg.horizon == 0) throw ConfigError("envs and horizon must be positive");
  if (cfg.updates < 0) throw ConfigError("update count must be non-negative");
  if (cfg.description_stride < 1) throw ConfigError("description stride must be positive");
  if (cfg.description_k < 1) throw ConfigError("description window must be positive");
  if (cfg.train_worlds == 0) throw ConfigError("at least one training world is required");
  if (cfg.ppo.minibatch == 0 || cfg.ppo.epochs < 1) {
    throw ConfigError("PPO needs a positive minibatch and epoch count");
  }
  if (cfg.pretrain && !agent::is_description(cfg.agent.aux)) {
    throw ConfigError("pretraining needs a description auxiliary task");
  }
  if (cfg.distill && !agent::is_description(cfg.agent.aux)) {
    throw ConfigError("distillation needs a description auxiliary task");
  }
  if (cfg.distill && !(cfg.smoothing >= 0.0 && cfg.smoothing < 1.0)) {
    throw ConfigError("label smoothing must lie in [0, 1)");
  }
  if (cfg.distill && !(cfg.distill_temperature > 0.0)) {
    throw ConfigError("distillation temperature must be positive");
  }
}

namespace {

nlohmann::json env_json(const sim::EnvConfig& e) {
  nlohmann::json j = {{"noise_sigma", e.noise_sigma}, {"reward", nullptr}};
  if (e.reward) {
    const auto& r = *e.reward;
    j["reward"] = {{"goal_bonus", r.goal_bonus},
                   {"step_penalty", r.step_penalty},
                   {"shaping", r.shaping},
                   {"as_written_sign", r.as_written_sign},
                   {"penalize_retreat", r.penalize_retreat}};
  }
  return j;
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  const auto& p = c.ppo;
  return {
      {"agent", agent::to_json(c.agent)},
      {"lambda", c.lambda},
      {"distill", c.distill},
      {"smoothing", c.smoothing},
      {"distill_temperature", c.distill_temperature},
      {"description_k", c.description_k},
      {"description_stride", c.description_stride},
      {"average_ce", c.average_ce},
      {"goal_coef", c.goal_coef},
      {"pretrain", c.pretrain},
      {"pretrain_updates", c.pretrain_updates},
      {"pretrain_samples", c.pretrain_samples},
      {"pretrain_batch", c.pretrain_batch},
      {"pretrain_lr", c.pretrain_lr},
      {"updates", c.updates},
      {"envs", c.envs},
      {"horizon", c.horizon},
      {"ppo",
       {{"gamma", p.gamma},
        {"gae_lambda", p.gae_lambda},
        {"clip", p.clip},
        {"entropy_coef", p.entropy_coef},
        {"value_coef", p.value_coef},
        {"max_grad_norm", p.max_grad_norm},
        {"epochs", p.epochs},
        {"minibatch", p.minibatch},
        {"lr", p.lr},
        {"normalize_advantages", p.normalize_advantages}}},
      {"world",
       {{"height", c.world.height},
        {"width", c.world.width},
        {"rooms", c.world.rooms},
        {"objects", c.world.objects}}},
      {"train_worlds", c.train_worlds},
      {"sampling",
       {{"max_steps", c.sampling.max_steps},
        {"success_radius", c.sampling.success_radius},
        {"mode", sim::reward_mode_name(c.sampling.mode)},
        {"sound_stops", c.sampling.sound_stops},
        {"unheard", c.sampling.unheard},
        {"min_start_distance", c.sampling.min_start_distance}}},
      {"env", env_json(c.env)},
      {"eval_every", c.eval_every},
      {"eval_episodes", c.eval_episodes},
      {"eval_worlds", c.eval_worlds},
      {"seed", c.seed},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("agent")) c.agent = agent::agent_config_from_json(j.at("agent"));
  c.lambda = j.value("lambda", c.lambda);
  c.distill = j.value("distill", c.distill);
  c.smoothing = j.value("smoothing", c.smoothing);
  c.distill_temperature = j.value("distill_temperature", c.distill_temperature);
  c.description_k = j.value("description_k", c.description_k);
  c.description_stride = j.value("description_stride", c.description_stride);
  c.average_ce = j.value("average_ce", c.average_ce);
  c.goal_coef = j.value("goal_coef", c.goal_coef);
  c.pretrain = j.value("pretrain", c.pretrain);
  c.pretrain_updates = j.value("pretrain_updates", c.pretrain_updates);
  c.pretrain_samples = j.value("pretrain_samples", c.pretrain_samples);
  c.pretrain_batch = j.value("pretrain_batch", c.pretrain_batch);
  c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
  c.updates = j.value("updates", c.updates);
  c.envs = j.value("envs", c.envs);
  c.horizon = j.value("horizon", c.horizon);
  if (j.contains("ppo")) {
    const auto& p = j.at("ppo");
    c.ppo.gamma = p.value("gamma", c.ppo.gamma);
    c.ppo.gae_lambda = p.value("gae_lambda", c.ppo.gae_lambda);
    c.ppo.clip = p.value("clip", c.ppo.clip);
    c.ppo.entropy_coef = p.value("entropy_coef", c.ppo.entropy_coef);
    c.ppo.value_coef = p.value("value_coef", c.ppo.value_coef);
    c.ppo.max_grad_norm = p.value("max_grad_norm", c.ppo.max_grad_norm);
    c.ppo.epochs = p.value("epochs", c.ppo.epochs);
    c.ppo.minibatch = p.value("minibatch", c.ppo.minibatch);
    c.ppo.lr = p.value("lr", c.ppo.lr);
    c.ppo.normalize_advantages = p.value("normalize_advantages", c.ppo.normalize_advantages);
  }
  if (j.contains("world")) {
    const auto& w = j.at("world");
    c.world.height = w.value("height", c.world.height);
    c.world.width = w.value("width", c.world.width);
    c.world.rooms = w.value("rooms", c.world.rooms);
    c.world.objects = w.value("objects", c.world.objects);
  }
  c.train_worlds = j.value("train_worlds", c.train_worlds);
  if (j.contains("sampling")) {
    const auto& s = j.at("sampling");
    c.sampling.max_steps = s.value("max_steps", c.sampling.max_steps);
    c.sampling.success_radius = s.value("success_radius", c.sampling.success_radius);
    if (s.contains("mode")) {
      c.sampling.mode = sim::reward_mode_from_name(s.at("mode").get<std::string>());
    }
    c.sampling.sound_stops = s.value("sound_stops", c.sampling.sound_stops);
    c.sampling.unheard = s.value("unheard", c.sampling.unheard);
    c.sampling.min_start_distance = s.value("min_start_distance", c.sampling.min_start_distance);
  }
  if (j.contains("env")) {
    const auto& e = j.at("env");
    c.env.noise_sigma = e.value("noise_sigma", c.env.noise_sigma);
    if (e.contains("reward") && !e.at("reward").is_null()) {
      const auto& r = e.at("reward");
      sim::RewardConfig rc = sim::default_reward(c.sampling.mode);
      rc.goal_bonus = r.value("goal_bonus", rc.goal_bonus);
      rc.step_penalty = r.value("step_penalty", rc.step_penalty);
      rc.shaping = r.value("shaping", rc.shaping);
      rc.as_written_sign = r.value("as_written_sign", rc.as_written_sign);
      rc.penalize_retreat = r.value("penalize_retreat", rc.penalize_retreat);
      c.env.reward = rc;
    }
  }
  c.eval_every = j.value("eval_every", c.eval_every);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.eval_worlds = j.value("eval_worlds", c.eval_worlds);
  c.seed = j.value("seed", c.seed);
  validate(c);
  return c;
}

// Rollouts ---------------------------------------------------------------

float progress_target(int d0, int d) {
  if (d0 <= 0) return 1.f;
  const double p = static_cast<double>(d0 - d) / static_cast<double>(d0);
  return static_cast<float>(std::clamp(p, 0.0, 1.0));
}

struct RolloutPool::Worker {
  std::shared_ptr<const sim::World> world;
  std::unique_ptr<sim::NavEnv> env;
  std::vector<sim::Observation> history;
  describe::Trajectory traj;
  describe::GoalContext goal;
  int d0 = 0;
  double episode_return = 0.0;
};

RolloutPool::RolloutPool(const TrainConfig& cfg, std::uint64_t seed)
    : cfg_(&cfg),
      worlds_(eval::split_worlds(eval::Split::kTrain, cfg.train_worlds, cfg.world)),
      rng_(seed) {
  validate(cfg);
  for (std::size_t i = 0; i < cfg.envs; ++i) {
    workers_.push_back(std::make_shared<Worker>());
    start_episode(*workers_.back());
  }
}

void RolloutPool::start_episode(Worker& w) {
  w.world = worlds_[std::uniform_int_distribution<std::size_t>(0, worlds_.size() - 1)(rng_)];
  const sim::EpisodeSpec spec = sim::sample_episode(*w.world, cfg_->sampling, rng_);
  w.env = std::make_unique<sim::NavEnv>(w.world, spec, cfg_->env,
                                        util::derive_seed(cfg_->seed, "noise", episode_counter_++));
  w.history.assign(1, w.env->reset());
  w.traj.poses.assign(1, spec.start);
  w.traj.actions.clear();
  w.goal = describe::goal_context(*w.world, spec);
  w.d0 = w.env->distance();
  w.episode_return = 0.0;
}

namespace {

std::vector<float> patch_target(const sim::Observation& o) {
  std::vector<float> out(o.patch.size());
  for (std::size_t i = 0; i < o.patch.size(); ++i) {
    out[i] = static_cast<float>(o.patch[i]) / static_cast<float>(sim::kPatchChannels - 1);
  }
  return out;
}

}  // namespace

std::vector<Sample> RolloutPool::collect(const Agent& agent, RolloutStats* stats) {
  const auto& cfg = *cfg_;
  const std::size_t memory = agent.config().memory;
  const AuxKind aux = agent.config().aux;
  const std::size_t n_workers = workers_.size();
  std::vector<Sample> samples(n_workers * cfg.horizon);
  std::size_t finished = 0;
  std::size_t successes = 0;
  double return_sum = 0.0;

  for (std::size_t step = 0; step < cfg.horizon; ++step) {
    std::vector<std::span<const sim::Observation>> windows;
    for (const auto& w : workers_) {
      const std::size_t n = std::min(memory, w->history.size());
      windows.emplace_back(w->history.data() + (w->history.size() - n), n);
    }
    const auto batch = agent::pack_memory(windows, memory);
    Graph<float> g(agent.params());
    const auto f = agent::forward_policy(g, agent.layout(), batch);
    const auto& logits = f.action_logits.value();
    const auto& values = f.value.value();

    for (std::size_t i = 0; i < n_workers; ++i) {
      Worker& w = *workers_[i];
      Sample& s = samples[i * cfg.horizon + step];
      s.window.assign(windows[i].begin(), windows[i].end());
      const auto probs = eval::tempered_softmax(
          std::span<const float>(logits.raw() + i * sim::kNumActions,
                                 static_cast<std::size_t>(sim::kNumActions)),
          1.0);
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
      int a = sim::kNumActions - 1;
      double acc = 0.0;
      for (int k = 0; k < sim::kNumActions; ++k) {
        acc += probs[static_cast<std::size_t>(k)];
        if (u < acc) {
          a = k;
          break;
        }
      }
      s.action = a;
      s.log_prob = static_cast<float>(std::log(probs[static_cast<std::size_t>(a)]));
      s.value = values[i];
      const sim::Pose pose = w.env->pose();
      const int t = w.env->t();
      s.goal = agent::goal_target(*w.world, w.env->spec(), pose);

      if (agent::is_description(aux) && t % cfg.description_stride == 0) {
        const describe::Mode mode = agent::description_mode(aux);
        if (!(mode == describe::Mode::kPast && t == 0)) {
          s.description = describe::describe_at(*w.world, w.traj, static_cast<std::size_t>(t),
                                                cfg.description_k, mode, w.goal)
                              .tokens;
        }
      }
      switch (aux) {
        case AuxKind::kNextAction:
          s.aux = {static_cast<float>(sim::shortest_path_actions_field(
                                          *w.world, pose, w.env->goal_field(),
                                          w.env->spec().success_radius)
                                          .front())};
          break;
        case AuxKind::kProgress: s.aux = {progress_target(w.d0, w.env->distance())}; break;
        case AuxKind::kGoalLocation: s.aux = {s.goal.forward, s.goal.right}; break;
        case AuxKind::kGoalCategory: s.aux = {static_cast<float>(s.goal.label)}; break;
        default: break;
      }

      const auto result = w.env->step(static_cast<sim::Action>(a));
      if (aux == AuxKind::kNextFrame) s.aux = patch_target(result.observation);
      if (aux == AuxKind::kNextSpectrogram) {
        s.aux.assign(result.observation.audio.begin(), result.observation.audio.end());
      }
      s.reward = static_cast<float>(result.outcome.reward);
      s.done = result.outcome.done;
      w.episode_return += result.outcome.reward;
      w.history.push_back(result.observation);
      w.traj.actions.push_back(static_cast<sim::Action>(a));
      w.traj.poses.push_back(w.env->pose());
      if (result.outcome.done) {
        ++finished;
        successes += result.outcome.success ? 1 : 0;
        return_sum += w.episode_return;
        start_episode(w);
      }
    }
  }

  std::vector<double> bootstrap(n_workers, 0.0);
  {
    std::vector<std::span<const sim::Observation>> windows;
    for (const auto& w : workers_) {
      const std::size_t n = std::min(memory, w->history.size());
      windows.emplace_back(w->history.data() + (w->history.size() - n), n);
    }
    Graph<float> g(agent.params());
    const auto f = agent::forward_policy(g, agent.layout(), agent::pack_memory(windows, memory));
    for (std::size_t i = 0; i < n_workers; ++i) bootstrap[i] = f.value.value()[i];
  }
  for (std::size_t i = 0; i < n_workers; ++i) {
    std::vector<double> r(cfg.horizon), v(cfg.horizon);
    std::vector<std::uint8_t> d(cfg.horizon);
    for (std::size_t t = 0; t < cfg.horizon; ++t) {
      const Sample& s = samples[i * cfg.horizon + t];
      r[t] = s.reward;
      v[t] = s.value;
      d[t] = s.done ? 1 : 0;
    }
    const auto gae = compute_gae(r, v, d, bootstrap[i], cfg.ppo.gamma, cfg.ppo.gae_lambda);
    for (std::size_t t = 0; t < cfg.horizon; ++t) {
      samples[i * cfg.horizon + t].advantage = gae.advantages[t];
      samples[i * cfg.horizon + t].ret = gae.returns[t];
    }
  }
  if (stats) {
    stats->episodes = finished;
    stats->mean_return = finished ? return_sum / static_cast<double>(finished) : 0.0;
    stats->success_rate =
        finished ? static_cast<double>(successes) / static_cast<double>(finished) : 0.0;
  }
  return samples;
}

// Losses -----------------------------------------------------------------

namespace {

template <typename Real>
Tensor<Real> column(std::span<const Sample* const> batch, double (*get)(const Sample&)) {
  Tensor<Real> t({batch.size()});
  for (std::size_t i = 0; i < batch.size(); ++i) t[i] = static_cast<Real>(get(*batch[i]));
  return t;
}

/// Rows `idx` of the memory-side outputs of a forward pass.
template <typename Real>
agent::AgentForward<Real> select_rows(const agent::AgentForward<Real>& f,
                                      const std::vector<int>& idx) {
  const auto& ms = f.memory.shape();
  const std::size_t b = ms[0], s = ms[1], d = ms[2];
  agent::AgentForward<Real> out;
  out.memory = tensor::reshape(
      tensor::gather_rows(tensor::reshape(f.memory, {b, s * d}), idx), {idx.size(), s, d});
  out.v_lc = tensor::gather_rows(f.v_lc, idx);
  out.memory_mask.reserve(idx.size() * s);
  for (int r : idx) {
    const auto begin = f.memory_mask.begin() + static_cast<std::ptrdiff_t>(r * s);
    out.memory_mask.insert(out.memory_mask.end(), begin, begin + static_cast<std::ptrdiff_t>(s));
  }
  return out;
}

}  // namespace

template <typename Real>
Var<Real> description_loss(Graph<Real>& g, const agent::AgentLayout& layout,
                           const agent::AgentForward<Real>& f, const TrainConfig& cfg,
                           std::span<const Sample* const> batch) {
  std::vector<int> idx;
  std::size_t length = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->description) {
      idx.push_back(static_cast<int>(i));
      length = std::max(length, batch[i]->description->size());
    }
  }
  if (idx.empty()) throw std::invalid_argument("no description targets in the batch");
  const std::size_t n = idx.size();
  std::vector<int> targets(n * length, describe::kPad);
  std::vector<int> inputs(n * length, describe::kPad);
  std::vector<Real> weights(n * length, Real{0});
  for (std::size_t r = 0; r < n; ++r) {
    const auto& tok = *batch[static_cast<std::size_t>(idx[r])]->description;
    if (tok.empty() || tok.size() > static_cast<std::size_t>(describe::kMaxDescriptionLength)) {
      throw std::invalid_argument("description target length out of range");
    }
    inputs[r * length] = describe::kBos;
    for (std::size_t t = 0; t < tok.size(); ++t) {
      if (tok[t] < 0 || static_cast<std::size_t>(tok[t]) >= layout.vocab) {
        throw std::invalid_argument("description token outside vocabulary");
      }
      targets[r * length + t] = tok[t];
      weights[r * length + t] = Real{1};
      if (t + 1 < length) inputs[r * length + t + 1] = tok[t];
    }
  }
  const auto sub = select_rows(f, idx);
  Var<Real> logits = agent::forward_description(g, layout, sub, inputs, n, length);
  Var<Real> loss;
  if (cfg.distill) {
    Tensor<Real> soft({n * length, layout.vocab},
                      static_cast<Real>(1.0 / static_cast<double>(layout.vocab)));
    for (std::size_t r = 0; r < n; ++r) {
      const auto& tok = *batch[static_cast<std::size_t>(idx[r])]->description;
      const auto q = describe::soft_targets(tok, cfg.smoothing, cfg.distill_temperature,
                                            static_cast<int>(layout.vocab));
      for (std::size_t t = 0; t < tok.size(); ++t) {
        for (std::size_t c = 0; c < layout.vocab; ++c) {
          soft.at(r * length + t, c) = static_cast<Real>(q.at(t, c));
        }
      }
    }
    loss = tensor::soft_cross_entropy<Real>(logits, soft, weights, cfg.distill_temperature);
  } else {
    loss = tensor::cross_entropy<Real>(logits, targets, weights);
  }
  if (!cfg.average_ce) {
    double tokens = 0.0;
    for (Real w : weights) tokens += static_cast<double>(w);
    loss = tensor::scale(loss, tokens / static_cast<double>(n));
  }
  return loss;
}

template <typename Real>
Var<Real> aux_baseline_loss(Graph<Real>& g, const agent::AgentLayout& layout,
                            const agent::AgentForward<Real>& f, AuxKind kind,
                            std::span<const Sample* const> batch) {
  const std::size_t dim = agent::aux_output_dim(kind);
  if (dim == 0 || kind != layout.cfg.aux) {
    throw ConfigError("no baseline head for auxiliary task '" + std::string(agent::aux_name(kind)) +
                      "'");
  }
  Var<Real> out = agent::forward_aux(g, layout, f);
  if (kind == AuxKind::kNextAction || kind == AuxKind::kGoalCategory) {
    std::vector<int> labels;
    for (const Sample* s : batch) {
      if (s->aux.size() != 1) throw std::invalid_argument("missing class target");
      labels.push_back(static_cast<int>(s->aux[0]));
    }
    return tensor::cross_entropy<Real>(out, labels);
  }
  Tensor<Real> target({batch.size(), dim});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->aux.size() != dim) throw std::invalid_argument("auxiliary target size mismatch");
    for (std::size_t c = 0; c < dim; ++c) target.at(i, c) = static_cast<Real>(batch[i]->aux[c]);
  }
  return tensor::squared_error<Real>(out, target);
}

template <typename Real>
MinibatchLoss<Real> minibatch_loss(Graph<Real>& g, const agent::AgentLayout& layout,
                                   const TrainConfig& cfg, std::span<const Sample* const> batch) {
  const std::size_t b = batch.size();
  std::vector<std::span<const sim::Observation>> windows;
  std::vector<int> actions;
  std::vector<int> labels;
  Tensor<Real> returns({b, 1});
  Tensor<Real> location({b, 2});
  for (std::size_t i = 0; i < b; ++i) {
    windows.emplace_back(batch[i]->window);
    actions.push_back(batch[i]->action);
    labels.push_back(batch[i]->goal.label);
    returns[i] = static_cast<Real>(batch[i]->ret);
    location.at(i, 0) = static_cast<Real>(batch[i]->goal.forward);
    location.at(i, 1) = static_cast<Real>(batch[i]->goal.right);
  }
  const auto mem = agent::pack_memory(windows, layout.cfg.memory);
  const auto f = agent::forward_policy(g, layout, mem);

  Var<Real> logp_all = tensor::log_softmax(f.action_logits);
  Var<Real> logp = tensor::pick(logp_all, actions);
  Var<Real> old = g.constant(column<Real>(batch, [](const Sample& s) {
    return static_cast<double>(s.log_prob);
  }), "old_log_prob");
  Var<Real> adv = g.constant(column<Real>(batch, [](const Sample& s) { return s.advantage; }),
                             "advantage");
  Var<Real> ratio = tensor::exp(logp - old);
  Var<Real> clipped = tensor::clamp(ratio, 1.0 - cfg.ppo.clip, 1.0 + cfg.ppo.clip);
  Var<Real> policy = tensor::scale(tensor::mean(tensor::minimum(ratio * adv, clipped * adv)), -1.0);
  Var<Real> value = tensor::squared_error<Real>(f.value, returns);
  Var<Real> entropy = tensor::scale(
      tensor::sum(tensor::mul(tensor::softmax(f.action_logits), logp_all)),
      -1.0 / static_cast<double>(b));
  Var<Real> goal = tensor::cross_entropy<Real>(f.goal.category_logits, labels) +
                   tensor::squared_error<Real>(f.goal.location, location);
  Var<Real> rl = policy + tensor::scale(value, cfg.ppo.value_coef) -
                 tensor::scale(entropy, cfg.ppo.entropy_coef) +
                 tensor::scale(goal, cfg.goal_coef);

  MinibatchLoss<Real> out;
  out.rl = rl;
  out.total = rl;
  const AuxKind kind = layout.cfg.aux;
  if (agent::is_description(kind)) {
    const bool any = std::any_of(batch.begin(), batch.end(),
                                 [](const Sample* s) { return s->description.has_value(); });
    if (any) {
      out.ce = description_loss(g, layout, f, cfg, batch);
      if (cfg.lambda > 0.0) out.total = rl + tensor::scale(*out.ce, cfg.lambda);
    }
  } else if (agent::aux_output_dim(kind) > 0) {
    out.aux = aux_baseline_loss(g, layout, f, kind, batch);
    if (cfg.lambda > 0.0) out.total = rl + tensor::scale(*out.aux, cfg.lambda);
  }

  auto& p = out.parts;
  p.policy = static_cast<float>(policy.value().item());
  p.value = static_cast<float>(value.value().item());
  p.entropy = static_cast<float>(entropy.value().item());
  p.goal = static_cast<float>(goal.value().item());
  p.rl = static_cast<float>(rl.value().item());
  p.ce = out.ce ? static_cast<float>(out.ce->value().item()) : 0.f;
  p.aux = out.aux ? static_cast<float>(out.aux->value().item()) : 0.f;
  p.total = static_cast<float>(out.total.value().item());
  p.described = static_cast<std::size_t>(std::count_if(
      batch.begin(), batch.end(), [](const Sample* s) { return s->description.has_value(); }));
  return out;
}

// Training ---------------------------------------------------------------

LossBreakdown ppo_update(Agent& agent, tensor::Adam<float>& opt, std::vector<Sample>& samples,
                         const TrainConfig& cfg, std::mt19937_64& rng) {
  if (samples.empty()) throw std::invalid_argument("no samples to learn from");
  if (cfg.ppo.normalize_advantages) {
    std::vector<double> adv;
    for (const auto& s : samples) adv.push_back(s.advantage);
    normalize(adv);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].advantage = adv[i];
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  LossBreakdown mean;
  double count = 0.0;
  for (int epoch = 0; epoch < cfg.ppo.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.ppo.minibatch) {
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.ppo.minibatch); ++i) {
        batch.push_back(&samples[order[i]]);
      }
      tensor::Gradients<float> grads;
      LossBreakdown parts;
      {
        Graph<float> g(agent.params());
        auto loss = minibatch_loss(g, agent.layout(), cfg, batch);
        parts = loss.parts;
        if (!std::isfinite(parts.total)) {
          throw tensor::NumericError("non-finite PPO loss at epoch " + std::to_string(epoch) +
                                     ": rl=" + std::to_string(parts.rl) +
                                     " ce=" + std::to_string(parts.ce) +
                                     " aux=" + std::to_string(parts.aux));
        }
        grads = g.backward(loss.total);
      }
      tensor::clip_grad_norm(grads, cfg.ppo.max_grad_norm);
      opt.step(agent.params(), grads);
      mean.policy += parts.policy;
      mean.value += parts.value;
      mean.entropy += parts.entropy;
      mean.goal += parts.goal;
      mean.rl += parts.rl;
      mean.ce += parts.ce;
      mean.aux += parts.aux;
      mean.total += parts.total;
      mean.described += parts.described;
      count += 1.0;
    }
  }
  const auto c = static_cast<float>(count);
  mean.policy /= c;
  mean.value /= c;
  mean.entropy /= c;
  mean.goal /= c;
  mean.rl /= c;
  mean.ce /= c;
  mean.aux /= c;
  mean.total /= c;
  return mean;
}

std::vector<PretrainSample> pretrain_samples(const std::vector<describe::DatasetRecord>& records,
                                             std::size_t memory, std::uint64_t seed) {
  std::map<std::uint64_t, std::shared_ptr<const sim::World>> worlds;
  std::vector<PretrainSample> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    auto it = worlds.find(r.world_seed);
    if (it == worlds.end()) {
      it = worlds
               .emplace(r.world_seed,
                        std::make_shared<const sim::World>(sim::generate_world(r.world_seed, r.world)))
               .first;
    }
    sim::NavEnv env(it->second, r.episode, {}, util::derive_seed(seed, "pretrain_noise", i));
    std::vector<sim::Observation> history{env.reset()};
    for (std::size_t t = 0; t < r.t; ++t) history.push_back(env.step(r.actions.at(t)).observation);
    PretrainSample s;
    const std::size_t n = std::min(memory, history.size());
    s.window.assign(history.end() - static_cast<std::ptrdiff_t>(n), history.end());
    s.goal = agent::goal_target(*it->second, r.episode, env.pose());
    s.tokens = r.tokens;
    out.push_back(std::move(s));
  }
  return out;
}

PretrainResult pretrain_adpredictor(Agent& agent, const std::vector<PretrainSample>& samples,
                                    const TrainConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("pretraining set is empty");
  if (!agent::is_description(agent.config().aux)) {
    throw ConfigError("pretraining needs a description auxiliary task");
  }
  const auto trainable = agent.params().select([](std::string_view name) {
    return !agent::is_policy_param(name) && name.substr(0, 4) != "aux." && name != "task_emb.rl";
  });
  tensor::Adam<float> opt(agent.params(), {.lr = cfg.pretrain_lr});
  std::mt19937_64 rng(util::derive_seed(cfg.seed, "pretrain_batches"));
  std::vector<Sample> converted(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    converted[i].window = samples[i].window;
    converted[i].goal = samples[i].goal;
    converted[i].description = samples[i].tokens;
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  PretrainResult result;
  const std::size_t bs = std::max<std::size_t>(1, std::min(cfg.pretrain_batch, samples.size()));
  for (int u = 0; u < cfg.pretrain_updates; ++u) {
    std::vector<const Sample*> batch;
    while (batch.size() < bs) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&converted[order[cursor++]]);
    }
    tensor::Gradients<float> grads;
    {
      Graph<float> g(agent.params());
      std::vector<std::span<const sim::Observation>> windows;
      std::vector<int> labels;
      Tensor<float> location({batch.size(), 2});
      for (std::size_t i = 0; i < batch.size(); ++i) {
        windows.emplace_back(batch[i]->window);
        labels.push_back(batch[i]->goal.label);
        location.at(i, 0) = batch[i]->goal.forward;
        location.at(i, 1) = batch[i]->goal.right;
      }
      const auto f =
          agent::forward_policy(g, agent.layout(), agent::pack_memory(windows, agent.config().memory));
      Var<float> ce = description_loss(g, agent.layout(), f, cfg, batch);
      Var<float> goal = tensor::cross_entropy<float>(f.goal.category_logits, labels) +
                        tensor::squared_error<float>(f.goal.location, location);
      Var<float> loss = ce + tensor::scale(goal, cfg.goal_coef);
      result.ce_curve.push_back(ce.value().item());
      grads = g.backward(loss);
    }
    tensor::clip_grad_norm(grads, 1.0);
    opt.step(agent.params(), grads, trainable);
  }
  return result;
}

eval::EvalConfig eval_config(const TrainConfig& cfg, std::size_t episodes, bool unheard) {
  eval::EvalConfig e;
  e.world = cfg.world;
  e.worlds = cfg.eval_worlds;
  e.split = eval::Split::kTest;
  e.sampling = cfg.sampling;
  e.sampling.unheard = unheard;
  e.env = cfg.env;
  e.episodes = episodes;
  e.seed = util::derive_seed(cfg.seed, "eval");
  return e;
}

void write_train_log(const std::filesystem::path& path, const std::vector<UpdateLog>& log) {
  util::CsvWriter csv(path, {"update", "policy", "value", "entropy", "goal", "l_rl", "l_ce", "aux",
                             "total", "episodes", "mean_return", "rollout_sr", "eval_sr",
                             "eval_spl", "eval_sna", "eval_dtg", "eval_sws"});
  for (const auto& u : log) {
    const auto& l = u.loss;
    const auto opt = [&](auto get) {
      return u.eval ? util::CsvWriter::cell(get(*u.eval)) : std::string();
    };
    csv.row(u.update, l.policy, l.value, l.entropy, l.goal, l.rl, l.ce, l.aux, l.total,
            u.rollout.episodes, u.rollout.mean_return, u.rollout.success_rate,
            opt([](const eval::Metrics& m) { return m.sr; }),
            opt([](const eval::Metrics& m) { return m.spl; }),
            opt([](const eval::Metrics& m) { return m.sna; }),
            opt([](const eval::Metrics& m) { return m.dtg; }),
            u.eval && u.eval->sws ? util::CsvWriter::cell(*u.eval->sws) : std::string());
  }
}

TrainResult train_joint(Agent& agent, const TrainConfig& cfg, const TrainOutputs& out) {
  validate(cfg);
  TrainResult result;
  if (out.dir) std::filesystem::create_directories(*out.dir);
  if (cfg.pretrain) {
    describe::DatasetConfig dc;
    dc.seed = util::derive_seed(cfg.seed, "pretrain_data");
    dc.samples = cfg.pretrain_samples;
    dc.mode = agent::description_mode(agent.config().aux);
    dc.k = cfg.description_k;
    dc.world = cfg.world;
    dc.worlds = static_cast<int>(cfg.train_worlds);
    dc.reward_mode = cfg.sampling.mode;
    const auto samples = pretrain_samples(describe::build_dataset(dc), agent.config().memory,
                                          util::derive_seed(cfg.seed, "pretrain_replay"));
    result.pretrain = pretrain_adpredictor(agent, samples, cfg);
    if (out.dir) tensor::save_checkpoint(*out.dir / "step1.ckpt", agent.params());
  }

  RolloutPool pool(cfg, util::derive_seed(cfg.seed, "rollout"));
  tensor::Adam<float> opt(agent.params(), {.lr = cfg.ppo.lr});
  std::mt19937_64 rng(util::derive_seed(cfg.seed, "minibatch"));
  for (int u = 1; u <= cfg.updates; ++u) {
    UpdateLog entry;
    entry.update = u;
    auto samples = pool.collect(agent, &entry.rollout);
    entry.loss = ppo_update(agent, opt, samples, cfg, rng);
    if (cfg.eval_every > 0 && u % cfg.eval_every == 0 && u != cfg.updates) {
      auto ec = eval_config(cfg, cfg.eval_episodes);
      ec.split = eval::Split::kVal;
      entry.eval = eval::compute_metrics(eval::run_episodes(eval::agent_policy(agent), ec));
    }
    if (!out.quiet) {
      std::fprintf(stderr, "update %d rl %.4f ce %.4f return %.3f sr %.3f\n", u, entry.loss.rl,
                   entry.loss.ce, entry.rollout.mean_return, entry.rollout.success_rate);
    }
    result.log.push_back(entry);
    if (out.dir) write_train_log(*out.dir / "train_log.csv", result.log);
  }
  result.final_eval = eval::compute_metrics(
      eval::run_episodes(eval::agent_policy(agent), eval_config(cfg, cfg.eval_episodes)));
  if (!result.log.empty()) result.log.back().eval = result.final_eval;
  if (out.dir) {
    write_train_log(*out.dir / "train_log.csv", result.log);
    tensor::save_checkpoint(*out.dir / "final.ckpt", agent.params());
  }
  return result;
}

#define DESCRL_INSTANTIATE_TRAIN(R)                                                             \
  template MinibatchLoss<R> minibatch_loss(Graph<R>&, const agent::AgentLayout&,               \
                                           const TrainConfig&, std::span<const Sample* const>); \
  template Var<R> description_loss(Graph<R>&, const agent::AgentLayout&,                        \
                                   const agent::AgentForward<R>&, const TrainConfig&,           \
                                   std::span<const Sample* const>);                             \
  template Var<R> aux_baseline_loss(Graph<R>&, const agent::AgentLayout&,                       \
                                    const agent::AgentForward<R>&, AuxKind,                     \
                                    std::span<const Sample* const>);

DESCRL_INSTANTIATE_TRAIN(float)
DESCRL_INSTANTIATE_TRAIN(double)

#undef DESCRL_INSTANTIATE_TRAIN

}  // namespace descrl::train
