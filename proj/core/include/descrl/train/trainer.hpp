#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "descrl/agent/agent.hpp"
#include "descrl/eval/metrics.hpp"
#include "descrl/eval/runner.hpp"
#include "descrl/tensor/adam.hpp"

namespace descrl::train {

using agent::Agent;
using agent::AuxKind;
using tensor::Var;

// GAE -------------------------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Generalized advantage estimates for one worker's trajectory segment.
/// `done[t]` ends the episode after step t; `bootstrap` is V(s_T).
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> done, double bootstrap, double gamma,
                      double lambda);

/// In place: mean 0, population std 1 (unchanged when std is ~0).
void normalize(std::vector<double>& x);

// Configuration ---------------------------------------------------------

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  int epochs = 4;
  std::size_t minibatch = 256;
  double lr = 2.5e-4;
  bool normalize_advantages = true;
};

struct TrainConfig {
  agent::AgentConfig agent;
  double lambda = 0.1;
  bool distill = false;
  double smoothing = 0.1;    // eps_s
  double distill_temperature = 2.0;  // T_d
  int description_k = 19;
  int description_stride = 4;
  /// Per-token mean over the batch; otherwise per-description token sums
  /// averaged over descriptions.
  bool average_ce = true;
  double goal_coef = 1.0;

  bool pretrain = false;
  int pretrain_updates = 500;
  std::size_t pretrain_samples = 2000;
  std::size_t pretrain_batch = 32;
  double pretrain_lr = 1e-3;

  int updates = 300;
  std::size_t envs = 8;
  std::size_t horizon = 128;
  PpoConfig ppo;

  sim::WorldConfig world;
  std::size_t train_worlds = 64;
  sim::EpisodeSampling sampling;
  sim::EnvConfig env;

  int eval_every = 0;  // 0: evaluate only after the last update
  std::size_t eval_episodes = 200;
  std::size_t eval_worlds = 16;

  std::uint64_t seed = 0;
};

/// Throws agent::ConfigError for inconsistent settings.
void validate(const TrainConfig& cfg);

nlohmann::json to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

// Rollouts ---------------------------------------------------------------

struct Sample {
  std::vector<sim::Observation> window;  // memory, oldest first
  int action = 0;
  float log_prob = 0.f;
  float value = 0.f;
  float reward = 0.f;
  bool done = false;
  agent::GoalTarget goal;
  std::optional<std::vector<int>> description;  // EOS-terminated
  std::vector<float> aux;   // regression target or {class id}
  double advantage = 0.0;
  double ret = 0.0;
};

struct RolloutStats {
  std::size_t episodes = 0;
  double mean_return = 0.0;  // over episodes finished in this rollout
  double success_rate = 0.0;
};

/// Worker pool over training worlds.
class RolloutPool {
 public:
  RolloutPool(const TrainConfig& cfg, std::uint64_t seed);

  /// Collects `horizon` steps per worker with the agent's stochastic policy
  /// and fills advantages and returns.
  std::vector<Sample> collect(const Agent& agent, RolloutStats* stats = nullptr);

 private:
  struct Worker;
  void start_episode(Worker& w);

  const TrainConfig* cfg_;
  std::vector<std::shared_ptr<const sim::World>> worlds_;
  std::vector<std::shared_ptr<Worker>> workers_;
  std::mt19937_64 rng_;
  std::uint64_t episode_counter_ = 0;
};

// Losses -----------------------------------------------------------------

struct LossBreakdown {
  float policy = 0.f;
  float value = 0.f;
  float entropy = 0.f;
  float goal = 0.f;
  float rl = 0.f;
  float ce = 0.f;       // description loss (0 when not a desc_* run)
  float aux = 0.f;      // baseline head loss (0 when not used)
  float total = 0.f;
  std::size_t described = 0;  // samples with a description target
};

template <typename Real>
struct MinibatchLoss {
  Var<Real> rl;
  std::optional<Var<Real>> ce;
  std::optional<Var<Real>> aux;
  Var<Real> total;
  LossBreakdown parts;
};

/// Builds every loss term for a minibatch on `g`.
template <typename Real>
MinibatchLoss<Real> minibatch_loss(tensor::Graph<Real>& g, const agent::AgentLayout& layout,
                                   const TrainConfig& cfg, std::span<const Sample* const> batch);

/// Teacher-forced description loss over described samples; hard CE or,
/// with `distill`, soft-target CE at the configured temperature.
template <typename Real>
Var<Real> description_loss(tensor::Graph<Real>& g, const agent::AgentLayout& layout,
                           const agent::AgentForward<Real>& f, const TrainConfig& cfg,
                           std::span<const Sample* const> batch);

/// Loss of the alternative auxiliary head.
template <typename Real>
Var<Real> aux_baseline_loss(tensor::Graph<Real>& g, const agent::AgentLayout& layout,
                            const agent::AgentForward<Real>& f, AuxKind kind,
                            std::span<const Sample* const> batch);

/// Progress target (d0 - d) / d0 clipped to [0, 1].
float progress_target(int d0, int d);

// Training ---------------------------------------------------------------

struct UpdateLog {
  int update = 0;
  LossBreakdown loss;  // mean over the update's minibatches
  RolloutStats rollout;
  std::optional<eval::Metrics> eval;
};

struct PretrainSample {
  std::vector<sim::Observation> window;
  agent::GoalTarget goal;
  std::vector<int> tokens;
};

/// Replays dataset records into agent inputs.
std::vector<PretrainSample> pretrain_samples(const std::vector<describe::DatasetRecord>& records,
                                             std::size_t memory, std::uint64_t seed);

struct PretrainResult {
  std::vector<double> ce_curve;  // one entry per update
};

/// Step 1: trains everything except the policy side on description
/// prediction. Policy-side parameters are not touched.
PretrainResult pretrain_adpredictor(Agent& agent, const std::vector<PretrainSample>& samples,
                                    const TrainConfig& cfg);

struct TrainResult {
  std::vector<UpdateLog> log;
  std::optional<PretrainResult> pretrain;
  eval::Metrics final_eval;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> dir;  // train_log.csv, checkpoints
  bool quiet = true;
};

/// Optional step 1, then joint PPO + description training.
TrainResult train_joint(Agent& agent, const TrainConfig& cfg, const TrainOutputs& out = {});

/// One PPO epoch sweep over collected samples; returns mean losses.
LossBreakdown ppo_update(Agent& agent, tensor::Adam<float>& opt, std::vector<Sample>& samples,
                         const TrainConfig& cfg, std::mt19937_64& rng);

/// Evaluation settings derived from a training config.
eval::EvalConfig eval_config(const TrainConfig& cfg, std::size_t episodes, bool unheard = false);

void write_train_log(const std::filesystem::path& path, const std::vector<UpdateLog>& log);

}  // namespace descrl::train
