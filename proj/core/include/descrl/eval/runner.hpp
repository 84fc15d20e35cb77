#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "descrl/agent/agent.hpp"
#include "descrl/eval/decoding.hpp"
#include "descrl/eval/metrics.hpp"

namespace descrl::eval {

enum class Split : std::uint8_t { kTrain, kVal, kTest };

/// World seeds of different splits never overlap.
std::uint64_t split_world_seed(Split split, std::size_t index);

/// Worlds [0, n) of a split.
std::vector<std::shared_ptr<const sim::World>> split_worlds(Split split, std::size_t n,
                                                            const sim::WorldConfig& cfg);

/// Chooses one action per active episode. `windows[i]` is the observation
/// history of `envs[i]`, oldest first.
struct Policy {
  std::function<std::vector<sim::Action>(std::span<const sim::NavEnv* const> envs,
                                         const std::vector<std::span<const sim::Observation>>& windows)>
      act;
  /// Optional per-step description text, same arguments.
  std::function<std::vector<std::string>(std::span<const sim::NavEnv* const> envs,
                                         const std::vector<std::span<const sim::Observation>>& windows)>
      describe;
  std::size_t memory = 20;
};

struct EvalConfig {
  sim::WorldConfig world;
  std::size_t worlds = 16;
  Split split = Split::kTest;
  sim::EpisodeSampling sampling;
  sim::EnvConfig env;
  std::size_t episodes = 200;
  std::size_t parallel = 16;
  std::uint64_t seed = 0;
  bool trace = false;
};

std::vector<EpisodeRecord> run_episodes(const Policy& policy, const EvalConfig& cfg);

/// Greedy actions from the agent; per-step descriptions when `decode` is set.
Policy agent_policy(const agent::Agent& agent, std::optional<DecodeConfig> decode = std::nullopt,
                    std::uint64_t decode_seed = 0);

/// Follows the shortest action sequence from the current pose.
Policy shortest_path_policy();

/// Uniformly random actions.
Policy random_policy(std::uint64_t seed);

}  // namespace descrl::eval
