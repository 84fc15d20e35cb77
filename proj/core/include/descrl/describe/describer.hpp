#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "descrl/describe/vocabulary.hpp"
#include "descrl/sim/io.hpp"
#include "descrl/sim/nav_env.hpp"
#include "descrl/tensor/tensor.hpp"

namespace descrl::describe {

enum class Mode : std::uint8_t { kPast, kFuture, kPastFuture };

std::string_view mode_name(Mode m);
Mode mode_from_name(std::string_view name);

class DescribeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// poses[i] is the pose before actions[i]; poses.size() == actions.size() + 1.
struct Trajectory {
  std::vector<sim::Pose> poses;
  std::vector<sim::Action> actions;
};

/// Replays actions from a start pose.
Trajectory replay(const sim::World& world, sim::Pose start, const std::vector<sim::Action>& actions);

/// What the describer needs to know about the task.
struct GoalContext {
  int goal_object = -1;  // excluded from "go past" clauses
  int goal_label = 0;    // semantic label named by "stop near the <noun>"
  std::vector<int> goal_field;
  int success_radius = 1;
};

GoalContext goal_context(const sim::World& world, const sim::EpisodeSpec& spec);

struct Description {
  std::vector<int> tokens;  // ends with EOS, no BOS
  Mode mode = Mode::kPast;
  std::optional<tensor::Tensor<double>> soft;  // [tokens, |V|]
  std::string text() const;
};

/// Clause list (each clause a run of token ids) for actions in
/// [begin, end) of the trajectory.
std::vector<std::vector<int>> narrate(const sim::World& world, const Trajectory& traj,
                                      std::size_t begin, std::size_t end, const GoalContext& goal);

/// Joins clauses, drops the oldest until the EOS-terminated length fits
/// kMaxDescriptionLength. An empty clause list yields "wait near the
/// <region>" for `fallback_region`.
std::vector<int> assemble(const std::vector<std::vector<int>>& clauses, int fallback_region);

/// Describes actions [begin, end) of `traj`. Throws DescribeError when the
/// window holds no action or a pose leaves the free space.
Description describe(const sim::World& world, const Trajectory& traj, std::size_t begin,
                     std::size_t end, Mode mode, const GoalContext& goal);

/// The agent's last `k` actions before step t.
Description past_description(const sim::World& world, const Trajectory& traj, std::size_t t,
                             int k, const GoalContext& goal);
/// The next `k` actions of the shortest path from `pose`.
Description future_description(const sim::World& world, sim::Pose pose, int k,
                               const GoalContext& goal);
/// Past clauses followed by future clauses; at t = 0 only the future part.
Description past_future_description(const sim::World& world, const Trajectory& traj,
                                     std::size_t t, int k, const GoalContext& goal);
Description describe_at(const sim::World& world, const Trajectory& traj, std::size_t t, int k,
                        Mode mode, const GoalContext& goal);

/// Shortest-path continuation from `pose`, at most `k` actions.
Trajectory future_trajectory(const sim::World& world, sim::Pose pose, int k,
                             const GoalContext& goal);

/// Label-smoothed one-hot rows, then raised to 1/temperature and
/// renormalized. Throws for smoothing outside [0, 1) or temperature <= 0.
tensor::Tensor<double> soft_targets(const std::vector<int>& tokens, double smoothing,
                                    double temperature, int vocab_size);

// Dataset --------------------------------------------------------------

struct DatasetConfig {
  std::uint64_t seed = 0;
  std::size_t samples = 20000;
  Mode mode = Mode::kPast;
  int k = 19;
  sim::WorldConfig world;
  int worlds = 64;
  sim::RewardMode reward_mode = sim::RewardMode::kSavNav;
  int max_retries = 100;
};

struct DatasetRecord {
  std::uint64_t world_seed = 0;
  sim::WorldConfig world;
  sim::EpisodeSpec episode;
  std::vector<sim::Action> actions;  // full shortest path, ends with Stop
  std::size_t t = 0;
  std::size_t window_begin = 0;  // action indices [begin, end)
  std::size_t window_end = 0;
  Mode mode = Mode::kPast;
  std::vector<int> tokens;
};

/// Samples shortest-path episodes and labels one window per record.
/// Deterministic in the config; records come out in a seeded permutation.
std::vector<DatasetRecord> build_dataset(const DatasetConfig& cfg);

nlohmann::json record_to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const nlohmann::json& j);
void write_dataset(std::ostream& out, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> read_dataset(std::istream& in);

}  // namespace descrl::describe
