#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "descrl/sim/world.hpp"

namespace descrl::sim {

inline constexpr int kPatchHalf = 3;
inline constexpr int kPatchSide = 2 * kPatchHalf + 1;
inline constexpr int kPatchCells = kPatchSide * kPatchSide;
/// Patch channel ids: 0 unknown, 1 wall, 2 + semantic label.
inline constexpr int kPatchUnknown = 0;
inline constexpr int kPatchWall = 1;
inline constexpr int kPatchChannels = 2 + kNumSemantic;
inline constexpr int kSpectrumDim = 16;
/// direction (forward, right), intensity, spectrum.
inline constexpr int kAudioDim = 3 + kSpectrumDim;
/// [d_row / 10, d_col / 10, sin heading, cos heading] relative to the start pose.
inline constexpr int kPoseDim = 4;
inline constexpr int kNeverStops = std::numeric_limits<int>::max();

enum class RewardMode : std::uint8_t { kSavNav, kObjNav };

std::string_view reward_mode_name(RewardMode m);
RewardMode reward_mode_from_name(std::string_view name);

struct EpisodeSpec {
  Pose start;
  int goal_object = 0;
  int sound_stop_time = kNeverStops;
  int max_steps = 200;
  int success_radius = 1;
  RewardMode mode = RewardMode::kSavNav;
  bool unheard = false;
  friend bool operator==(const EpisodeSpec&, const EpisodeSpec&) = default;
};

struct RewardConfig {
  double goal_bonus = 10.0;
  double step_penalty = -0.01;
  bool shaping = true;
  /// Use the distance-increasing shaping sign exactly as the formulas are
  /// printed; off by default because it rewards walking away.
  bool as_written_sign = false;
  /// savnav only: -1 when the distance grows, so oscillating between two
  /// cells earns nothing.
  bool penalize_retreat = false;
};

/// Mode defaults: savnav (10, -0.01), objnav (2.5, -0.001).
RewardConfig default_reward(RewardMode mode);

/// r_t from the previous and current geodesic distance and the goal flag.
double compute_reward(const RewardConfig& cfg, RewardMode mode, int d_prev, int d_now,
                      bool success);

struct Observation {
  std::array<std::uint8_t, kPatchCells> patch{};
  std::array<float, kAudioDim> audio{};
  std::array<float, kPoseDim> pose{};
  int prev_action = -1;
  int t = 0;
  bool silent = false;
};

struct StepOutcome {
  double reward = 0.0;
  bool done = false;
  bool success = false;
  int distance = 0;
};

struct StepResult {
  Observation observation;
  StepOutcome outcome;
};

struct EpisodeSampling {
  int max_steps = 200;
  int success_radius = 1;
  RewardMode mode = RewardMode::kSavNav;
  bool sound_stops = true;
  bool unheard = false;
  int min_start_distance = 2;
};

/// Random goal object, start pose and stop time. Throws WorldError when no
/// start cell satisfies the distance requirement.
EpisodeSpec sample_episode(const World& world, const EpisodeSampling& cfg, std::mt19937_64& rng);

/// Cells the agent is rewarded for approaching: the goal object in savnav
/// mode, every instance of its category in objnav mode.
std::vector<Cell> goal_cells(const World& world, const EpisodeSpec& spec);
int goal_category(const World& world, const EpisodeSpec& spec);

/// Fixed spectrum of an object category; the unheard variant is a held-out
/// perturbation of the same category's spectrum.
const std::array<float, kSpectrumDim>& category_spectrum(int category, bool unheard);

/// Egocentric patch: row 0 is farthest ahead, column 0 is leftmost. Cells
/// hidden behind walls or outside the grid are unknown.
std::array<std::uint8_t, kPatchCells> render_patch(const World& world, Pose pose);

/// Audio vector; `field` is the distance field to the goal cells. Noise is
/// added to the spectrum only when `noise` is given.
std::array<float, kAudioDim> render_audio(const World& world, Pose pose, int t,
                                          const EpisodeSpec& spec, const std::vector<int>& field,
                                          std::mt19937_64* noise = nullptr,
                                          double noise_sigma = 0.05);
std::array<float, kAudioDim> render_audio(const World& world, Pose pose, int t,
                                          const EpisodeSpec& spec);

std::array<float, kPoseDim> pose_features(Pose start, Pose pose);

struct EnvConfig {
  std::optional<RewardConfig> reward;  // mode default when empty
  double noise_sigma = 0.05;
};

/// One navigation episode. Not thread-safe; the world is shared read-only.
class NavEnv {
 public:
  NavEnv(std::shared_ptr<const World> world, EpisodeSpec spec, EnvConfig cfg, std::uint64_t seed);

  Observation reset();
  StepResult step(Action action);

  const World& world() const { return *world_; }
  const EpisodeSpec& spec() const { return spec_; }
  const RewardConfig& reward_config() const { return reward_; }
  const std::vector<int>& goal_field() const { return field_; }
  Pose pose() const { return pose_; }
  int t() const { return t_; }
  bool done() const { return done_; }
  int distance() const { return distance_; }

 private:
  Observation observe();

  std::shared_ptr<const World> world_;
  EpisodeSpec spec_;
  RewardConfig reward_;
  double noise_sigma_;
  std::uint64_t seed_;
  std::vector<int> field_;
  std::mt19937_64 noise_rng_;
  Pose pose_;
  int t_ = 0;
  int prev_action_ = -1;
  int distance_ = 0;
  bool done_ = false;
};

}  // namespace descrl::sim
