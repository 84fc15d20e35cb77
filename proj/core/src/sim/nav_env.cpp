#include "descrl/sim/nav_env.hpp"

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <stdexcept>
#include <string>

namespace descrl::sim {

namespace {

struct SpectrumTable {
  std::array<std::array<float, kSpectrumDim>, kNumObjectCategories> heard{};
  std::array<std::array<float, kSpectrumDim>, kNumObjectCategories> unheard{};

  SpectrumTable() {
    for (int c = 0; c < kNumObjectCategories; ++c) {
      std::mt19937_64 base(0x5eed0000ULL + static_cast<std::uint64_t>(c));
      std::mt19937_64 shift(0xfade0000ULL + static_cast<std::uint64_t>(c));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::normal_distribution<double> n(0.0, 0.3);
      for (int k = 0; k < kSpectrumDim; ++k) {
        const double v = u(base);
        heard[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] = static_cast<float>(v);
        unheard[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] =
            static_cast<float>(v + n(shift));
      }
    }
  }
};

const SpectrumTable& spectra() {
  static const SpectrumTable table;
  return table;
}

// True if no wall lies strictly between `from` and `to` on a Bresenham line.
bool line_of_sight(const World& world, Cell from, Cell to) {
  int r = from.row;
  int c = from.col;
  const int dr = std::abs(to.row - r);
  const int dc = std::abs(to.col - c);
  const int sr = r < to.row ? 1 : -1;
  const int sc = c < to.col ? 1 : -1;
  int err = dc - dr;
  while (r != to.row || c != to.col) {
    const int e2 = 2 * err;
    if (e2 > -dr) {
      err -= dr;
      c += sc;
    }
    if (e2 < dc) {
      err += dc;
      r += sr;
    }
    if ((r != to.row || c != to.col) && world.is_wall({r, c})) return false;
  }
  return true;
}

int dot(Cell a, Cell b) { return a.row * b.row + a.col * b.col; }

}  // namespace

std::string_view reward_mode_name(RewardMode m) {
  return m == RewardMode::kSavNav ? "savnav" : "objnav";
}

RewardMode reward_mode_from_name(std::string_view name) {
  if (name == "savnav") return RewardMode::kSavNav;
  if (name == "objnav") return RewardMode::kObjNav;
  throw std::invalid_argument("unknown reward mode '" + std::string(name) + "'");
}

RewardConfig default_reward(RewardMode mode) {
  if (mode == RewardMode::kSavNav) return {10.0, -0.01, true, false};
  return {2.5, -0.001, true, false};
}

double compute_reward(const RewardConfig& cfg, RewardMode mode, int d_prev, int d_now,
                      bool success) {
  double shaping = 0.0;
  if (cfg.shaping) {
    if (mode == RewardMode::kSavNav) {
      const bool moved = cfg.as_written_sign ? d_now > d_prev : d_now < d_prev;
      const bool retreated = cfg.as_written_sign ? d_now < d_prev : d_now > d_prev;
      shaping = moved ? 1.0 : (cfg.penalize_retreat && retreated ? -1.0 : 0.0);
    } else {
      shaping = cfg.as_written_sign ? static_cast<double>(d_now - d_prev)
                                    : static_cast<double>(d_prev - d_now);
    }
  }
  return (success ? cfg.goal_bonus : 0.0) + shaping + cfg.step_penalty;
}

std::vector<Cell> goal_cells(const World& world, const EpisodeSpec& spec) {
  const auto& objs = world.objects();
  if (spec.goal_object < 0 || spec.goal_object >= static_cast<int>(objs.size())) {
    throw WorldError("goal object index out of range");
  }
  const PlacedObject& goal = objs[static_cast<std::size_t>(spec.goal_object)];
  if (spec.mode == RewardMode::kSavNav) return {goal.cell};
  std::vector<Cell> cells;
  for (const auto& o : objs) {
    if (o.category == goal.category) cells.push_back(o.cell);
  }
  return cells;
}

int goal_category(const World& world, const EpisodeSpec& spec) {
  return world.objects().at(static_cast<std::size_t>(spec.goal_object)).category;
}

EpisodeSpec sample_episode(const World& world, const EpisodeSampling& cfg, std::mt19937_64& rng) {
  if (world.objects().empty()) throw WorldError("world has no objects");
  if (cfg.success_radius < 1) throw WorldError("success radius must be at least 1");
  if (cfg.max_steps < 1) throw WorldError("max_steps must be positive");
  EpisodeSpec spec;
  spec.mode = cfg.mode;
  spec.max_steps = cfg.max_steps;
  spec.success_radius = cfg.success_radius;
  spec.unheard = cfg.unheard;
  spec.goal_object = std::uniform_int_distribution<int>(
      0, static_cast<int>(world.objects().size()) - 1)(rng);
  const auto goals = goal_cells(world, spec);
  const auto field = distance_field(world, goals);
  std::vector<Cell> starts;
  for (Cell c : world.free_cells()) {
    const int d = field[world.index(c)];
    if (d != kUnreachable && d >= cfg.min_start_distance) starts.push_back(c);
  }
  if (starts.empty()) throw WorldError("no start cell far enough from the goal");
  spec.start.cell =
      starts[std::uniform_int_distribution<std::size_t>(0, starts.size() - 1)(rng)];
  spec.start.heading = static_cast<Heading>(std::uniform_int_distribution<int>(0, 3)(rng));
  if (cfg.sound_stops) {
    spec.sound_stop_time =
        std::uniform_int_distribution<int>(5, std::max(5, cfg.max_steps / 2))(rng);
  }
  return spec;
}

const std::array<float, kSpectrumDim>& category_spectrum(int category, bool unheard) {
  if (category < 0 || category >= kNumObjectCategories) {
    throw std::out_of_range("object category out of range");
  }
  const auto& t = spectra();
  return unheard ? t.unheard[static_cast<std::size_t>(category)]
                 : t.heard[static_cast<std::size_t>(category)];
}

std::array<std::uint8_t, kPatchCells> render_patch(const World& world, Pose pose) {
  std::array<std::uint8_t, kPatchCells> patch{};
  const Cell fwd = forward_offset(pose.heading);
  const Cell right = right_offset(pose.heading);
  for (int i = 0; i < kPatchSide; ++i) {
    const int ahead = kPatchHalf - i;
    for (int j = 0; j < kPatchSide; ++j) {
      const int side = j - kPatchHalf;
      const Cell c{pose.cell.row + ahead * fwd.row + side * right.row,
                   pose.cell.col + ahead * fwd.col + side * right.col};
      std::uint8_t v = kPatchUnknown;
      if (world.in_bounds(c) && line_of_sight(world, pose.cell, c)) {
        v = world.is_wall(c) ? std::uint8_t{kPatchWall}
                             : static_cast<std::uint8_t>(2 + world.semantic_at(c));
      }
      patch[static_cast<std::size_t>(i * kPatchSide + j)] = v;
    }
  }
  return patch;
}

std::array<float, kAudioDim> render_audio(const World& world, Pose pose, int t,
                                          const EpisodeSpec& spec, const std::vector<int>& field,
                                          std::mt19937_64* noise, double noise_sigma) {
  std::array<float, kAudioDim> audio{};
  if (t >= spec.sound_stop_time) return audio;
  const int d = field[world.index(pose.cell)];
  if (d == kUnreachable) throw WorldError("agent cannot reach the sound source");
  const Cell next = next_cell_towards(world, field, pose);
  const Cell delta{next.row - pose.cell.row, next.col - pose.cell.col};
  audio[0] = static_cast<float>(dot(delta, forward_offset(pose.heading)));
  audio[1] = static_cast<float>(dot(delta, right_offset(pose.heading)));
  audio[2] = static_cast<float>(1.0 / (1.0 + d));
  const auto& spectrum = category_spectrum(goal_category(world, spec), spec.unheard);
  std::normal_distribution<double> gauss(0.0, noise_sigma);
  for (int k = 0; k < kSpectrumDim; ++k) {
    double v = spectrum[static_cast<std::size_t>(k)];
    if (noise != nullptr) v += gauss(*noise);
    audio[static_cast<std::size_t>(3 + k)] = static_cast<float>(v);
  }
  return audio;
}

std::array<float, kAudioDim> render_audio(const World& world, Pose pose, int t,
                                          const EpisodeSpec& spec) {
  return render_audio(world, pose, t, spec, distance_field(world, goal_cells(world, spec)));
}

std::array<float, kPoseDim> pose_features(Pose start, Pose pose) {
  const double angle = static_cast<double>(pose.heading) * std::numbers::pi / 2.0;
  return {static_cast<float>((pose.cell.row - start.cell.row) / 10.0),
          static_cast<float>((pose.cell.col - start.cell.col) / 10.0),
          static_cast<float>(std::sin(angle)), static_cast<float>(std::cos(angle))};
}

NavEnv::NavEnv(std::shared_ptr<const World> world, EpisodeSpec spec, EnvConfig cfg,
               std::uint64_t seed)
    : world_(std::move(world)),
      spec_(spec),
      reward_(cfg.reward.value_or(default_reward(spec.mode))),
      noise_sigma_(cfg.noise_sigma),
      seed_(seed) {
  if (!world_) throw WorldError("environment needs a world");
  if (spec_.success_radius < 1) throw WorldError("success radius must be at least 1");
  if (world_->is_wall(spec_.start.cell)) throw WorldError("start pose is on a wall cell");
  field_ = distance_field(*world_, goal_cells(*world_, spec_));
  if (field_[world_->index(spec_.start.cell)] == kUnreachable) {
    throw WorldError("goal is unreachable from the start pose");
  }
  reset();
}

Observation NavEnv::reset() {
  noise_rng_.seed(seed_);
  pose_ = spec_.start;
  t_ = 0;
  prev_action_ = -1;
  distance_ = field_[world_->index(pose_.cell)];
  done_ = false;
  return observe();
}

Observation NavEnv::observe() {
  Observation obs;
  obs.patch = render_patch(*world_, pose_);
  obs.audio = render_audio(*world_, pose_, t_, spec_, field_, &noise_rng_, noise_sigma_);
  obs.pose = pose_features(spec_.start, pose_);
  obs.prev_action = prev_action_;
  obs.t = t_;
  obs.silent = t_ >= spec_.sound_stop_time;
  return obs;
}

StepResult NavEnv::step(Action action) {
  if (done_) throw std::logic_error("step called on a finished episode");
  const int d_prev = distance_;
  pose_ = apply_action(*world_, pose_, action);
  ++t_;
  distance_ = field_[world_->index(pose_.cell)];
  StepOutcome out;
  out.success = action == Action::kStop && distance_ <= spec_.success_radius;
  out.done = action == Action::kStop || t_ >= spec_.max_steps;
  out.distance = distance_;
  out.reward = compute_reward(reward_, spec_.mode, d_prev, distance_, out.success);
  done_ = out.done;
  prev_action_ = static_cast<int>(action);
  return {observe(), out};
}

}  // namespace descrl::sim
