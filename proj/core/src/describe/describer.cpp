#include "descrl/describe/describer.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <memory>
#include <numeric>
#include <random>
#include <set>

namespace descrl::describe {

using sim::Action;
using sim::Cell;
using sim::Pose;
using sim::World;

namespace {

std::set<int> visible_objects(const World& world, Pose pose) {
  std::set<int> out;
  const auto patch = sim::render_patch(world, pose);
  const Cell fwd = sim::forward_offset(pose.heading);
  const Cell right = sim::right_offset(pose.heading);
  for (int i = 0; i < sim::kPatchSide; ++i) {
    for (int j = 0; j < sim::kPatchSide; ++j) {
      const int v = patch[static_cast<std::size_t>(i * sim::kPatchSide + j)];
      if (v < 2 || !sim::is_object_label(v - 2)) continue;
      const int ahead = sim::kPatchHalf - i;
      const int side = j - sim::kPatchHalf;
      const Cell c{pose.cell.row + ahead * fwd.row + side * right.row,
                   pose.cell.col + ahead * fwd.col + side * right.col};
      out.insert(world.object_at(c));
    }
  }
  return out;
}

void check_trajectory(const World& world, const Trajectory& traj, std::size_t begin,
                      std::size_t end) {
  if (traj.poses.size() != traj.actions.size() + 1) {
    throw DescribeError("trajectory needs one more pose than actions");
  }
  if (begin >= end) throw DescribeError("empty description window");
  if (end > traj.actions.size()) throw DescribeError("description window past trajectory end");
  for (std::size_t i = begin; i <= end; ++i) {
    if (world.is_wall(traj.poses[i].cell)) throw DescribeError("trajectory leaves the free space");
  }
  for (std::size_t i = begin; i < end; ++i) {
    if (sim::apply_action(world, traj.poses[i], traj.actions[i]) != traj.poses[i + 1]) {
      throw DescribeError("trajectory poses do not follow its actions");
    }
  }
}

class Narrator {
 public:
  Narrator(const World& world, const GoalContext& goal)
      : world_(world), goal_(goal), vocab_(Vocabulary::instance()) {}

  std::vector<std::vector<int>> run(const Trajectory& traj, std::size_t begin, std::size_t end) {
    region_ = world_.room_at(traj.poses[begin].cell);
    seen_ = visible_objects(world_, traj.poses[begin]);
    for (std::size_t i = begin; i < end; ++i) {
      const Pose p = traj.poses[i];
      const Pose q = traj.poses[i + 1];
      switch (traj.actions[i]) {
        case Action::kTurnLeft:
          --pending_turn_;
          last_turn_ = "left";
          break;
        case Action::kTurnRight:
          ++pending_turn_;
          last_turn_ = "right";
          break;
        case Action::kMoveForward:
          if (q.cell != p.cell) moved(q);
          break;
        case Action::kStop: stopped(p); break;
      }
    }
    if (pending_forward_) clause({"go", "forward"});
    return std::move(clauses_);
  }

 private:
  int net_turn() const { return ((pending_turn_ % 4) + 4) % 4; }

  void clause(std::initializer_list<std::string_view> words, int noun_label = -1) {
    std::vector<int> ids;
    for (auto w : words) ids.push_back(vocab_.id(w));
    if (noun_label >= 0) ids.push_back(vocab_.noun(noun_label));
    clauses_.push_back(std::move(ids));
  }

  void moved(Pose q) {
    const int region = world_.room_at(q.cell);
    const int n = net_turn();
    if (region != region_) {
      if (n == 2) clause({"turn", last_turn_});
      if (n == 0) {
        clause({"enter", "the"}, sim::room_label(region));
      } else {
        clause({"turn", n == 1 ? "right" : n == 3 ? "left" : last_turn_, "into", "the"},
               sim::room_label(region));
      }
      pending_forward_ = false;
      region_ = region;
    } else {
      if (n == 1) clause({"turn", "right"});
      if (n == 3) clause({"turn", "left"});
      if (n == 2) {
        clause({"turn", last_turn_});
        clause({"turn", last_turn_});
      }
      pending_forward_ = true;
    }
    pending_turn_ = 0;
    for (int obj : visible_objects(world_, q)) {
      if (obj == goal_.goal_object || !seen_.insert(obj).second) continue;
      clause({"go", "past", "the"},
             sim::object_label(world_.objects()[static_cast<std::size_t>(obj)].category));
      pending_forward_ = false;
    }
  }

  void stopped(Pose p) {
    if (pending_forward_) clause({"go", "forward"});
    pending_forward_ = false;
    pending_turn_ = 0;
    const int d = goal_.goal_field.empty() ? sim::kUnreachable
                                           : goal_.goal_field[world_.index(p.cell)];
    if (d <= goal_.success_radius) {
      clause({"stop", "near", "the"}, goal_.goal_label);
    } else {
      clause({"stop", "near", "the"}, sim::room_label(region_));
    }
  }

  const World& world_;
  const GoalContext& goal_;
  const Vocabulary& vocab_;
  std::vector<std::vector<int>> clauses_;
  std::set<int> seen_;
  int region_ = 0;
  int pending_turn_ = 0;
  std::string_view last_turn_ = "right";
  bool pending_forward_ = false;
};

}  // namespace

std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::kPast: return "past";
    case Mode::kFuture: return "future";
    case Mode::kPastFuture: return "past_future";
  }
  return "past";
}

Mode mode_from_name(std::string_view name) {
  if (name == "past") return Mode::kPast;
  if (name == "future") return Mode::kFuture;
  if (name == "past_future" || name == "pf") return Mode::kPastFuture;
  throw std::invalid_argument("unknown description mode '" + std::string(name) + "'");
}

Trajectory replay(const World& world, Pose start, const std::vector<Action>& actions) {
  Trajectory traj;
  traj.poses.reserve(actions.size() + 1);
  traj.poses.push_back(start);
  for (Action a : actions) traj.poses.push_back(sim::apply_action(world, traj.poses.back(), a));
  traj.actions = actions;
  return traj;
}

GoalContext goal_context(const World& world, const sim::EpisodeSpec& spec) {
  GoalContext g;
  g.goal_object = spec.goal_object;
  g.goal_label = sim::object_label(sim::goal_category(world, spec));
  g.goal_field = sim::distance_field(world, sim::goal_cells(world, spec));
  g.success_radius = spec.success_radius;
  return g;
}

std::string Description::text() const { return Vocabulary::instance().decode(tokens); }

std::vector<std::vector<int>> narrate(const World& world, const Trajectory& traj,
                                      std::size_t begin, std::size_t end,
                                      const GoalContext& goal) {
  check_trajectory(world, traj, begin, end);
  return Narrator(world, goal).run(traj, begin, end);
}

std::vector<int> assemble(const std::vector<std::vector<int>>& clauses, int fallback_region) {
  const auto& vocab = Vocabulary::instance();
  if (clauses.empty()) {
    return {vocab.id("wait"), vocab.id("near"), vocab.id("the"),
            vocab.noun(sim::room_label(fallback_region)), kEos};
  }
  std::size_t first = 0;
  std::size_t total = 1;
  for (const auto& c : clauses) total += c.size();
  while (total > static_cast<std::size_t>(kMaxDescriptionLength) && first + 1 < clauses.size()) {
    total -= clauses[first++].size();
  }
  std::vector<int> tokens;
  for (std::size_t i = first; i < clauses.size(); ++i) {
    tokens.insert(tokens.end(), clauses[i].begin(), clauses[i].end());
  }
  tokens.push_back(kEos);
  return tokens;
}

Description describe(const World& world, const Trajectory& traj, std::size_t begin,
                     std::size_t end, Mode mode, const GoalContext& goal) {
  const auto clauses = narrate(world, traj, begin, end, goal);
  return {assemble(clauses, world.room_at(traj.poses[end].cell)), mode, std::nullopt};
}

Trajectory future_trajectory(const World& world, Pose pose, int k, const GoalContext& goal) {
  auto plan = sim::shortest_path_actions_field(world, pose, goal.goal_field, goal.success_radius);
  if (k >= 0 && plan.size() > static_cast<std::size_t>(k)) plan.resize(static_cast<std::size_t>(k));
  return replay(world, pose, plan);
}

Description past_description(const World& world, const Trajectory& traj, std::size_t t, int k,
                             const GoalContext& goal) {
  const std::size_t span = static_cast<std::size_t>(std::max(k, 0));
  return describe(world, traj, t > span ? t - span : 0, t, Mode::kPast, goal);
}

Description future_description(const World& world, Pose pose, int k, const GoalContext& goal) {
  const Trajectory fut = future_trajectory(world, pose, k, goal);
  return describe(world, fut, 0, fut.actions.size(), Mode::kFuture, goal);
}

Description past_future_description(const World& world, const Trajectory& traj, std::size_t t,
                                    int k, const GoalContext& goal) {
  const std::size_t span = static_cast<std::size_t>(std::max(k, 0));
  std::vector<std::vector<int>> clauses;
  if (t > 0) clauses = narrate(world, traj, t > span ? t - span : 0, t, goal);
  const Trajectory fut = future_trajectory(world, traj.poses.at(t), k, goal);
  if (fut.actions.empty() && t == 0) throw DescribeError("empty description window");
  if (!fut.actions.empty()) {
    auto more = narrate(world, fut, 0, fut.actions.size(), goal);
    clauses.insert(clauses.end(), more.begin(), more.end());
  }
  return {assemble(clauses, world.room_at(traj.poses[t].cell)), Mode::kPastFuture, std::nullopt};
}

Description describe_at(const World& world, const Trajectory& traj, std::size_t t, int k,
                        Mode mode, const GoalContext& goal) {
  switch (mode) {
    case Mode::kPast: return past_description(world, traj, t, k, goal);
    case Mode::kFuture: return future_description(world, traj.poses.at(t), k, goal);
    case Mode::kPastFuture: return past_future_description(world, traj, t, k, goal);
  }
  throw DescribeError("unknown mode");
}

tensor::Tensor<double> soft_targets(const std::vector<int>& tokens, double smoothing,
                                    double temperature, int vocab_size) {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw std::invalid_argument("label smoothing must lie in [0, 1)");
  }
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  const auto v = static_cast<std::size_t>(vocab_size);
  tensor::Tensor<double> q({tokens.size(), v});
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    if (tokens[r] < 0 || tokens[r] >= vocab_size) throw std::out_of_range("token id out of range");
    double total = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      double p = smoothing / static_cast<double>(vocab_size);
      if (static_cast<int>(c) == tokens[r]) p += 1.0 - smoothing;
      p = temperature == 1.0 ? p : std::pow(p, 1.0 / temperature);
      q.at(r, c) = p;
      total += p;
    }
    for (std::size_t c = 0; c < v; ++c) q.at(r, c) /= total;
  }
  return q;
}

std::vector<DatasetRecord> build_dataset(const DatasetConfig& cfg) {
  if (cfg.k < 1) throw std::invalid_argument("description window k must be positive");
  if (cfg.worlds < 1) throw std::invalid_argument("dataset needs at least one world");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::uint64_t> world_seeds(static_cast<std::size_t>(cfg.worlds));
  for (auto& s : world_seeds) s = rng();
  std::vector<std::shared_ptr<const World>> worlds(world_seeds.size());
  const auto k = static_cast<std::size_t>(cfg.k);

  std::vector<DatasetRecord> records;
  records.reserve(cfg.samples);
  for (std::size_t n = 0; n < cfg.samples; ++n) {
    bool done = false;
    for (int attempt = 0; attempt < cfg.max_retries && !done; ++attempt) {
      const auto wi = std::uniform_int_distribution<std::size_t>(0, worlds.size() - 1)(rng);
      if (!worlds[wi]) {
        worlds[wi] = std::make_shared<const World>(sim::generate_world(world_seeds[wi], cfg.world));
      }
      const World& world = *worlds[wi];
      sim::EpisodeSpec spec;
      std::vector<Action> plan;
      try {
        spec = sim::sample_episode(
            world, {.mode = cfg.reward_mode, .sound_stops = false, .min_start_distance = 2}, rng);
        plan = sim::shortest_path_actions(
            world, spec.start, world.objects()[static_cast<std::size_t>(spec.goal_object)].cell,
            spec.success_radius);
      } catch (const sim::WorldError&) {
        continue;
      }
      const std::size_t len = plan.size();
      if (cfg.mode == Mode::kPastFuture && len < 2) continue;
      std::size_t t = 0;
      switch (cfg.mode) {
        case Mode::kPast: t = std::uniform_int_distribution<std::size_t>(1, len)(rng); break;
        case Mode::kFuture: t = std::uniform_int_distribution<std::size_t>(0, len - 1)(rng); break;
        case Mode::kPastFuture:
          t = std::uniform_int_distribution<std::size_t>(1, len - 1)(rng);
          break;
      }
      const Trajectory traj = replay(world, spec.start, plan);
      const GoalContext goal = goal_context(world, spec);
      DatasetRecord rec;
      rec.world_seed = world_seeds[wi];
      rec.world = cfg.world;
      rec.episode = spec;
      rec.actions = plan;
      rec.t = t;
      rec.mode = cfg.mode;
      const std::size_t past_begin = t > k ? t - k : 0;
      const std::size_t future_end = std::min(len, t + k);
      std::vector<std::vector<int>> clauses;
      if (cfg.mode != Mode::kFuture) clauses = narrate(world, traj, past_begin, t, goal);
      if (cfg.mode != Mode::kPast) {
        auto more = narrate(world, traj, t, future_end, goal);
        clauses.insert(clauses.end(), more.begin(), more.end());
      }
      rec.window_begin = cfg.mode == Mode::kFuture ? t : past_begin;
      rec.window_end = cfg.mode == Mode::kPast ? t : future_end;
      rec.tokens = assemble(clauses, world.room_at(traj.poses[t].cell));
      records.push_back(std::move(rec));
      done = true;
    }
    if (!done) throw DescribeError("could not sample a reachable episode within the retry bound");
  }
  std::shuffle(records.begin(), records.end(), rng);
  return records;
}

nlohmann::json record_to_json(const DatasetRecord& r) {
  nlohmann::json actions = nlohmann::json::array();
  for (Action a : r.actions) actions.push_back(sim::action_name(a));
  nlohmann::json episode = r.episode;
  episode["actions"] = actions;
  return {{"world_ref",
           {{"seed", r.world_seed},
            {"height", r.world.height},
            {"width", r.world.width},
            {"rooms", r.world.rooms},
            {"objects", r.world.objects}}},
          {"episode", episode},
          {"t", r.t},
          {"window", {r.window_begin, r.window_end}},
          {"mode", mode_name(r.mode)},
          {"tokens", r.tokens},
          {"text", Vocabulary::instance().decode(r.tokens)},
          {"soft", nullptr}};
}

DatasetRecord record_from_json(const nlohmann::json& j) {
  DatasetRecord r;
  const auto& w = j.at("world_ref");
  r.world_seed = w.at("seed").get<std::uint64_t>();
  r.world = {w.at("height").get<int>(), w.at("width").get<int>(), w.at("rooms").get<int>(),
             w.at("objects").get<int>()};
  r.episode = j.at("episode").get<sim::EpisodeSpec>();
  for (const auto& a : j.at("episode").at("actions")) {
    r.actions.push_back(sim::action_from_name(a.get<std::string>()));
  }
  r.t = j.at("t").get<std::size_t>();
  r.window_begin = j.at("window").at(0).get<std::size_t>();
  r.window_end = j.at("window").at(1).get<std::size_t>();
  r.mode = mode_from_name(j.at("mode").get<std::string>());
  r.tokens = j.at("tokens").get<std::vector<int>>();
  return r;
}

void write_dataset(std::ostream& out, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<DatasetRecord> read_dataset(std::istream& in) {
  std::vector<DatasetRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace descrl::describe
