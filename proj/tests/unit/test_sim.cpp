#include <gtest/gtest.h>

#include <cmath>
#include <queue>
#include <set>
#include <sstream>

#include "descrl/sim/io.hpp"
#include "descrl/sim/nav_env.hpp"

namespace {

using namespace descrl::sim;

// Open room of `h` x `w` free cells surrounded by a wall ring.
World open_room(int h, int w, std::vector<PlacedObject> objects = {{0, {1, 1}}}) {
  const int H = h + 2;
  const int W = w + 2;
  std::vector<std::uint8_t> walls(static_cast<std::size_t>(H * W), 1);
  for (int r = 1; r <= h; ++r) {
    for (int c = 1; c <= w; ++c) walls[static_cast<std::size_t>(r * W + c)] = 0;
  }
  return World(H, W, walls, std::vector<std::uint8_t>(walls.size(), 0), std::move(objects), 0);
}

// Unit-weight Dijkstra with an explicit priority queue.
int dijkstra(const World& world, Cell a, Cell b) {
  std::vector<int> best(static_cast<std::size_t>(world.height() * world.width()), -1);
  using Item = std::pair<int, std::pair<int, int>>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  pq.push({0, {a.row, a.col}});
  while (!pq.empty()) {
    auto [d, rc] = pq.top();
    pq.pop();
    const Cell c{rc.first, rc.second};
    auto& slot = best[world.index(c)];
    if (slot != -1) continue;
    slot = d;
    if (c == b) return d;
    const int dr[] = {-1, 1, 0, 0};
    const int dc[] = {0, 0, -1, 1};
    for (int k = 0; k < 4; ++k) {
      const Cell n{c.row + dr[k], c.col + dc[k]};
      if (world.is_free(n) && best[world.index(n)] == -1) pq.push({d + 1, {n.row, n.col}});
    }
  }
  return kUnreachable;
}

TEST(World, SameSeedSameWorld) {
  EXPECT_EQ(generate_world(7, {}), generate_world(7, {}));
  EXPECT_FALSE(generate_world(7, {}) == generate_world(8, {}));
}

TEST(World, InfeasibleConfigsRejected) {
  EXPECT_THROW(generate_world(1, {.height = 11, .width = 11, .rooms = 3, .objects = 0}),
               WorldError);
  EXPECT_THROW(generate_world(1, {.height = 8, .width = 11, .rooms = 3, .objects = 2}),
               WorldError);
  EXPECT_THROW(generate_world(1, {.height = 9, .width = 9, .rooms = 1, .objects = 40}),
               WorldError);
}

TEST(World, ThousandSeedsAreConnected) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const World w = generate_world(seed, {});
    const auto free = w.free_cells();
    // Flood fill from the first free cell; every free cell must be reached.
    std::set<Cell> seen{free.front()};
    std::vector<Cell> stack{free.front()};
    while (!stack.empty()) {
      const Cell c = stack.back();
      stack.pop_back();
      for (Cell d : {Cell{-1, 0}, Cell{1, 0}, Cell{0, -1}, Cell{0, 1}}) {
        const Cell n = c + d;
        if (w.is_free(n) && seen.insert(n).second) stack.push_back(n);
      }
    }
    ASSERT_EQ(seen.size(), free.size()) << "seed " << seed;
    for (const auto& o : w.objects()) ASSERT_TRUE(w.is_free(o.cell));
  }
}

TEST(World, LabelsCoverEnoughCategories) {
  EXPECT_GE(kNumSemantic, 8);
  const World w = generate_world(3, {.height = 13, .width = 13, .rooms = 4, .objects = 6});
  std::set<int> rooms;
  for (Cell c : w.free_cells()) rooms.insert(w.room_at(c));
  EXPECT_GE(rooms.size(), 2u);
}

TEST(Geodesic, Trivial) {
  const World w = open_room(5, 5);
  EXPECT_EQ(geodesic_distance(w, {2, 2}, {2, 2}), 0);
  EXPECT_EQ(geodesic_distance(w, {1, 1}, {5, 5}), 8);
  EXPECT_THROW(geodesic_distance(w, {0, 0}, {1, 1}), WorldError);
}

TEST(Geodesic, MatchesDijkstraOnRandomWorlds) {
  std::mt19937_64 rng(42);
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const World w = generate_world(seed, {.height = 13, .width = 11, .rooms = 4, .objects = 4});
    const auto free = w.free_cells();
    std::uniform_int_distribution<std::size_t> pick(0, free.size() - 1);
    for (int k = 0; k < 20; ++k) {
      const Cell a = free[pick(rng)];
      const Cell b = free[pick(rng)];
      ASSERT_EQ(geodesic_distance(w, a, b), dijkstra(w, a, b));
    }
  }
}

TEST(ShortestPath, StartOnGoalIsStop) {
  const World w = open_room(5, 5);
  EXPECT_EQ(shortest_path_actions(w, {{3, 3}, Heading::kNorth}, {3, 3}),
            std::vector<Action>{Action::kStop});
}

TEST(ShortestPath, GoalThreeAheadRadiusOne) {
  const World w = open_room(5, 5);
  const std::vector<Action> expect{Action::kMoveForward, Action::kMoveForward, Action::kStop};
  EXPECT_EQ(shortest_path_actions(w, {{5, 3}, Heading::kNorth}, {2, 3}, 1), expect);
}

TEST(ShortestPath, UnreachableRejected) {
  std::vector<std::uint8_t> walls = {1, 1, 1, 1, 1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1};
  const World w(3, 5, walls, std::vector<std::uint8_t>(walls.size(), 0), {{0, {1, 3}}}, 0);
  EXPECT_THROW(shortest_path_actions(w, {{1, 1}, Heading::kEast}, {1, 3}), WorldError);
}

TEST(ShortestPath, FiveHundredEpisodesReplayToSuccess) {
  std::mt19937_64 rng(9);
  int replayed = 0;
  for (std::uint64_t seed = 0; replayed < 500; ++seed) {
    auto world = std::make_shared<const World>(generate_world(seed, {}));
    for (int e = 0; e < 5; ++e, ++replayed) {
      const EpisodeSpec spec = sample_episode(*world, {.sound_stops = false}, rng);
      const Cell goal = world->objects()[static_cast<std::size_t>(spec.goal_object)].cell;
      const auto plan = shortest_path_actions(*world, spec.start, goal, spec.success_radius);
      ASSERT_EQ(plan.back(), Action::kStop);
      const int d0 = geodesic_distance(*world, spec.start.cell, goal);
      const auto forwards = std::count(plan.begin(), plan.end(), Action::kMoveForward);
      ASSERT_EQ(forwards, std::max(0, d0 - spec.success_radius));
      NavEnv env(world, spec, {}, seed);
      StepOutcome last;
      for (Action a : plan) last = env.step(a).outcome;
      ASSERT_TRUE(last.success);
      ASSERT_TRUE(last.done);
    }
  }
}

TEST(Reward, SavNavFormula) {
  const RewardConfig cfg = default_reward(RewardMode::kSavNav);
  EXPECT_DOUBLE_EQ(compute_reward(cfg, RewardMode::kSavNav, 5, 4, false), 1.0 - 0.01);
  EXPECT_DOUBLE_EQ(compute_reward(cfg, RewardMode::kSavNav, 2, 1, true), 10.0 + 1.0 - 0.01);
  EXPECT_DOUBLE_EQ(compute_reward(cfg, RewardMode::kSavNav, 3, 3, false), -0.01);
  EXPECT_DOUBLE_EQ(compute_reward(cfg, RewardMode::kSavNav, 3, 4, false), -0.01);
}

TEST(Reward, ObjNavFormulaAndWrittenSign) {
  RewardConfig cfg = default_reward(RewardMode::kObjNav);
  EXPECT_DOUBLE_EQ(compute_reward(cfg, RewardMode::kObjNav, 5, 4, false), 1.0 - 0.001);
  EXPECT_DOUBLE_EQ(compute_reward(cfg, RewardMode::kObjNav, 1, 1, true), 2.5 - 0.001);
  cfg.as_written_sign = true;
  EXPECT_DOUBLE_EQ(compute_reward(cfg, RewardMode::kObjNav, 5, 4, false), -1.0 - 0.001);
  RewardConfig sav = default_reward(RewardMode::kSavNav);
  sav.as_written_sign = true;
  EXPECT_DOUBLE_EQ(compute_reward(sav, RewardMode::kSavNav, 3, 4, false), 1.0 - 0.01);
}

TEST(Env, TurnKeepsDistanceAndWallBumpIsPenalisedNoOp) {
  auto world = std::make_shared<const World>(open_room(5, 5, {{2, {3, 3}}}));
  EpisodeSpec spec;
  spec.start = {{1, 1}, Heading::kNorth};
  NavEnv env(world, spec, {}, 1);
  const int d0 = env.distance();
  auto r = env.step(Action::kTurnLeft);
  EXPECT_EQ(r.outcome.distance, d0);
  EXPECT_DOUBLE_EQ(r.outcome.reward, -0.01);
  r = env.step(Action::kTurnRight);
  r = env.step(Action::kMoveForward);  // faces the border wall
  EXPECT_EQ(env.pose().cell, (Cell{1, 1}));
  EXPECT_DOUBLE_EQ(r.outcome.reward, -0.01);
}

TEST(Env, StopEndsEpisodeAndFurtherStepsRejected) {
  auto world = std::make_shared<const World>(open_room(5, 5, {{2, {3, 3}}}));
  EpisodeSpec spec;
  spec.start = {{1, 1}, Heading::kNorth};
  NavEnv env(world, spec, {}, 1);
  const auto r = env.step(Action::kStop);
  EXPECT_TRUE(r.outcome.done);
  EXPECT_FALSE(r.outcome.success);
  EXPECT_THROW(env.step(Action::kMoveForward), std::logic_error);
}

TEST(Env, MaxStepsEndsEpisode) {
  auto world = std::make_shared<const World>(open_room(5, 5, {{2, {3, 3}}}));
  EpisodeSpec spec;
  spec.start = {{1, 1}, Heading::kNorth};
  spec.max_steps = 3;
  NavEnv env(world, spec, {}, 1);
  EXPECT_FALSE(env.step(Action::kTurnLeft).outcome.done);
  EXPECT_FALSE(env.step(Action::kTurnLeft).outcome.done);
  EXPECT_TRUE(env.step(Action::kTurnLeft).outcome.done);
}

TEST(Env, ObjNavShapingTelescopes) {
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto world = std::make_shared<const World>(generate_world(seed, {}));
    EpisodeSpec spec = sample_episode(*world, {.mode = RewardMode::kObjNav}, rng);
    NavEnv env(world, spec, {.reward = RewardConfig{0.0, 0.0, true, false}}, seed);
    const int d0 = env.distance();
    double total = 0.0;
    std::uniform_int_distribution<int> act(0, 2);
    while (!env.done()) {
      const Action a = env.t() == 40 ? Action::kStop : static_cast<Action>(act(rng));
      total += env.step(a).outcome.reward;
    }
    EXPECT_EQ(total, static_cast<double>(d0 - env.distance()));
  }
}

TEST(Env, RewardReplayFromLogIsBitExact) {
  std::mt19937_64 rng(5);
  auto world = std::make_shared<const World>(generate_world(12, {}));
  const EpisodeSpec spec = sample_episode(*world, {}, rng);
  NavEnv env(world, spec, {}, 3);
  std::vector<StepLog> log;
  std::uniform_int_distribution<int> act(0, 3);
  while (!env.done()) {
    const Action a = static_cast<Action>(act(rng));
    const auto r = env.step(a);
    log.push_back({env.t(), env.pose(), a, r.outcome.reward, r.outcome.distance,
                   r.observation.silent, r.outcome.success, r.outcome.done});
  }
  std::stringstream buf;
  write_jsonl(buf, log);
  int d_prev = geodesic_distance(*world, spec.start.cell,
                                 world->objects()[static_cast<std::size_t>(spec.goal_object)].cell);
  std::string line;
  while (std::getline(buf, line)) {
    const auto s = nlohmann::json::parse(line).get<StepLog>();
    EXPECT_EQ(compute_reward(env.reward_config(), spec.mode, d_prev, s.distance, s.success),
              s.reward);
    d_prev = s.distance;
  }
}

TEST(Env, SameSeedSameObservationStream) {
  std::mt19937_64 rng(6);
  auto world = std::make_shared<const World>(generate_world(2, {}));
  const EpisodeSpec spec = sample_episode(*world, {}, rng);
  const std::vector<Action> actions = {Action::kTurnLeft, Action::kMoveForward,
                                       Action::kMoveForward, Action::kTurnRight,
                                       Action::kMoveForward, Action::kStop};
  auto run = [&] {
    NavEnv env(world, spec, {}, 77);
    std::vector<Observation> obs{env.reset()};
    for (Action a : actions) obs.push_back(env.step(a).observation);
    return obs;
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].patch, b[i].patch);
    EXPECT_EQ(a[i].audio, b[i].audio);
    EXPECT_EQ(a[i].pose, b[i].pose);
  }
}

TEST(Audio, SilentAfterStopTime) {
  auto world = std::make_shared<const World>(open_room(5, 5, {{2, {3, 3}}}));
  EpisodeSpec spec;
  spec.start = {{1, 1}, Heading::kNorth};
  spec.sound_stop_time = 2;
  const std::array<float, kAudioDim> zero{};
  EXPECT_NE(render_audio(*world, spec.start, 1, spec), zero);
  EXPECT_EQ(render_audio(*world, spec.start, 2, spec), zero);
  EXPECT_EQ(render_audio(*world, spec.start, 100, spec), zero);
  NavEnv env(world, spec, {}, 0);
  env.step(Action::kTurnLeft);
  const auto obs = env.step(Action::kTurnLeft).observation;
  EXPECT_TRUE(obs.silent);
  EXPECT_EQ(obs.audio, zero);
}

TEST(Audio, IntensityAndDirection) {
  const World w = open_room(5, 5, {{2, {3, 3}}});
  EpisodeSpec spec;
  const auto on_goal = render_audio(w, {{3, 3}, Heading::kEast}, 0, spec);
  EXPECT_FLOAT_EQ(on_goal[2], 1.0f);
  EXPECT_EQ(on_goal[0], 0.0f);
  EXPECT_EQ(on_goal[1], 0.0f);
  // Goal straight ahead when facing north from (5,3).
  const auto ahead = render_audio(w, {{5, 3}, Heading::kNorth}, 0, spec);
  EXPECT_EQ(ahead[0], 1.0f);
  EXPECT_EQ(ahead[1], 0.0f);
  EXPECT_FLOAT_EQ(ahead[2], 1.0f / 3.0f);
  // Facing west, the same direction is to the agent's right.
  const auto right = render_audio(w, {{5, 3}, Heading::kWest}, 0, spec);
  EXPECT_EQ(right[0], 0.0f);
  EXPECT_EQ(right[1], 1.0f);
}

TEST(Audio, IntensityNonIncreasingWalkingAway) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const World w = generate_world(seed, {});
    EpisodeSpec spec;
    spec.goal_object = 0;
    const auto goals = goal_cells(w, spec);
    const auto field = distance_field(w, goals);
    // Walk uphill on the BFS field from the goal.
    Cell c = goals.front();
    float prev = 2.0f;
    while (true) {
      const float intensity = render_audio(w, {c, Heading::kNorth}, 0, spec, field)[2];
      EXPECT_LE(intensity, prev);
      EXPECT_GT(intensity, 0.0f);
      EXPECT_LE(intensity, 1.0f);
      prev = intensity;
      bool moved = false;
      for (Cell d : {Cell{-1, 0}, Cell{0, 1}, Cell{1, 0}, Cell{0, -1}}) {
        const Cell n = c + d;
        if (w.is_free(n) && field[w.index(n)] == field[w.index(c)] + 1) {
          c = n;
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
  }
}

TEST(Audio, UnheardSwapsSpectrumOfSameCategory) {
  const World w = open_room(5, 5, {{4, {3, 3}}});
  EpisodeSpec heard;
  EpisodeSpec unheard;
  unheard.unheard = true;
  const auto a = render_audio(w, {{1, 1}, Heading::kNorth}, 0, heard);
  const auto b = render_audio(w, {{1, 1}, Heading::kNorth}, 0, unheard);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(i)]);
  EXPECT_NE(std::vector<float>(a.begin() + 3, a.end()), std::vector<float>(b.begin() + 3, b.end()));
  EXPECT_EQ(category_spectrum(4, true), category_spectrum(4, true));
}

TEST(Patch, WallsHideCellsBehindThem) {
  // Corridor: agent at (1,1) facing east; a wall at (1,3) hides (1,4).
  std::vector<std::uint8_t> walls(3 * 7, 1);
  for (int c = 1; c <= 5; ++c) walls[static_cast<std::size_t>(7 + c)] = 0;
  walls[7 + 3] = 1;
  const World w(3, 7, walls, std::vector<std::uint8_t>(walls.size(), 2), {{0, {1, 2}}}, 0);
  const auto patch = render_patch(w, {{1, 1}, Heading::kEast});
  auto at = [&](int ahead, int right) {
    return patch[static_cast<std::size_t>((kPatchHalf - ahead) * kPatchSide + right + kPatchHalf)];
  };
  EXPECT_EQ(at(0, 0), 2 + room_label(2));
  EXPECT_EQ(at(1, 0), 2 + object_label(0));
  EXPECT_EQ(at(2, 0), kPatchWall);
  EXPECT_EQ(at(3, 0), kPatchUnknown);
  EXPECT_EQ(at(0, -1), kPatchWall);  // north of the agent is the border wall
  EXPECT_EQ(at(0, -2), kPatchUnknown);  // outside the grid
}

TEST(Io, WorldAndEpisodeRoundTrip) {
  const World w = generate_world(21, {});
  std::mt19937_64 rng(1);
  const EpisodeSpec s = sample_episode(w, {}, rng);
  EXPECT_EQ(nlohmann::json(w).get<World>(), w);
  EXPECT_EQ(nlohmann::json(s).get<EpisodeSpec>(), s);
  EpisodeSpec never = s;
  never.sound_stop_time = kNeverStops;
  EXPECT_TRUE(nlohmann::json(never)["sound_stop_time"].is_null());
  EXPECT_EQ(nlohmann::json(never).get<EpisodeSpec>(), never);
}

}  // namespace
