#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "descrl/describe/describer.hpp"

namespace {

using namespace descrl::describe;
using namespace descrl::sim;

World open_room(int h, int w, std::vector<PlacedObject> objects, std::uint8_t room = 0) {
  const int H = h + 2;
  const int W = w + 2;
  std::vector<std::uint8_t> walls(static_cast<std::size_t>(H * W), 1);
  for (int r = 1; r <= h; ++r) {
    for (int c = 1; c <= w; ++c) walls[static_cast<std::size_t>(r * W + c)] = 0;
  }
  return World(H, W, walls, std::vector<std::uint8_t>(walls.size(), room), std::move(objects), 0);
}

EpisodeSpec spec_for(int goal_object, Pose start) {
  EpisodeSpec s;
  s.goal_object = goal_object;
  s.start = start;
  return s;
}

std::string text(const Description& d) { return d.text(); }

DatasetConfig dataset(std::uint64_t seed, std::size_t samples, Mode mode, int k = 19) {
  DatasetConfig cfg;
  cfg.seed = seed;
  cfg.samples = samples;
  cfg.mode = mode;
  cfg.k = k;
  return cfg;
}

TEST(Vocabulary, LayoutAndRoundTrip) {
  const auto& v = Vocabulary::instance();
  EXPECT_EQ(v.id("<bos>"), kBos);
  EXPECT_EQ(v.id("<eos>"), kEos);
  EXPECT_EQ(v.id("<pad>"), kPad);
  EXPECT_EQ(v.size(), 17 + kNumSemantic);
  for (int i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(i)), i);
  EXPECT_EQ(v.decode(v.encode("go past the sofa")), "go past the sofa");
  EXPECT_EQ(v.token(v.noun(object_label(5))), "sofa");
  EXPECT_THROW(v.id("banana"), std::out_of_range);
}

TEST(Describe, StationaryWindowWaits) {
  const World w = open_room(5, 5, {{0, {1, 1}}}, 3);
  const EpisodeSpec spec = spec_for(0, {{4, 4}, Heading::kNorth});
  const auto traj = replay(w, spec.start, {Action::kTurnLeft, Action::kTurnLeft,
                                           Action::kTurnRight});
  const auto d = describe(w, traj, 0, 3, Mode::kPast, goal_context(w, spec));
  EXPECT_EQ(text(d), "wait near the hallway");
  EXPECT_EQ(d.tokens.back(), kEos);
}

TEST(Describe, FutureTwoCellsFromGoal) {
  const World w = open_room(5, 5, {{1, {1, 3}}});
  const EpisodeSpec spec = spec_for(0, {{3, 3}, Heading::kNorth});
  const auto d = future_description(w, spec.start, 19, goal_context(w, spec));
  EXPECT_EQ(text(d), "go forward stop near the table");
}

TEST(Describe, RegionTransitionsAndObjects) {
  // Two rooms split by a wall with a door at (3, 4); the lamp in the second
  // room comes into view from the doorway.
  World base = open_room(5, 7, {{0, {1, 1}}});
  std::vector<std::uint8_t> walls = base.wall_mask();
  std::vector<std::uint8_t> rooms = base.room_labels();
  const int W = base.width();
  for (int r = 1; r <= 5; ++r) {
    if (r != 3) walls[static_cast<std::size_t>(r * W + 4)] = 1;
    for (int c = 5; c <= 7; ++c) rooms[static_cast<std::size_t>(r * W + c)] = 1;
  }
  const World w(base.height(), W, walls, rooms, {{0, {1, 1}}, {18, {5, 7}}}, 0);
  const EpisodeSpec spec = spec_for(0, {{3, 2}, Heading::kEast});
  const auto traj = replay(w, spec.start,
                           {Action::kMoveForward, Action::kMoveForward, Action::kMoveForward,
                            Action::kTurnRight, Action::kMoveForward, Action::kStop});
  const auto d = describe(w, traj, 0, traj.actions.size(), Mode::kPast, goal_context(w, spec));
  EXPECT_EQ(text(d), "go past the lamp enter the kitchen turn right go forward stop near the kitchen");
}

TEST(Describe, TurnIntoRegion) {
  World base = open_room(5, 5, {{0, {1, 1}}});
  std::vector<std::uint8_t> rooms = base.room_labels();
  const int W = base.width();
  for (int c = 1; c <= 5; ++c) rooms[static_cast<std::size_t>(5 * W + c)] = 4;
  const World w(base.height(), W, base.wall_mask(), rooms, {{0, {1, 1}}}, 0);
  const EpisodeSpec spec = spec_for(0, {{4, 3}, Heading::kWest});
  const auto traj = replay(w, spec.start, {Action::kTurnLeft, Action::kMoveForward});
  const auto d = describe(w, traj, 0, 2, Mode::kPast, goal_context(w, spec));
  EXPECT_EQ(text(d), "turn left into the office");
}

TEST(Describe, ErrorsOnEmptyWindowAndInvalidTrajectory) {
  const World w = open_room(5, 5, {{0, {1, 1}}});
  const EpisodeSpec spec = spec_for(0, {{3, 3}, Heading::kNorth});
  const auto goal = goal_context(w, spec);
  const auto traj = replay(w, spec.start, {Action::kMoveForward});
  EXPECT_THROW(describe(w, traj, 1, 1, Mode::kPast, goal), DescribeError);
  EXPECT_THROW(past_description(w, traj, 0, 5, goal), DescribeError);
  Trajectory bad = traj;
  bad.poses[1].cell = {0, 3};
  EXPECT_THROW(describe(w, bad, 0, 1, Mode::kPast, goal), DescribeError);
}

TEST(Describe, PastFutureIsConcatenation) {
  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const World w = generate_world(seed, {});
    const EpisodeSpec spec = sample_episode(w, {.sound_stops = false}, rng);
    const auto goal = goal_context(w, spec);
    std::vector<Action> acts;
    std::uniform_int_distribution<int> a(0, 2);
    for (int i = 0; i < 6; ++i) acts.push_back(static_cast<Action>(a(rng)));
    const auto traj = replay(w, spec.start, acts);
    const std::size_t t = 6;
    auto clauses = narrate(w, traj, 2, t, goal);
    const auto fut = future_trajectory(w, traj.poses[t], 4, goal);
    auto more = narrate(w, fut, 0, fut.actions.size(), goal);
    std::vector<int> expect;
    for (const auto& c : clauses) expect.insert(expect.end(), c.begin(), c.end());
    for (const auto& c : more) expect.insert(expect.end(), c.begin(), c.end());
    expect.push_back(kEos);
    if (expect.size() <= static_cast<std::size_t>(kMaxDescriptionLength)) {
      EXPECT_EQ(past_future_description(w, traj, t, 4, goal).tokens, expect);
    }
  }
}

TEST(Describe, TruncationDropsOldestClauses) {
  std::vector<std::vector<int>> clauses;
  for (int i = 0; i < 10; ++i) clauses.push_back({3, 15, 16, 20 + i});  // go past the <noun>
  const auto tokens = assemble(clauses, 0);
  EXPECT_EQ(tokens.size(), 21u);  // five clauses of four plus EOS
  EXPECT_EQ(tokens[3], 25);
  EXPECT_EQ(tokens[19], 29);
}

TEST(Describe, ClosedVocabularyAndLengthBound) {
  std::mt19937_64 rng(8);
  const auto& vocab = Vocabulary::instance();
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const World w = generate_world(seed, {.height = 13, .width = 13, .rooms = 5, .objects = 8});
    const EpisodeSpec spec = sample_episode(w, {.sound_stops = false}, rng);
    const auto goal = goal_context(w, spec);
    std::vector<Action> acts;
    std::uniform_int_distribution<int> a(0, 3);
    for (int i = 0; i < 60; ++i) acts.push_back(static_cast<Action>(a(rng)));
    const auto traj = replay(w, spec.start, acts);
    for (std::size_t t = 1; t <= acts.size(); t += 7) {
      for (Mode m : {Mode::kPast, Mode::kFuture, Mode::kPastFuture}) {
        const auto d = describe_at(w, traj, t, 19, m, goal);
        ASSERT_LE(d.tokens.size(), static_cast<std::size_t>(kMaxDescriptionLength));
        ASSERT_EQ(d.tokens.back(), kEos);
        for (std::size_t i = 0; i + 1 < d.tokens.size(); ++i) {
          ASSERT_GE(d.tokens[i], 3);
          ASSERT_LT(d.tokens[i], vocab.size());
        }
      }
    }
  }
}

TEST(Describe, FutureRegionNounsFollowShortestPath) {
  std::mt19937_64 rng(4);
  const auto& vocab = Vocabulary::instance();
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const World w = generate_world(seed, {.height = 13, .width = 13, .rooms = 4, .objects = 3});
    const EpisodeSpec spec = sample_episode(w, {.sound_stops = false}, rng);
    const auto goal = goal_context(w, spec);
    const auto d = future_description(w, spec.start, 1000, goal);
    const auto fut = future_trajectory(w, spec.start, 1000, goal);
    // Oracle: each forward move descends the BFS field by one; record room changes.
    std::vector<std::string> expect;
    int room = w.room_at(spec.start.cell);
    for (std::size_t i = 0; i + 1 < fut.poses.size(); ++i) {
      const Cell a = fut.poses[i].cell;
      const Cell b = fut.poses[i + 1].cell;
      if (a == b) continue;
      ASSERT_EQ(goal.goal_field[w.index(b)] + 1, goal.goal_field[w.index(a)]);
      if (w.room_at(b) != room) {
        room = w.room_at(b);
        expect.emplace_back(kRoomNames[static_cast<std::size_t>(room)]);
      }
    }
    // Skip cases that hit the length bound; truncation removes early clauses.
    std::size_t clause_tokens = 0;
    for (const auto& c : narrate(w, fut, 0, fut.actions.size(), goal)) clause_tokens += c.size();
    if (clause_tokens + 1 > static_cast<std::size_t>(kMaxDescriptionLength)) continue;
    std::vector<std::string> got;
    for (int id : d.tokens) {
      const auto& tok = vocab.token(id);
      for (auto r : kRoomNames) {
        if (tok == r) got.push_back(tok);
      }
    }
    EXPECT_EQ(got, expect) << d.text();
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Describe, PastDependsOnlyOnHistory) {
  std::mt19937_64 rng(9);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const World w = generate_world(seed, {});
    const EpisodeSpec spec = sample_episode(w, {.sound_stops = false}, rng);
    const auto goal = goal_context(w, spec);
    std::vector<Action> a1;
    std::uniform_int_distribution<int> a(0, 2);
    for (int i = 0; i < 12; ++i) a1.push_back(static_cast<Action>(a(rng)));
    std::vector<Action> a2(a1.begin(), a1.begin() + 6);
    for (int i = 0; i < 6; ++i) a2.push_back(static_cast<Action>(a(rng)));
    const auto d1 = past_description(w, replay(w, spec.start, a1), 6, 5, goal);
    const auto d2 = past_description(w, replay(w, spec.start, a2), 6, 5, goal);
    EXPECT_EQ(d1.tokens, d2.tokens);
  }
}

TEST(SoftTargets, Examples) {
  const std::vector<int> tokens = {5, 1};
  const auto hard = soft_targets(tokens, 0.0, 1.0, 60);
  for (std::size_t c = 0; c < 60; ++c) {
    EXPECT_EQ(hard.at(0, c), c == 5 ? 1.0 : 0.0);
    EXPECT_EQ(hard.at(1, c), c == 1 ? 1.0 : 0.0);
  }
  const auto smooth = soft_targets(tokens, 0.1, 1.0, 60);
  EXPECT_NEAR(smooth.at(0, 5), 0.9 + 0.1 / 60.0, 1e-12);
  EXPECT_NEAR(smooth.at(0, 7), 0.1 / 60.0, 1e-12);
  EXPECT_THROW(soft_targets(tokens, 1.0, 1.0, 60), std::invalid_argument);
  EXPECT_THROW(soft_targets(tokens, -0.1, 1.0, 60), std::invalid_argument);
}

TEST(SoftTargets, RowsSumToOne) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> eps(0.0, 0.99);
  std::uniform_real_distribution<double> temp(0.2, 5.0);
  std::uniform_int_distribution<int> tok(0, 49);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> tokens(5);
    for (int& t : tokens) t = tok(rng);
    const auto q = soft_targets(tokens, eps(rng), temp(rng), 50);
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 50; ++c) total += q.at(r, c);
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Dataset, EmptyAndDeterministic) {
  EXPECT_TRUE(build_dataset(dataset(0, 0, Mode::kPast)).empty());
  std::ostringstream a;
  std::ostringstream b;
  write_dataset(a, build_dataset(dataset(5, 200, Mode::kPastFuture)));
  write_dataset(b, build_dataset(dataset(5, 200, Mode::kPastFuture)));
  EXPECT_EQ(a.str(), b.str());
  std::ostringstream c;
  write_dataset(c, build_dataset(dataset(6, 200, Mode::kPastFuture)));
  EXPECT_NE(a.str(), c.str());
}

TEST(Dataset, RecordsReplayAndRoundTrip) {
  for (Mode mode : {Mode::kPast, Mode::kFuture, Mode::kPastFuture}) {
    const auto records = build_dataset(dataset(1, 300, mode, 7));
    std::stringstream buf;
    write_dataset(buf, records);
    const auto back = read_dataset(buf);
    ASSERT_EQ(back.size(), records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = back[i];
      EXPECT_EQ(r.tokens, records[i].tokens);
      auto world = std::make_shared<const World>(generate_world(r.world_seed, r.world));
      NavEnv env(world, r.episode, {}, 0);
      StepOutcome last;
      for (Action a : r.actions) last = env.step(a).outcome;
      ASSERT_TRUE(last.success);
      ASSERT_LT(r.window_begin, r.window_end);
      ASSERT_LE(r.window_end - r.window_begin, mode == Mode::kPastFuture ? 14u : 7u);
      ASSERT_LE(r.tokens.size(), static_cast<std::size_t>(kMaxDescriptionLength));
    }
  }
}

}  // namespace
