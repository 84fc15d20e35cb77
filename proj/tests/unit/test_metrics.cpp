#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "descrl/eval/metrics.hpp"
#include "descrl/eval/runner.hpp"
#include "metric_oracle.hpp"

namespace {

using namespace descrl;
using namespace descrl::eval;

EpisodeRecord record(bool s, int p, int l, int n, int m, double d, bool stopped = false) {
  EpisodeRecord r;
  r.success = s;
  r.path_length = p;
  r.shortest_length = l;
  r.actions = n;
  r.min_actions = m;
  r.final_distance = d;
  r.sound_stopped = stopped;
  return r;
}

TEST(Metrics, MatchesBruteForceOracleExactly) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto records = descrl::testing::random_records(seed, 500);
    const Metrics m = compute_metrics(records);
    const auto o = descrl::testing::oracle_metrics(records);
    EXPECT_EQ(m.episodes, 500u);
    EXPECT_EQ(m.sr, o.sr);
    EXPECT_EQ(m.spl, o.spl);
    EXPECT_EQ(m.sna, o.sna);
    EXPECT_EQ(m.dtg, o.dtg);
    EXPECT_EQ(m.ne(), o.dtg);
    ASSERT_EQ(m.sws.has_value(), o.sws.has_value());
    if (m.sws) {
      EXPECT_EQ(*m.sws, *o.sws);
    }
    EXPECT_LE(m.spl, m.sr);
    EXPECT_LE(m.sna, m.sr);
  }
}

TEST(Metrics, PerRecordTermsNeverExceedSuccess) {
  const auto records = descrl::testing::random_records(11, 500);
  for (const auto& r : records) {
    const Metrics m = compute_metrics(std::span<const EpisodeRecord>(&r, 1));
    EXPECT_LE(m.spl, m.sr);
    EXPECT_LE(m.sna, m.sr);
    EXPECT_GE(m.spl, 0.0);
    EXPECT_LE(m.sr, 1.0);
  }
}

TEST(Metrics, WorkedExamples) {
  const std::vector<EpisodeRecord> optimal{record(true, 6, 6, 9, 9, 0.0)};
  const Metrics a = compute_metrics(optimal);
  EXPECT_EQ(a.sr, 1.0);
  EXPECT_EQ(a.spl, 1.0);
  EXPECT_EQ(a.sna, 1.0);
  EXPECT_EQ(a.dtg, 0.0);

  const std::vector<EpisodeRecord> detour{record(true, 8, 4, 10, 10, 1.0)};
  EXPECT_EQ(compute_metrics(detour).spl, 0.5);

  const std::vector<EpisodeRecord> failures{record(false, 3, 5, 4, 7, 4.0),
                                            record(false, 0, 2, 1, 3, 2.0)};
  const Metrics f = compute_metrics(failures);
  EXPECT_EQ(f.sr, 0.0);
  EXPECT_EQ(f.spl, 0.0);
  EXPECT_EQ(f.sna, 0.0);
  EXPECT_EQ(f.dtg, 3.0);
  EXPECT_FALSE(f.sws.has_value());
}

TEST(Metrics, SwsUsesStoppedSubset) {
  const std::vector<EpisodeRecord> r{record(true, 3, 3, 4, 4, 0.0, true),
                                     record(false, 3, 3, 4, 4, 2.0, true),
                                     record(true, 3, 3, 4, 4, 0.0, false),
                                     record(true, 3, 3, 4, 4, 0.0, false)};
  const Metrics m = compute_metrics(r);
  EXPECT_EQ(m.stopped_episodes, 2u);
  ASSERT_TRUE(m.sws.has_value());
  EXPECT_EQ(*m.sws, 0.5);
  EXPECT_EQ(m.sr, 0.75);
}

TEST(Metrics, EmptyInputIsRejected) {
  EXPECT_THROW(compute_metrics(std::vector<EpisodeRecord>{}), std::invalid_argument);
}

TEST(Metrics, JsonAndCsvRoundTrip) {
  const auto records = descrl::testing::random_records(3, 20);
  for (const auto& r : records) {
    EXPECT_EQ(to_json(episode_record_from_json(to_json(r))), to_json(r));
  }
  const auto dir = std::filesystem::temp_directory_path() / "descrl_metrics_test";
  std::filesystem::create_directories(dir);
  const Metrics m = compute_metrics(std::vector<EpisodeRecord>{record(false, 1, 2, 3, 4, 5.0)});
  write_metrics_csv(dir / "m.csv", m);
  std::ifstream in(dir / "m.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_NE(header.find("sws"), std::string::npos);
  EXPECT_EQ(row.back(), ',');
  std::filesystem::remove_all(dir);
}

EvalConfig small_eval(std::uint64_t seed) {
  EvalConfig c;
  c.worlds = 6;
  c.episodes = 40;
  c.sampling.max_steps = 80;
  c.seed = seed;
  return c;
}

TEST(Runner, ShortestPathPolicyIsOptimal) {
  const auto records = run_episodes(shortest_path_policy(), small_eval(1));
  ASSERT_EQ(records.size(), 40u);
  const Metrics m = compute_metrics(records);
  EXPECT_EQ(m.sr, 1.0);
  EXPECT_EQ(m.spl, 1.0);
  EXPECT_EQ(m.sna, 1.0);
  for (const auto& r : records) {
    EXPECT_EQ(r.path_length, r.shortest_length);
    EXPECT_EQ(r.actions, r.min_actions);
    EXPECT_LE(r.final_distance, 1.0);
  }
}

TEST(Runner, RandomPolicyRarelySucceeds) {
  auto cfg = small_eval(2);
  cfg.episodes = 100;
  cfg.sampling.min_start_distance = 6;
  const Metrics m = compute_metrics(run_episodes(random_policy(3), cfg));
  EXPECT_LT(m.sr, 0.15);
  EXPECT_GT(m.dtg, 1.0);
}

TEST(Runner, SeededRerunGivesIdenticalRecords) {
  auto cfg = small_eval(4);
  cfg.trace = true;
  const auto a = run_episodes(random_policy(5), cfg);
  const auto b = run_episodes(random_policy(5), cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(to_json(a[i]), to_json(b[i]));
}

TEST(Runner, SplitsUseDisjointWorldSeeds) {
  std::set<std::uint64_t> train;
  for (std::size_t i = 0; i < 5000; ++i) train.insert(split_world_seed(Split::kTrain, i));
  for (std::size_t i = 0; i < 5000; ++i) {
    EXPECT_FALSE(train.contains(split_world_seed(Split::kVal, i)));
    EXPECT_FALSE(train.contains(split_world_seed(Split::kTest, i)));
    EXPECT_NE(split_world_seed(Split::kVal, i), split_world_seed(Split::kTest, i));
  }
}

}  // namespace
