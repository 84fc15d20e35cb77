#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "descrl/sim/io.hpp"

namespace descrl::eval {

struct EpisodeRecord {
  bool success = false;
  int path_length = 0;      // p: forward moves that changed the cell
  int shortest_length = 1;  // l: forward moves on the shortest path
  int actions = 0;          // n: all actions, Stop included
  int min_actions = 1;      // m: length of the shortest action sequence
  double final_distance = 0.0;
  bool sound_stopped = false;  // the sound stopped before the episode ended
  std::uint64_t world_seed = 0;
  sim::WorldConfig world;
  sim::EpisodeSpec spec;
  std::vector<sim::StepLog> steps;                // optional trace
  std::vector<std::string> descriptions;          // optional, one per step
};

struct Metrics {
  std::size_t episodes = 0;
  double sr = 0.0;
  double spl = 0.0;
  double sna = 0.0;
  double dtg = 0.0;
  std::optional<double> sws;  // absent when no episode had its sound stop
  std::size_t stopped_episodes = 0;
  double ne() const { return dtg; }
};

/// Throws std::invalid_argument on an empty record set.
Metrics compute_metrics(std::span<const EpisodeRecord> records);

nlohmann::json to_json(const EpisodeRecord& r);
EpisodeRecord episode_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Metrics& m);

/// One header line and one row; absent SWS is written as an empty cell.
void write_metrics_csv(const std::filesystem::path& path, const Metrics& m);

}  // namespace descrl::eval
