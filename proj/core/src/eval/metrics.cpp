#include "descrl/eval/metrics.hpp"

#include <algorithm>
#include <stdexcept>

#include "descrl/util/csv.hpp"

namespace descrl::eval {

Metrics compute_metrics(std::span<const EpisodeRecord> records) {
  if (records.empty()) throw std::invalid_argument("no episode records");
  Metrics m;
  m.episodes = records.size();
  double stopped_success = 0.0;
  for (const auto& r : records) {
    const double s = r.success ? 1.0 : 0.0;
    const double l = r.shortest_length;
    const double mi = r.min_actions;
    m.sr += s;
    m.spl += s * l / std::max(static_cast<double>(r.path_length), l);
    m.sna += s * mi / std::max(static_cast<double>(r.actions), mi);
    m.dtg += r.final_distance;
    if (r.sound_stopped) {
      ++m.stopped_episodes;
      stopped_success += s;
    }
  }
  const auto n = static_cast<double>(records.size());
  m.sr /= n;
  m.spl /= n;
  m.sna /= n;
  m.dtg /= n;
  if (m.stopped_episodes > 0) m.sws = stopped_success / static_cast<double>(m.stopped_episodes);
  return m;
}

nlohmann::json to_json(const EpisodeRecord& r) {
  nlohmann::json j{{"success", r.success},
                   {"path_length", r.path_length},
                   {"shortest_length", r.shortest_length},
                   {"actions", r.actions},
                   {"min_actions", r.min_actions},
                   {"final_distance", r.final_distance},
                   {"sound_stopped", r.sound_stopped},
                   {"world_seed", r.world_seed},
                   {"world",
                    {{"height", r.world.height},
                     {"width", r.world.width},
                     {"rooms", r.world.rooms},
                     {"objects", r.world.objects}}},
                   {"episode", r.spec}};
  if (!r.steps.empty()) j["steps"] = r.steps;
  if (!r.descriptions.empty()) j["descriptions"] = r.descriptions;
  return j;
}

EpisodeRecord episode_record_from_json(const nlohmann::json& j) {
  EpisodeRecord r;
  r.success = j.at("success").get<bool>();
  r.path_length = j.at("path_length").get<int>();
  r.shortest_length = j.at("shortest_length").get<int>();
  r.actions = j.at("actions").get<int>();
  r.min_actions = j.at("min_actions").get<int>();
  r.final_distance = j.at("final_distance").get<double>();
  r.sound_stopped = j.at("sound_stopped").get<bool>();
  r.world_seed = j.value("world_seed", std::uint64_t{0});
  if (j.contains("world")) {
    const auto& w = j.at("world");
    r.world.height = w.at("height").get<int>();
    r.world.width = w.at("width").get<int>();
    r.world.rooms = w.at("rooms").get<int>();
    r.world.objects = w.at("objects").get<int>();
  }
  if (j.contains("episode")) r.spec = j.at("episode").get<sim::EpisodeSpec>();
  if (j.contains("steps")) r.steps = j.at("steps").get<std::vector<sim::StepLog>>();
  if (j.contains("descriptions")) {
    r.descriptions = j.at("descriptions").get<std::vector<std::string>>();
  }
  return r;
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j{{"episodes", m.episodes}, {"sr", m.sr},   {"spl", m.spl}, {"sna", m.sna},
                   {"dtg", m.dtg},           {"ne", m.ne()}, {"stopped_episodes", m.stopped_episodes}};
  j["sws"] = m.sws ? nlohmann::json(*m.sws) : nlohmann::json(nullptr);
  return j;
}

void write_metrics_csv(const std::filesystem::path& path, const Metrics& m) {
  util::CsvWriter csv(path, {"episodes", "sr", "spl", "sna", "dtg", "ne", "sws"});
  csv.row(m.episodes, m.sr, m.spl, m.sna, m.dtg, m.ne(),
          m.sws ? util::CsvWriter::cell(*m.sws) : std::string());
}

}  // namespace descrl::eval
