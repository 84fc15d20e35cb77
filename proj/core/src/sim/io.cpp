#include "descrl/sim/io.hpp"

#include <string>

namespace descrl::sim {

using nlohmann::json;

void to_json(json& j, const Pose& p) {
  j = json{{"row", p.cell.row}, {"col", p.cell.col}, {"heading", heading_name(p.heading)}};
}

void from_json(const json& j, Pose& p) {
  p.cell.row = j.at("row").get<int>();
  p.cell.col = j.at("col").get<int>();
  p.heading = heading_from_name(j.at("heading").get<std::string>());
}

void to_json(json& j, const World& w) {
  json walls = json::array();
  json rooms = json::array();
  for (int r = 0; r < w.height(); ++r) {
    std::string row;
    json labels = json::array();
    for (int c = 0; c < w.width(); ++c) {
      row.push_back(w.is_wall({r, c}) ? '#' : '.');
      labels.push_back(w.is_wall({r, c}) ? -1 : w.room_at({r, c}));
    }
    walls.push_back(row);
    rooms.push_back(labels);
  }
  json objects = json::array();
  for (const auto& o : w.objects()) {
    objects.push_back({{"category", kObjectNames[static_cast<std::size_t>(o.category)]},
                       {"row", o.cell.row},
                       {"col", o.cell.col}});
  }
  j = json{{"height", w.height()}, {"width", w.width()}, {"seed", w.seed()},
           {"walls", walls},       {"rooms", rooms},     {"objects", objects}};
}

void from_json(const json& j, World& w) {
  const int h = j.at("height").get<int>();
  const int wd = j.at("width").get<int>();
  const auto n = static_cast<std::size_t>(h) * static_cast<std::size_t>(wd);
  std::vector<std::uint8_t> walls(n, 0);
  std::vector<std::uint8_t> rooms(n, 0);
  const auto& wall_rows = j.at("walls");
  const auto& room_rows = j.at("rooms");
  if (wall_rows.size() != static_cast<std::size_t>(h) ||
      room_rows.size() != static_cast<std::size_t>(h)) {
    throw WorldError("world json row count does not match height");
  }
  for (int r = 0; r < h; ++r) {
    const auto row = wall_rows[static_cast<std::size_t>(r)].get<std::string>();
    const auto& labels = room_rows[static_cast<std::size_t>(r)];
    if (row.size() != static_cast<std::size_t>(wd) || labels.size() != row.size()) {
      throw WorldError("world json row width does not match width");
    }
    for (int c = 0; c < wd; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * static_cast<std::size_t>(wd) +
                            static_cast<std::size_t>(c);
      walls[i] = row[static_cast<std::size_t>(c)] == '#' ? 1 : 0;
      const int label = labels[static_cast<std::size_t>(c)].get<int>();
      rooms[i] = walls[i] ? 0 : static_cast<std::uint8_t>(label);
    }
  }
  std::vector<PlacedObject> objects;
  for (const auto& o : j.at("objects")) {
    const auto name = o.at("category").get<std::string>();
    int category = -1;
    for (int k = 0; k < kNumObjectCategories; ++k) {
      if (kObjectNames[static_cast<std::size_t>(k)] == name) category = k;
    }
    if (category < 0) throw WorldError("unknown object category '" + name + "'");
    objects.push_back({category, {o.at("row").get<int>(), o.at("col").get<int>()}});
  }
  w = World(h, wd, std::move(walls), std::move(rooms), std::move(objects),
            j.at("seed").get<std::uint64_t>());
}

void to_json(json& j, const EpisodeSpec& s) {
  j = json{{"start", s.start},
           {"goal_object", s.goal_object},
           {"sound_stop_time", s.sound_stop_time == kNeverStops ? json(nullptr)
                                                                : json(s.sound_stop_time)},
           {"max_steps", s.max_steps},
           {"success_radius", s.success_radius},
           {"mode", reward_mode_name(s.mode)},
           {"unheard", s.unheard}};
}

void from_json(const json& j, EpisodeSpec& s) {
  s.start = j.at("start").get<Pose>();
  s.goal_object = j.at("goal_object").get<int>();
  const auto& stop = j.at("sound_stop_time");
  s.sound_stop_time = stop.is_null() ? kNeverStops : stop.get<int>();
  s.max_steps = j.at("max_steps").get<int>();
  s.success_radius = j.at("success_radius").get<int>();
  s.mode = reward_mode_from_name(j.at("mode").get<std::string>());
  s.unheard = j.at("unheard").get<bool>();
}

void to_json(json& j, const StepLog& s) {
  j = json{{"t", s.t},
           {"pose", s.pose},
           {"action", action_name(s.action)},
           {"reward", s.reward},
           {"d", s.distance},
           {"silent", s.silent},
           {"success", s.success},
           {"done", s.done}};
}

void from_json(const json& j, StepLog& s) {
  s.t = j.at("t").get<int>();
  s.pose = j.at("pose").get<Pose>();
  s.action = action_from_name(j.at("action").get<std::string>());
  s.reward = j.at("reward").get<double>();
  s.distance = j.at("d").get<int>();
  s.silent = j.at("silent").get<bool>();
  s.success = j.at("success").get<bool>();
  s.done = j.at("done").get<bool>();
}

void write_jsonl(std::ostream& out, const std::vector<StepLog>& steps) {
  for (const auto& s : steps) out << json(s).dump() << '\n';
}

}  // namespace descrl::sim
