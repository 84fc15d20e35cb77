#pragma once

#include <nlohmann/json.hpp>
#include <ostream>

#include "descrl/sim/nav_env.hpp"

namespace descrl::sim {

/// One line of a trajectory log.
struct StepLog {
  int t = 0;
  Pose pose;  // after the action
  Action action = Action::kStop;
  double reward = 0.0;
  int distance = 0;
  bool silent = false;
  bool success = false;
  bool done = false;
};

void to_json(nlohmann::json& j, const Pose& p);
void from_json(const nlohmann::json& j, Pose& p);
void to_json(nlohmann::json& j, const World& w);
void from_json(const nlohmann::json& j, World& w);
void to_json(nlohmann::json& j, const EpisodeSpec& s);
void from_json(const nlohmann::json& j, EpisodeSpec& s);
void to_json(nlohmann::json& j, const StepLog& s);
void from_json(const nlohmann::json& j, StepLog& s);

/// Writes one compact JSON object per line.
void write_jsonl(std::ostream& out, const std::vector<StepLog>& steps);

}  // namespace descrl::sim
