#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "descrl/train/trainer.hpp"

namespace descrl::cli {

/// Bad flags or inconsistent settings; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (without the program name) and returns its exit
/// code. Diagnostics go to `err`, tables and listings to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Root for default output directories: $DESCRL_RUNS, else ./runs.
std::filesystem::path runs_root();

/// Hex FNV-1a of the compact JSON dump.
std::string config_hash(const nlohmann::json& j);

/// Flag-level changes to a training config. Unset fields keep the config.
struct Overrides {
  std::optional<bool> pretrain;
  std::optional<bool> task_embedding;
  std::optional<int> shared_layers;
  std::optional<std::string> mode;
  std::optional<double> lambda;
  std::optional<std::string> aux;
  std::optional<bool> distill;
  std::optional<std::uint64_t> seed;
  std::optional<int> updates;
  std::optional<std::size_t> eval_episodes;
};

/// Throws UsageError for conflicting or out-of-range overrides.
void apply(train::TrainConfig& cfg, const Overrides& o);
Overrides overrides_from_json(const nlohmann::json& j);

train::TrainConfig load_train_config(const std::filesystem::path& path);

struct TrainRun {
  std::filesystem::path dir;
  train::TrainResult result;
};

/// Writes config.json, manifest.json, train_log.csv, checkpoints and the
/// final metrics under `dir`.
TrainRun run_train(const train::TrainConfig& cfg, const std::filesystem::path& dir,
                   const std::vector<std::string>& args, bool quiet = true);

struct SweepCell {
  std::string name;
  Overrides overrides;
};

struct SweepSpec {
  train::TrainConfig base;
  std::vector<SweepCell> cells;
  std::vector<std::uint64_t> seeds;
};

/// {"base": <config object or path>, "cells": [{"name", "overrides"}],
/// "seeds": [...]}; relative paths resolve against `base_dir`.
SweepSpec sweep_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

struct SweepRun {
  std::string cell;
  std::uint64_t seed = 0;
  eval::Metrics metrics;
  bool reused = false;
};

/// Trains and evaluates every cell x seed under `dir/<cell>/seed_<s>`,
/// skipping runs whose manifest is complete for the same config, then
/// writes runs.csv and table.csv.
std::vector<SweepRun> run_sweep(const SweepSpec& spec, const std::filesystem::path& dir,
                                std::ostream& log);

}  // namespace descrl::cli
