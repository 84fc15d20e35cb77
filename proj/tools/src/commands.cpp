#include "descrl/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

#include "descrl/adgen/adgen.hpp"
#include "descrl/describe/vocabulary.hpp"
#include "descrl/tensor/checkpoint.hpp"
#include "descrl/util/csv.hpp"
#include "descrl/util/seed.hpp"

#ifndef DESCRL_REVISION
#define DESCRL_REVISION "unknown"
#endif

namespace descrl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

/// Command-line arguments minus the output location, which a rerun supplies.
std::vector<std::string> recorded_args(const std::vector<std::string>& args) {
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out") {
      ++i;
      continue;
    }
    if (args[i].rfind("--out=", 0) == 0) continue;
    kept.push_back(args[i]);
  }
  return kept;
}

json manifest(const std::string& command, const std::vector<std::string>& args,
              const json& config, std::uint64_t seed, const fs::path& out) {
  return json{{"command", command},
              {"args", recorded_args(args)},
              {"config", config},
              {"config_hash", config_hash(config)},
              {"seed", seed},
              {"revision", DESCRL_REVISION},
              {"out", out.string()},
              {"outputs", json::array()},
              {"status", "running"}};
}

void complete(json& m, const fs::path& path, std::vector<std::string> outputs) {
  m["outputs"] = std::move(outputs);
  m["status"] = "complete";
  write_json(path, m);
}

fs::path default_out(const std::string& command, const std::vector<std::string>& args) {
  return runs_root() / (command + "-" + config_hash(json(recorded_args(args))));
}

bool parse_switch(const std::string& v) { return v == "on"; }

agent::AuxKind aux_for_mode(describe::Mode m) {
  switch (m) {
    case describe::Mode::kPast: return agent::AuxKind::kDescPast;
    case describe::Mode::kFuture: return agent::AuxKind::kDescFuture;
    case describe::Mode::kPastFuture: return agent::AuxKind::kDescPastFuture;
  }
  return agent::AuxKind::kDescPast;
}

eval::Metrics metrics_from_json(const json& j) {
  eval::Metrics m;
  m.episodes = j.at("episodes").get<std::size_t>();
  m.sr = j.at("sr").get<double>();
  m.spl = j.at("spl").get<double>();
  m.sna = j.at("sna").get<double>();
  m.dtg = j.at("dtg").get<double>();
  if (j.contains("sws") && !j.at("sws").is_null()) m.sws = j.at("sws").get<double>();
  m.stopped_episodes = j.value("stopped_episodes", std::size_t{0});
  return m;
}

void write_metrics(const fs::path& dir, const eval::Metrics& m) {
  eval::write_metrics_csv(dir / "metrics.csv", m);
  write_json(dir / "metrics.json", eval::to_json(m));
}

// ASCII rendering ----------------------------------------------------------

char heading_glyph(sim::Heading h) {
  switch (h) {
    case sim::Heading::kNorth: return '^';
    case sim::Heading::kEast: return '>';
    case sim::Heading::kSouth: return 'v';
    case sim::Heading::kWest: return '<';
  }
  return '?';
}

void render_map(std::ostream& out, const sim::World& world, const sim::EpisodeSpec& spec,
                sim::Pose pose) {
  const auto& objects = world.objects();
  for (int r = 0; r < world.height(); ++r) {
    for (int c = 0; c < world.width(); ++c) {
      const sim::Cell cell{r, c};
      char ch = world.is_wall(cell) ? '#' : '.';
      const int obj = world.object_at(cell);
      if (obj >= 0) ch = obj == spec.goal_object ? 'G' : 'o';
      if (cell == pose.cell) ch = heading_glyph(pose.heading);
      out << ch;
    }
    out << '\n';
  }
  if (spec.goal_object >= 0 && spec.goal_object < static_cast<int>(objects.size())) {
    const auto& g = objects[static_cast<std::size_t>(spec.goal_object)];
    out << "goal: " << sim::kObjectNames[static_cast<std::size_t>(g.category)] << " at ("
        << g.cell.row << "," << g.cell.col << ")\n";
  }
}

void describe_record(std::ostream& out, std::size_t index, const eval::EpisodeRecord& r,
                     const sim::World& world) {
  const auto& vocab = describe::Vocabulary::instance();
  out << "episode " << index << " world_seed " << r.world_seed << " success "
      << (r.success ? 1 : 0) << " actions " << r.actions << " final_distance "
      << r.final_distance << '\n';
  render_map(out, world, r.spec, r.spec.start);
  for (std::size_t t = 0; t < r.steps.size(); ++t) {
    const auto& s = r.steps[t];
    out << "t " << s.t << " action " << sim::action_name(s.action) << " pose (" << s.pose.cell.row
        << "," << s.pose.cell.col << "," << sim::heading_name(s.pose.heading) << ") distance "
        << s.distance << (s.silent ? " silent" : "") << '\n';
    render_map(out, world, r.spec, s.pose);
    if (t < r.descriptions.size()) {
      // Re-encode so only vocabulary words reach the output.
      out << "description: " << vocab.decode(vocab.encode(r.descriptions[t])) << '\n';
    }
  }
  out << '\n';
}

// Commands -------------------------------------------------------------------

struct Context {
  std::vector<std::string> args;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

struct GenDatasetOptions {
  std::uint64_t seed = 0;
  std::size_t n = 1000;
  std::string mode = "past";
  int k = 19;
  int worlds = 64;
  std::string out;
};

int gen_dataset(const GenDatasetOptions& o, const Context& ctx) {
  describe::DatasetConfig cfg;
  cfg.seed = o.seed;
  cfg.samples = o.n;
  cfg.k = o.k;
  cfg.worlds = o.worlds;
  try {
    cfg.mode = describe::mode_from_name(o.mode);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (o.k < 1 || o.worlds < 1) throw UsageError("--k and --worlds must be positive");
  const fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const json config{{"seed", cfg.seed}, {"n", cfg.samples}, {"mode", describe::mode_name(cfg.mode)},
                    {"k", cfg.k},       {"worlds", cfg.worlds}};
  const fs::path mpath = out.string() + ".manifest.json";
  json m = manifest("gen-dataset", ctx.args, config, cfg.seed, out);
  write_json(mpath, m);
  const auto records = describe::build_dataset(cfg);
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out.string());
  describe::write_dataset(f, records);
  f.close();
  complete(m, mpath, {out.filename().string()});
  *ctx.out << "wrote " << records.size() << " records to " << out.string() << '\n';
  return kExitOk;
}

struct PretrainAdgenOptions {
  std::string data;
  std::uint64_t seed = 0;
  std::size_t n = 2000;
  std::string mode = "past";
  int k = 19;
  int worlds = 64;
  int epochs = 10;
  std::size_t batch = 32;
  double lr = 1e-3;
  double val_fraction = 0.1;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t layers = 2;
  std::size_t show = 20;
  std::string out;
};

int pretrain_adgen(const PretrainAdgenOptions& o, const Context& ctx) {
  if (o.epochs < 1 || o.batch < 1 || o.lr <= 0.0 || o.val_fraction <= 0.0 ||
      o.val_fraction >= 1.0) {
    throw UsageError("invalid training settings");
  }
  adgen::AdgenConfig mcfg;
  mcfg.d_model = o.d_model;
  mcfg.heads = o.heads;
  mcfg.ffn = o.ffn;
  mcfg.enc_layers = o.layers;
  mcfg.dec_layers = o.layers;
  mcfg.seed = o.seed;
  if (o.heads == 0 || o.d_model % o.heads != 0) throw UsageError("--d-model must divide by --heads");

  std::vector<describe::DatasetRecord> records;
  json data_cfg;
  if (!o.data.empty()) {
    std::ifstream in(o.data);
    if (!in) throw UsageError("cannot read " + o.data);
    records = describe::read_dataset(in);
    data_cfg = {{"path", o.data}};
  } else {
    describe::DatasetConfig d;
    d.seed = o.seed;
    d.samples = o.n;
    d.k = o.k;
    d.worlds = o.worlds;
    try {
      d.mode = describe::mode_from_name(o.mode);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    records = describe::build_dataset(d);
    data_cfg = {{"seed", d.seed}, {"n", d.samples}, {"mode", describe::mode_name(d.mode)},
                {"k", d.k},       {"worlds", d.worlds}};
  }

  const fs::path dir = o.out.empty() ? default_out("pretrain-adgen", ctx.args) : fs::path(o.out);
  fs::create_directories(dir);
  const json config{{"model",
                     {{"d_model", mcfg.d_model},
                      {"heads", mcfg.heads},
                      {"ffn", mcfg.ffn},
                      {"layers", o.layers},
                      {"seed", mcfg.seed}}},
                    {"data", data_cfg},
                    {"epochs", o.epochs},
                    {"batch", o.batch},
                    {"lr", o.lr},
                    {"val_fraction", o.val_fraction}};
  json m = manifest("pretrain-adgen", ctx.args, config, o.seed, dir);
  write_json(dir / "manifest.json", m);

  const auto samples = adgen::make_samples(records);
  adgen::AdgenModel model(mcfg);
  adgen::TrainAdgenConfig tcfg;
  tcfg.epochs = o.epochs;
  tcfg.batch_size = o.batch;
  tcfg.lr = o.lr;
  tcfg.val_fraction = o.val_fraction;
  tcfg.seed = o.seed;
  tcfg.out_dir = dir;
  const auto result = adgen::train_adgen(model, samples, tcfg);

  const auto& vocab = describe::Vocabulary::instance();
  std::vector<const adgen::AdgenSample*> shown;
  for (std::size_t i = 0; i < std::min(o.show, result.train_indices.size()); ++i) {
    shown.push_back(&samples[result.train_indices[i]]);
  }
  std::mt19937_64 rng(util::derive_seed(o.seed, "generate"));
  const auto generated = adgen::generate(model, shown, eval::DecodeConfig{}, rng);
  std::ofstream gen(dir / "generations.jsonl");
  std::size_t matched = 0, total = 0;
  for (std::size_t i = 0; i < shown.size(); ++i) {
    const auto& target = shown[i]->tokens;
    for (std::size_t p = 0; p < target.size(); ++p) {
      matched += p < generated[i].size() && generated[i][p] == target[p];
    }
    total += target.size();
    gen << json{{"target", vocab.decode(target)}, {"generated", vocab.decode(generated[i])}}.dump()
        << '\n';
  }
  gen.close();
  json summary{{"initial_val_ce", result.initial_val_ce},
               {"final_val_ce", result.curve.empty() ? result.initial_val_ce
                                                     : result.curve.back().val_ce},
               {"shown_token_match", total ? static_cast<double>(matched) / total : 0.0},
               {"train_samples", result.train_indices.size()},
               {"val_samples", result.val_indices.size()}};
  write_json(dir / "summary.json", summary);
  tensor::save_checkpoint(dir / "adgen.ckpt", model.params());
  complete(m, dir / "manifest.json",
           {"loss.csv", "generations.jsonl", "summary.json", "adgen.ckpt"});
  *ctx.out << summary.dump(2) << '\n';
  return kExitOk;
}

struct TrainOptions {
  std::string config;
  std::string pt, te, mode, aux;
  std::optional<int> nsd;
  std::optional<double> lambda;
  bool distill = false;
  std::optional<std::uint64_t> seed;
  std::optional<int> updates;
  std::optional<std::size_t> eval_episodes;
  bool verbose = false;
  std::string out;
};

int train_command(const TrainOptions& o, const Context& ctx) {
  auto cfg = load_train_config(o.config);
  Overrides ov;
  if (!o.pt.empty()) ov.pretrain = parse_switch(o.pt);
  if (!o.te.empty()) ov.task_embedding = parse_switch(o.te);
  if (o.nsd) ov.shared_layers = *o.nsd;
  if (!o.mode.empty()) ov.mode = o.mode;
  if (!o.aux.empty()) ov.aux = o.aux;
  if (o.distill) ov.distill = true;
  ov.lambda = o.lambda;
  ov.seed = o.seed;
  ov.updates = o.updates;
  ov.eval_episodes = o.eval_episodes;
  apply(cfg, ov);
  const fs::path dir = o.out.empty() ? default_out("train", ctx.args) : fs::path(o.out);
  const auto run = run_train(cfg, dir, ctx.args, !o.verbose);
  *ctx.out << "run " << dir.string() << '\n' << eval::to_json(run.result.final_eval).dump(2) << '\n';
  return kExitOk;
}

struct EvalOptions {
  std::string run, checkpoint, config;
  std::size_t episodes = 200;
  bool unheard = false;
  std::string decode;
  double temperature = 1.0;
  int k = 10;
  double p = 0.95;
  std::optional<std::uint64_t> seed;
  std::string split = "test";
  std::string out;
};

int eval_command(const EvalOptions& o, const Context& ctx) {
  fs::path config_path, ckpt;
  if (!o.run.empty()) {
    if (!o.checkpoint.empty() || !o.config.empty()) {
      throw UsageError("--run excludes --checkpoint and --config");
    }
    config_path = fs::path(o.run) / "config.json";
    ckpt = fs::path(o.run) / "final.ckpt";
  } else {
    if (o.checkpoint.empty() || o.config.empty()) {
      throw UsageError("eval needs --run or both --checkpoint and --config");
    }
    config_path = o.config;
    ckpt = o.checkpoint;
  }
  const auto cfg = load_train_config(config_path);
  const std::string hash = config_hash(train::to_json(cfg));
  const fs::path meta_path = ckpt.string() + ".meta.json";
  if (!fs::exists(meta_path)) throw UsageError("missing " + meta_path.string());
  const json meta = read_json(meta_path);
  if (meta.at("config_hash").get<std::string>() != hash) {
    throw UsageError("checkpoint was trained with config " +
                     meta.at("config_hash").get<std::string>() + ", not " + hash);
  }
  if (o.episodes == 0) throw UsageError("--episodes must be positive");

  std::optional<eval::DecodeConfig> decode;
  if (!o.decode.empty()) {
    if (!agent::is_description(cfg.agent.aux)) {
      throw UsageError("--decode needs an agent with a description decoder");
    }
    eval::DecodeConfig d;
    d.strategy = eval::strategy_from_name(o.decode);
    d.temperature = o.temperature;
    d.k = o.k;
    d.p = o.p;
    try {
      eval::validate(d);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    decode = d;
  }

  auto ec = train::eval_config(cfg, o.episodes, o.unheard);
  ec.split = o.split == "val" ? eval::Split::kVal : eval::Split::kTest;
  if (o.seed) ec.seed = util::derive_seed(*o.seed, "eval");
  ec.trace = true;

  const fs::path dir = o.out.empty() ? default_out("eval", ctx.args) : fs::path(o.out);
  fs::create_directories(dir);
  json config{{"train_config", train::to_json(cfg)},
              {"checkpoint_digest", meta.at("params_digest")},
              {"episodes", o.episodes},
              {"unheard", o.unheard},
              {"split", o.split},
              {"eval_seed", ec.seed},
              {"decode", decode ? json{{"strategy", eval::strategy_name(decode->strategy)},
                                       {"temperature", decode->temperature},
                                       {"k", decode->k},
                                       {"p", decode->p}}
                                : json(nullptr)}};
  json m = manifest("eval", ctx.args, config, ec.seed, dir);
  write_json(dir / "manifest.json", m);

  agent::Agent agent(cfg.agent, tensor::load_checkpoint(ckpt));
  if (tensor::parameter_digest(agent.params()) != meta.at("params_digest").get<std::string>()) {
    throw std::runtime_error("checkpoint contents do not match " + meta_path.string());
  }
  const auto policy =
      eval::agent_policy(agent, decode, util::derive_seed(ec.seed, "decode"));
  const auto records = eval::run_episodes(policy, ec);
  std::ofstream rec(dir / "records.jsonl");
  for (const auto& r : records) rec << eval::to_json(r).dump() << '\n';
  rec.close();
  const auto metrics = eval::compute_metrics(records);
  write_metrics(dir, metrics);
  complete(m, dir / "manifest.json", {"records.jsonl", "metrics.csv", "metrics.json"});
  *ctx.out << eval::to_json(metrics).dump(2) << '\n';
  return kExitOk;
}

struct SweepOptions {
  std::string grid;
  std::string out;
};

int sweep_command(const SweepOptions& o, const Context& ctx) {
  json grid;
  try {
    grid = read_json(o.grid);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const auto spec = sweep_from_json(grid, fs::path(o.grid).parent_path());
  const fs::path dir = o.out.empty() ? default_out("sweep", ctx.args) : fs::path(o.out);
  fs::create_directories(dir);
  // Resolved grid: the base is inlined so a rerun does not depend on other files.
  json resolved = grid;
  resolved["base"] = train::to_json(spec.base);
  json m = manifest("sweep", ctx.args, resolved, spec.base.seed, dir);
  write_json(dir / "manifest.json", m);
  run_sweep(spec, dir, *ctx.err);
  std::ifstream table(dir / "table.csv");
  std::string line;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(table, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  // Printed table: cell, seeds, then mean±std per metric.
  if (!rows.empty()) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& row = rows[r];
      *ctx.out << std::left << std::setw(24) << row[0] << std::setw(7) << row[1];
      for (std::size_t c = 2; c + 1 < row.size(); c += 2) {
        std::string cell;
        if (r == 0) {
          cell = row[c].substr(0, row[c].find("_mean"));
        } else if (!row[c].empty()) {
          char buf[64];
          std::snprintf(buf, sizeof(buf), "%.3f±%.3f", std::stod(row[c]), std::stod(row[c + 1]));
          cell = buf;
        } else {
          cell = "-";
        }
        *ctx.out << std::setw(16) << cell;
      }
      *ctx.out << '\n';
    }
  }
  complete(m, dir / "manifest.json", {"runs.csv", "table.csv"});
  return kExitOk;
}

struct DescribeOptions {
  std::string records;
  bool failures_only = false;
  std::optional<std::size_t> episode;
};

int describe_command(const DescribeOptions& o, const Context& ctx) {
  fs::path path(o.records);
  if (fs::is_directory(path)) path /= "records.jsonl";
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  std::map<std::pair<std::uint64_t, std::string>, sim::World> worlds;
  std::string line;
  std::size_t index = 0;
  for (; std::getline(in, line); ++index) {
    if (line.empty()) continue;
    if (o.episode && *o.episode != index) continue;
    const auto r = eval::episode_record_from_json(json::parse(line));
    if (o.failures_only && r.success) continue;
    if (r.steps.empty()) {
      throw std::runtime_error("record " + std::to_string(index) + " has no step trace");
    }
    const std::string wkey = json{{"h", r.world.height},
                                  {"w", r.world.width},
                                  {"r", r.world.rooms},
                                  {"o", r.world.objects}}
                                 .dump();
    auto it = worlds.find({r.world_seed, wkey});
    if (it == worlds.end()) {
      it = worlds.emplace(std::pair{r.world_seed, wkey}, sim::generate_world(r.world_seed, r.world))
               .first;
    }
    describe_record(*ctx.out, index, r, it->second);
  }
  return kExitOk;
}

struct RerunOptions {
  std::string manifest;
  std::string out;
};

int rerun_command(const RerunOptions& o, const Context& ctx) {
  json m;
  try {
    m = read_json(o.manifest);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  const std::string command = m.at("command").get<std::string>();
  auto args = m.at("args").get<std::vector<std::string>>();
  const fs::path out(o.out);
  // Commands that read a config file rerun from the recorded snapshot.
  auto replace_flag = [&args](const std::string& flag, const std::string& value,
                              const std::vector<std::string>& drop) {
    std::vector<std::string> kept{args.front()};
    for (std::size_t i = 1; i < args.size(); ++i) {
      if (std::find(drop.begin(), drop.end(), args[i]) != drop.end()) {
        if (args[i].rfind("--", 0) == 0 && args[i] != "--distill" && i + 1 < args.size()) ++i;
        continue;
      }
      kept.push_back(args[i]);
    }
    kept.push_back(flag);
    kept.push_back(value);
    args = kept;
  };
  if (command == "train") {
    fs::create_directories(out);
    write_json(out / "input_config.json", m.at("config"));
    replace_flag("--config", (out / "input_config.json").string(),
                 {"--config", "--pt", "--te", "--nsd", "--mode", "--lambda", "--aux", "--distill",
                  "--seed", "--updates", "--eval-episodes"});
  } else if (command == "sweep") {
    fs::create_directories(out);
    write_json(out / "input_grid.json", m.at("config"));
    replace_flag("--grid", (out / "input_grid.json").string(), {"--grid"});
  }
  args.push_back("--out");
  args.push_back(out.string());
  return run(args, *ctx.out, *ctx.err);
}

}  // namespace

fs::path runs_root() {
  if (const char* env = std::getenv("DESCRL_RUNS"); env && *env) return fs::path(env);
  return fs::path("runs");
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply(train::TrainConfig& cfg, const Overrides& o) {
  if (o.aux) {
    try {
      cfg.agent.aux = agent::aux_from_name(*o.aux);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (o.mode) {
    if (o.aux && !agent::is_description(cfg.agent.aux)) {
      throw UsageError("--mode conflicts with --aux " + *o.aux);
    }
    try {
      cfg.agent.aux = aux_for_mode(describe::mode_from_name(*o.mode));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const bool desc = agent::is_description(cfg.agent.aux);
  if (o.pretrain) {
    if (*o.pretrain && !desc) throw UsageError("--pt on needs a description auxiliary");
    cfg.pretrain = *o.pretrain;
  }
  if (o.distill) {
    if (*o.distill && !desc) throw UsageError("--distill needs a description auxiliary");
    cfg.distill = *o.distill;
  }
  if (o.shared_layers) {
    if (*o.shared_layers < 0 || *o.shared_layers > 3) throw UsageError("--nsd must be in 0..3");
    agent::set_shared_layers(cfg.agent, static_cast<std::size_t>(*o.shared_layers));
  }
  if (o.task_embedding) cfg.agent.use_task_embedding = *o.task_embedding;
  if (o.lambda) {
    if (!(*o.lambda >= 0.0)) throw UsageError("--lambda must be non-negative");
    cfg.lambda = *o.lambda;
  }
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.agent.seed = *o.seed;
  }
  if (o.updates) {
    if (*o.updates < 1) throw UsageError("--updates must be positive");
    cfg.updates = *o.updates;
  }
  if (o.eval_episodes) {
    if (*o.eval_episodes == 0) throw UsageError("--eval-episodes must be positive");
    cfg.eval_episodes = *o.eval_episodes;
  }
  if (!agent::is_description(cfg.agent.aux)) {
    cfg.pretrain = false;
    cfg.distill = false;
  }
  try {
    train::validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

Overrides overrides_from_json(const json& j) {
  Overrides o;
  auto on = [](const json& v) { return v.is_boolean() ? v.get<bool>() : v.get<std::string>() == "on"; };
  if (j.contains("pt")) o.pretrain = on(j.at("pt"));
  if (j.contains("te")) o.task_embedding = on(j.at("te"));
  if (j.contains("nsd")) o.shared_layers = j.at("nsd").get<int>();
  if (j.contains("mode")) o.mode = j.at("mode").get<std::string>();
  if (j.contains("lambda")) o.lambda = j.at("lambda").get<double>();
  if (j.contains("aux")) o.aux = j.at("aux").get<std::string>();
  if (j.contains("distill")) o.distill = j.at("distill").get<bool>();
  if (j.contains("seed")) o.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("updates")) o.updates = j.at("updates").get<int>();
  if (j.contains("eval_episodes")) o.eval_episodes = j.at("eval_episodes").get<std::size_t>();
  return o;
}

train::TrainConfig load_train_config(const fs::path& path) {
  try {
    auto cfg = train::train_config_from_json(read_json(path));
    train::validate(cfg);
    return cfg;
  } catch (const std::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

TrainRun run_train(const train::TrainConfig& cfg, const fs::path& dir,
                   const std::vector<std::string>& args, bool quiet) {
  fs::create_directories(dir);
  const json config = train::to_json(cfg);
  write_json(dir / "config.json", config);
  json m = manifest("train", args, config, cfg.seed, dir);
  write_json(dir / "manifest.json", m);

  agent::Agent agent(cfg.agent);
  TrainRun run{dir, train::train_joint(agent, cfg, {dir, quiet})};
  write_json(dir / "final.ckpt.meta.json",
             {{"config_hash", config_hash(config)},
              {"params_digest", tensor::parameter_digest(agent.params())}});
  write_metrics(dir, run.result.final_eval);
  std::vector<std::string> outputs{"config.json", "train_log.csv", "final.ckpt",
                                   "final.ckpt.meta.json", "metrics.csv", "metrics.json"};
  if (cfg.pretrain) outputs.insert(outputs.begin() + 2, "step1.ckpt");
  complete(m, dir / "manifest.json", outputs);
  return run;
}

SweepSpec sweep_from_json(const json& j, const fs::path& base_dir) {
  SweepSpec spec;
  try {
    const json& base = j.at("base");
    if (base.is_string()) {
      fs::path p(base.get<std::string>());
      if (p.is_relative()) p = base_dir / p;
      spec.base = load_train_config(p);
    } else {
      spec.base = train::train_config_from_json(base);
    }
    for (const auto& c : j.at("cells")) {
      spec.cells.push_back({c.at("name").get<std::string>(),
                            overrides_from_json(c.value("overrides", json::object()))});
    }
    spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(std::string("bad sweep grid: ") + e.what());
  }
  if (spec.cells.empty() || spec.seeds.empty()) throw UsageError("sweep grid needs cells and seeds");
  for (const auto& cell : spec.cells) {
    auto cfg = spec.base;
    apply(cfg, cell.overrides);
  }
  return spec;
}

std::vector<SweepRun> run_sweep(const SweepSpec& spec, const fs::path& dir, std::ostream& log) {
  std::vector<SweepRun> runs;
  for (const auto& cell : spec.cells) {
    for (const auto seed : spec.seeds) {
      auto cfg = spec.base;
      Overrides o = cell.overrides;
      o.seed = seed;
      apply(cfg, o);
      const fs::path run_dir = dir / cell.name / ("seed_" + std::to_string(seed));
      const std::string hash = config_hash(train::to_json(cfg));
      SweepRun r{cell.name, seed, {}, false};
      const fs::path mpath = run_dir / "manifest.json";
      if (fs::exists(mpath) && fs::exists(run_dir / "metrics.json")) {
        const json m = read_json(mpath);
        if (m.value("status", "") == "complete" && m.value("config_hash", "") == hash) {
          r.metrics = metrics_from_json(read_json(run_dir / "metrics.json"));
          r.reused = true;
        }
      }
      if (!r.reused) {
        log << "sweep: " << cell.name << " seed " << seed << '\n';
        std::vector<std::string> args{"train", "--config", (run_dir / "config.json").string()};
        r.metrics = run_train(cfg, run_dir, args).result.final_eval;
      } else {
        log << "sweep: reusing " << cell.name << " seed " << seed << '\n';
      }
      runs.push_back(r);
    }
  }

  {
    util::CsvWriter csv(dir / "runs.csv", {"cell", "seed", "sr", "spl", "sna", "dtg", "sws"});
    for (const auto& r : runs) {
      csv.row(r.cell, r.seed, r.metrics.sr, r.metrics.spl, r.metrics.sna, r.metrics.dtg,
              r.metrics.sws ? util::CsvWriter::cell(*r.metrics.sws) : std::string());
    }
  }
  util::CsvWriter table(dir / "table.csv",
                        {"cell", "seeds", "sr_mean", "sr_std", "spl_mean", "spl_std", "sna_mean",
                         "sna_std", "dtg_mean", "dtg_std", "sws_mean", "sws_std"});
  for (const auto& cell : spec.cells) {
    std::vector<std::vector<double>> values(5);
    for (const auto& r : runs) {
      if (r.cell != cell.name) continue;
      values[0].push_back(r.metrics.sr);
      values[1].push_back(r.metrics.spl);
      values[2].push_back(r.metrics.sna);
      values[3].push_back(r.metrics.dtg);
      if (r.metrics.sws) values[4].push_back(*r.metrics.sws);
    }
    std::vector<std::string> stats;
    for (const auto& v : values) {
      if (v.empty()) {
        stats.insert(stats.end(), {"", ""});
        continue;
      }
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double var = 0.0;
      for (double x : v) var += (x - mean) * (x - mean);
      const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
      stats.push_back(util::CsvWriter::cell(mean));
      stats.push_back(util::CsvWriter::cell(sd));
    }
    table.row(cell.name, values[0].size(), stats[0], stats[1], stats[2], stats[3], stats[4],
              stats[5], stats[6], stats[7], stats[8], stats[9]);
  }
  return runs;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Description-augmented navigation agents"};
  app.require_subcommand(1);
  std::function<int(const Context&)> action;

  GenDatasetOptions gd;
  auto* gen = app.add_subcommand("gen-dataset", "Sample oracle description records as JSONL");
  gen->add_option("--seed", gd.seed);
  gen->add_option("--n", gd.n)->check(CLI::PositiveNumber);
  gen->add_option("--mode", gd.mode)->check(CLI::IsMember({"past", "future", "pf", "past_future"}));
  gen->add_option("--k", gd.k);
  gen->add_option("--worlds", gd.worlds);
  gen->add_option("--out", gd.out, "Output JSONL file")->required();
  gen->callback([&] { action = [&](const Context& c) { return gen_dataset(gd, c); }; });

  PretrainAdgenOptions pa;
  auto* pre = app.add_subcommand("pretrain-adgen", "Train the standalone description generator");
  pre->add_option("--data", pa.data, "Dataset JSONL; otherwise one is generated");
  pre->add_option("--seed", pa.seed);
  pre->add_option("--n", pa.n)->check(CLI::PositiveNumber);
  pre->add_option("--mode", pa.mode)->check(CLI::IsMember({"past", "future", "pf", "past_future"}));
  pre->add_option("--k", pa.k);
  pre->add_option("--worlds", pa.worlds);
  pre->add_option("--epochs", pa.epochs);
  pre->add_option("--batch", pa.batch);
  pre->add_option("--lr", pa.lr);
  pre->add_option("--val-fraction", pa.val_fraction);
  pre->add_option("--d-model", pa.d_model);
  pre->add_option("--heads", pa.heads);
  pre->add_option("--ffn", pa.ffn);
  pre->add_option("--layers", pa.layers);
  pre->add_option("--show", pa.show, "Training samples decoded into generations.jsonl");
  pre->add_option("--out", pa.out);
  pre->callback([&] { action = [&](const Context& c) { return pretrain_adgen(pa, c); }; });

  TrainOptions tr;
  auto* trn = app.add_subcommand("train", "Train an agent");
  trn->add_option("--config", tr.config)->required();
  trn->add_option("--pt", tr.pt, "Step-1 pretraining")->check(CLI::IsMember({"on", "off"}));
  trn->add_option("--te", tr.te, "Task embedding")->check(CLI::IsMember({"on", "off"}));
  trn->add_option("--nsd", tr.nsd, "Shared decoder layers")->check(CLI::Range(0, 3));
  trn->add_option("--mode", tr.mode)->check(CLI::IsMember({"past", "future", "pf", "past_future"}));
  trn->add_option("--lambda", tr.lambda);
  trn->add_option("--aux", tr.aux);
  trn->add_flag("--distill", tr.distill);
  trn->add_option("--seed", tr.seed);
  trn->add_option("--updates", tr.updates);
  trn->add_option("--eval-episodes", tr.eval_episodes);
  trn->add_flag("--verbose", tr.verbose);
  trn->add_option("--out", tr.out);
  trn->callback([&] { action = [&](const Context& c) { return train_command(tr, c); }; });

  EvalOptions ev;
  auto* evl = app.add_subcommand("eval", "Evaluate a trained agent");
  evl->add_option("--run", ev.run, "Training output directory");
  evl->add_option("--checkpoint", ev.checkpoint);
  evl->add_option("--config", ev.config);
  evl->add_option("--episodes", ev.episodes);
  evl->add_flag("--unheard", ev.unheard);
  evl->add_option("--decode", ev.decode)->check(CLI::IsMember({"greedy", "top_k", "top_p"}));
  evl->add_option("--temperature", ev.temperature);
  evl->add_option("--k", ev.k);
  evl->add_option("--p", ev.p);
  evl->add_option("--seed", ev.seed);
  evl->add_option("--split", ev.split)->check(CLI::IsMember({"val", "test"}));
  evl->add_option("--out", ev.out);
  evl->callback([&] { action = [&](const Context& c) { return eval_command(ev, c); }; });

  SweepOptions sw;
  auto* swp = app.add_subcommand("sweep", "Train and evaluate a grid of settings over seeds");
  swp->add_option("--grid", sw.grid)->required();
  swp->add_option("--out", sw.out);
  swp->callback([&] { action = [&](const Context& c) { return sweep_command(sw, c); }; });

  DescribeOptions ds;
  auto* dsc = app.add_subcommand("describe", "Print per-step maps and descriptions of episodes");
  dsc->add_option("--records", ds.records, "records.jsonl or an eval directory")->required();
  dsc->add_flag("--failures-only", ds.failures_only);
  dsc->add_option("--episode", ds.episode);
  dsc->callback([&] { action = [&](const Context& c) { return describe_command(ds, c); }; });

  RerunOptions rr;
  auto* rer = app.add_subcommand("rerun", "Repeat a command from its manifest");
  rer->add_option("--manifest", rr.manifest)->required();
  rer->add_option("--out", rr.out)->required();
  rer->callback([&] { action = [&](const Context& c) { return rerun_command(rr, c); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "descrl: " << e.what() << '\n';
    return kExitUsage;
  }

  const Context ctx{args, &out, &err};
  try {
    return action(ctx);
  } catch (const UsageError& e) {
    err << "descrl: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "descrl: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace descrl::cli
