#include "descrl/eval/runner.hpp"

#include <algorithm>
#include <random>

#include "descrl/util/seed.hpp"

namespace descrl::eval {

std::uint64_t split_world_seed(Split split, std::size_t index) {
  return (static_cast<std::uint64_t>(split) << 40) + index;
}

std::vector<std::shared_ptr<const sim::World>> split_worlds(Split split, std::size_t n,
                                                            const sim::WorldConfig& cfg) {
  std::vector<std::shared_ptr<const sim::World>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(std::make_shared<const sim::World>(
        sim::generate_world(split_world_seed(split, i), cfg)));
  }
  return out;
}

namespace {

struct Running {
  std::unique_ptr<sim::NavEnv> env;
  std::vector<sim::Observation> history;
  EpisodeRecord record;
};

}  // namespace

std::vector<EpisodeRecord> run_episodes(const Policy& policy, const EvalConfig& cfg) {
  if (cfg.worlds == 0) throw std::invalid_argument("evaluation needs at least one world");
  const auto worlds = split_worlds(cfg.split, cfg.worlds, cfg.world);
  std::mt19937_64 rng(util::derive_seed(cfg.seed, "eval_episodes"));
  std::vector<EpisodeRecord> records;
  records.reserve(cfg.episodes);
  const std::size_t parallel = std::max<std::size_t>(cfg.parallel, 1);
  const std::size_t memory = std::max<std::size_t>(policy.memory, 1);

  for (std::size_t start = 0; start < cfg.episodes; start += parallel) {
    std::vector<Running> batch;
    for (std::size_t i = start; i < std::min(cfg.episodes, start + parallel); ++i) {
      const auto& world = worlds[i % worlds.size()];
      const sim::EpisodeSpec spec = sim::sample_episode(*world, cfg.sampling, rng);
      Running r;
      r.env = std::make_unique<sim::NavEnv>(world, spec, cfg.env,
                                            util::derive_seed(cfg.seed, "eval_noise", i));
      r.history.push_back(r.env->reset());
      r.record.world_seed = split_world_seed(cfg.split, i % worlds.size());
      r.record.world = cfg.world;
      r.record.spec = spec;
      const auto path = sim::shortest_path_actions_field(*world, spec.start, r.env->goal_field(),
                                                         spec.success_radius);
      r.record.min_actions = static_cast<int>(path.size());
      r.record.shortest_length = static_cast<int>(
          std::count(path.begin(), path.end(), sim::Action::kMoveForward));
      batch.push_back(std::move(r));
    }
    while (true) {
      std::vector<std::size_t> active;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (!batch[i].env->done()) active.push_back(i);
      }
      if (active.empty()) break;
      std::vector<const sim::NavEnv*> envs;
      std::vector<std::span<const sim::Observation>> windows;
      for (std::size_t i : active) {
        const auto& h = batch[i].history;
        const std::size_t n = std::min(memory, h.size());
        envs.push_back(batch[i].env.get());
        windows.emplace_back(h.data() + (h.size() - n), n);
      }
      if (policy.describe) {
        const auto text = policy.describe(envs, windows);
        for (std::size_t j = 0; j < active.size(); ++j) {
          batch[active[j]].record.descriptions.push_back(text.at(j));
        }
      }
      const auto actions = policy.act(envs, windows);
      for (std::size_t j = 0; j < active.size(); ++j) {
        Running& r = batch[active[j]];
        const sim::Pose before = r.env->pose();
        const auto step = r.env->step(actions.at(j));
        r.history.push_back(step.observation);
        ++r.record.actions;
        if (actions[j] == sim::Action::kMoveForward && r.env->pose().cell != before.cell) {
          ++r.record.path_length;
        }
        if (cfg.trace) {
          r.record.steps.push_back({r.env->t(), r.env->pose(), actions[j], step.outcome.reward,
                                    step.outcome.distance, step.observation.silent,
                                    step.outcome.success, step.outcome.done});
        }
        if (step.outcome.done) {
          r.record.success = step.outcome.success;
          r.record.final_distance = step.outcome.distance;
          r.record.sound_stopped = r.env->spec().sound_stop_time < r.env->t();
        }
      }
    }
    for (auto& r : batch) records.push_back(std::move(r.record));
  }
  return records;
}

Policy agent_policy(const agent::Agent& agent, std::optional<DecodeConfig> decode,
                    std::uint64_t decode_seed) {
  Policy p;
  p.memory = agent.config().memory;
  p.act = [&agent](std::span<const sim::NavEnv* const>,
                   const std::vector<std::span<const sim::Observation>>& windows) {
    const auto batch = agent::pack_memory(windows, agent.config().memory);
    tensor::Graph<float> g(agent.params());
    const auto f = agent::forward_policy(g, agent.layout(), batch);
    const auto& logits = f.action_logits.value();
    std::vector<sim::Action> out;
    for (std::size_t i = 0; i < batch.batch; ++i) {
      out.push_back(static_cast<sim::Action>(argmax(std::span<const float>(
          logits.raw() + i * sim::kNumActions, static_cast<std::size_t>(sim::kNumActions)))));
    }
    return out;
  };
  if (decode) {
    validate(*decode);
    auto rng = std::make_shared<std::mt19937_64>(decode_seed);
    p.describe = [&agent, cfg = *decode, rng](
                     std::span<const sim::NavEnv* const>,
                     const std::vector<std::span<const sim::Observation>>& windows) {
      const auto batch = agent::pack_memory(windows, agent.config().memory);
      const auto tokens = agent::decode_descriptions(agent, batch, cfg, *rng);
      std::vector<std::string> out;
      for (const auto& t : tokens) out.push_back(describe::Vocabulary::instance().decode(t));
      return out;
    };
  }
  return p;
}

Policy shortest_path_policy() {
  Policy p;
  p.memory = 1;
  p.act = [](std::span<const sim::NavEnv* const> envs,
             const std::vector<std::span<const sim::Observation>>&) {
    std::vector<sim::Action> out;
    for (const sim::NavEnv* e : envs) {
      out.push_back(sim::shortest_path_actions_field(e->world(), e->pose(), e->goal_field(),
                                                     e->spec().success_radius)
                        .front());
    }
    return out;
  };
  return p;
}

Policy random_policy(std::uint64_t seed) {
  Policy p;
  p.memory = 1;
  auto rng = std::make_shared<std::mt19937_64>(seed);
  p.act = [rng](std::span<const sim::NavEnv* const> envs,
                const std::vector<std::span<const sim::Observation>>&) {
    std::uniform_int_distribution<int> dist(0, sim::kNumActions - 1);
    std::vector<sim::Action> out;
    for (std::size_t i = 0; i < envs.size(); ++i) out.push_back(static_cast<sim::Action>(dist(*rng)));
    return out;
  };
  return p;
}

}  // namespace descrl::eval
