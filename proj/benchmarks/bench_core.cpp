#include <benchmark/benchmark.h>

#include <random>

#include "descrl/describe/describer.hpp"
#include "descrl/tensor/ops.hpp"
#include "descrl/train/trainer.hpp"

namespace {

using namespace descrl;

tensor::Tensor<float> random_tensor(tensor::Shape shape, std::mt19937_64& rng) {
  tensor::Tensor<float> t(std::move(shape));
  std::normal_distribution<float> dist(0.f, 1.f);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  tensor::ParameterSet<float> params;
  const auto w = params.add("w", random_tensor({n, n}, rng));
  const auto x = random_tensor({n, n}, rng);
  for (auto _ : state) {
    tensor::Graph<float> g(params);
    auto y = tensor::sum(tensor::matmul(g.constant(x), g.param(w)));
    benchmark::DoNotOptimize(g.backward(y));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(32)->Arg(64)->Arg(128);

void BM_AttentionForwardBackward(benchmark::State& state) {
  const std::size_t batch = 8, len = static_cast<std::size_t>(state.range(0)), d = 64;
  std::mt19937_64 rng(2);
  tensor::ParameterSet<float> params;
  const auto q = params.add("q", random_tensor({batch, len, d}, rng));
  const auto kv = random_tensor({batch, len, d}, rng);
  const std::vector<std::uint8_t> mask(batch * len, 1);
  for (auto _ : state) {
    tensor::Graph<float> g(params);
    auto k = g.constant(kv);
    auto y = tensor::sum(tensor::attention(g.param(q), k, k, 4, mask, true));
    benchmark::DoNotOptimize(g.backward(y));
  }
}
BENCHMARK(BM_AttentionForwardBackward)->Arg(8)->Arg(20);

void BM_EnvStep(benchmark::State& state) {
  auto world = std::make_shared<const sim::World>(sim::generate_world(3, {}));
  std::mt19937_64 rng(4);
  sim::EpisodeSampling sampling;
  sim::NavEnv env(world, sim::sample_episode(*world, sampling, rng), {}, 5);
  env.reset();
  std::uniform_int_distribution<int> action(0, 2);
  for (auto _ : state) {
    if (env.done()) {
      state.PauseTiming();
      env = sim::NavEnv(world, sim::sample_episode(*world, sampling, rng), {}, 5);
      env.reset();
      state.ResumeTiming();
    }
    benchmark::DoNotOptimize(env.step(static_cast<sim::Action>(action(rng))));
  }
}
BENCHMARK(BM_EnvStep);

void BM_PastDescription(benchmark::State& state) {
  describe::DatasetConfig cfg;
  cfg.samples = 1;
  cfg.k = static_cast<int>(state.range(0));
  const auto record = describe::build_dataset(cfg).front();
  const auto world = sim::generate_world(record.world_seed, record.world);
  const auto traj = describe::replay(world, record.episode.start, record.actions);
  const auto goal = describe::goal_context(world, record.episode);
  const std::size_t t = traj.actions.size() - 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(describe::past_description(world, traj, t, cfg.k, goal));
  }
}
BENCHMARK(BM_PastDescription)->Arg(8)->Arg(19);

train::TrainConfig toy_config() {
  train::TrainConfig c;
  c.agent.d_model = 32;
  c.agent.heads = 2;
  c.agent.ffn = 64;
  c.agent.memory = 8;
  c.envs = 8;
  c.horizon = 64;
  c.train_worlds = 16;
  c.description_k = 8;
  c.sampling.max_steps = 60;
  return c;
}

void BM_RolloutCollect(benchmark::State& state) {
  const auto cfg = toy_config();
  agent::Agent a(cfg.agent);
  train::RolloutPool pool(cfg, 6);
  for (auto _ : state) benchmark::DoNotOptimize(pool.collect(a));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(cfg.envs * cfg.horizon));
}
BENCHMARK(BM_RolloutCollect)->Unit(benchmark::kMillisecond);

void BM_MinibatchLossAndBackward(benchmark::State& state) {
  const auto cfg = toy_config();
  agent::Agent a(cfg.agent);
  train::RolloutPool pool(cfg, 7);
  const auto samples = pool.collect(a);
  std::vector<const train::Sample*> batch;
  for (std::size_t i = 0; i < 128; ++i) batch.push_back(&samples[i]);
  for (auto _ : state) {
    tensor::Graph<float> g(a.params());
    const auto loss = train::minibatch_loss(g, a.layout(), cfg, batch);
    benchmark::DoNotOptimize(g.backward(loss.total));
  }
}
BENCHMARK(BM_MinibatchLossAndBackward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
