#include "descrl/adgen/adgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <cstdio>

#include "descrl/tensor/adam.hpp"
#include "descrl/tensor/checkpoint.hpp"
#include "descrl/util/csv.hpp"

namespace descrl::adgen {

using tensor::Tensor;

template <typename Real>
AdgenLayout build_adgen(ParameterSet<Real>& params, const AdgenConfig& cfg, std::size_t vocab) {
  tensor::Rng rng(cfg.seed);
  AdgenLayout l;
  l.cfg = cfg;
  l.vocab = vocab;
  const std::size_t d = cfg.d_model;
  const std::size_t e = cfg.patch_embed;
  l.patch_table = params.add("adgen.patch_table",
                             tensor::normal<Real>({sim::kPatchChannels, e}, 0.5, rng));
  l.fv1 = nn::make_linear(params, "adgen.fv1", sim::kPatchCells * e, d, rng);
  l.fv2 = nn::make_linear(params, "adgen.fv2", d, d, rng);
  l.action = nn::make_linear(params, "adgen.action", sim::kNumActions, d, rng);
  for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
    l.encoder.push_back(
        nn::make_encoder_layer(params, "adgen.enc." + std::to_string(i), d, cfg.heads, cfg.ffn, rng));
  }
  l.enc_norm = nn::make_layer_norm(params, "adgen.enc_norm", d);
  l.token_table = params.add("adgen.token_table", tensor::normal<Real>({vocab, d}, 0.5, rng));
  for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
    l.decoder.push_back(
        nn::make_decoder_layer(params, "adgen.dec." + std::to_string(i), d, cfg.heads, cfg.ffn, rng));
  }
  l.dec_norm = nn::make_layer_norm(params, "adgen.dec_norm", d);
  l.out = nn::make_linear(params, "adgen.out", d, vocab, rng, nn::Init::kZero);
  return l;
}

AdgenBatch collate(std::span<const AdgenSample* const> samples, std::size_t vocab) {
  AdgenBatch b;
  b.batch = samples.size();
  for (const AdgenSample* s : samples) {
    if (s->frames.size() != s->actions.size()) {
      throw std::invalid_argument("frames and actions differ in length");
    }
    if (s->frames.empty()) throw std::invalid_argument("empty trajectory window");
    if (s->tokens.empty()) throw std::invalid_argument("empty target description");
    for (int t : s->tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
        throw std::invalid_argument("target token id " + std::to_string(t) + " outside vocabulary");
      }
    }
    b.frames = std::max(b.frames, s->frames.size());
    b.length = std::max(b.length, s->tokens.size());
  }
  b.patch_ids.assign(b.batch * b.frames * sim::kPatchCells, sim::kPatchUnknown);
  b.actions.assign(b.batch * b.frames, -1);
  b.frame_mask.assign(b.batch * b.frames, 0);
  b.targets.assign(b.batch * b.length, describe::kPad);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const AdgenSample& s = *samples[i];
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      const std::size_t slot = i * b.frames + t;
      std::copy(s.frames[t].begin(), s.frames[t].end(),
                b.patch_ids.begin() + static_cast<std::ptrdiff_t>(slot * sim::kPatchCells));
      b.actions[slot] = s.actions[t];
      b.frame_mask[slot] = 1;
    }
    std::copy(s.tokens.begin(), s.tokens.end(),
              b.targets.begin() + static_cast<std::ptrdiff_t>(i * b.length));
  }
  return b;
}

AdgenSample make_sample(const describe::DatasetRecord& record, const sim::World& world) {
  const auto traj = describe::replay(world, record.episode.start, record.actions);
  AdgenSample s;
  for (std::size_t i = record.window_begin; i < record.window_end; ++i) {
    s.frames.push_back(sim::render_patch(world, traj.poses[i]));
    s.actions.push_back(static_cast<int>(traj.actions[i]));
  }
  s.tokens = record.tokens;
  return s;
}

std::vector<AdgenSample> make_samples(const std::vector<describe::DatasetRecord>& records) {
  std::map<std::uint64_t, sim::World> worlds;
  std::vector<AdgenSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = worlds.find(r.world_seed);
    if (it == worlds.end()) {
      it = worlds.emplace(r.world_seed, sim::generate_world(r.world_seed, r.world)).first;
    }
    out.push_back(make_sample(r, it->second));
  }
  return out;
}

template <typename Real>
Var<Real> encode_trajectory(Graph<Real>& g, const AdgenLayout& l, const AdgenBatch& batch) {
  const std::size_t n = batch.batch * batch.frames;
  const std::size_t d = l.cfg.d_model;
  Var<Real> cells = tensor::gather_rows(g.param(l.patch_table), batch.patch_ids);
  Var<Real> flat = tensor::reshape(cells, {n, sim::kPatchCells * l.cfg.patch_embed});
  Var<Real> visual = nn::apply(g, l.fv2, tensor::gelu(nn::apply(g, l.fv1, flat)));
  Tensor<Real> onehot({n, static_cast<std::size_t>(sim::kNumActions)});
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.actions[i] >= 0) onehot.at(i, static_cast<std::size_t>(batch.actions[i])) = Real{1};
  }
  Var<Real> act = nn::apply(g, l.action, g.constant(std::move(onehot), "actions"));
  Var<Real> x = tensor::reshape(visual + act, {batch.batch, batch.frames, d});
  x = tensor::add_broadcast(x, g.constant(nn::sinusoidal_encoding<Real>(batch.frames, d), "pe"));
  for (const auto& layer : l.encoder) x = nn::apply(g, layer, x, batch.frame_mask);
  return nn::apply(g, l.enc_norm, x);
}

template <typename Real>
Var<Real> decode_logits(Graph<Real>& g, const AdgenLayout& l, Var<Real> memory,
                        std::span<const std::uint8_t> memory_mask, std::span<const int> inputs,
                        std::size_t batch, std::size_t length) {
  const std::size_t d = l.cfg.d_model;
  Var<Real> x = tensor::reshape(tensor::gather_rows(g.param(l.token_table), inputs),
                                {batch, length, d});
  x = tensor::add_broadcast(x, g.constant(nn::sinusoidal_encoding<Real>(length, d), "pe"));
  for (const auto& layer : l.decoder) x = nn::apply(g, layer, x, memory, memory_mask, true);
  return nn::apply(g, l.out, nn::apply(g, l.dec_norm, x));
}

std::vector<int> shift_right(const AdgenBatch& batch) {
  std::vector<int> in(batch.batch * batch.length, describe::kPad);
  for (std::size_t i = 0; i < batch.batch; ++i) {
    in[i * batch.length] = describe::kBos;
    for (std::size_t t = 1; t < batch.length; ++t) {
      in[i * batch.length + t] = batch.targets[i * batch.length + t - 1];
    }
  }
  return in;
}

template <typename Real>
Var<Real> teacher_forced_loss(Graph<Real>& g, const AdgenLayout& l, const AdgenBatch& batch) {
  Var<Real> memory = encode_trajectory(g, l, batch);
  const auto inputs = shift_right(batch);
  Var<Real> logits = decode_logits(g, l, memory, batch.frame_mask, inputs, batch.batch, batch.length);
  std::vector<Real> weights(batch.targets.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] = batch.targets[i] == describe::kPad ? Real{0} : Real{1};
  }
  return tensor::cross_entropy<Real>(logits, batch.targets, weights);
}

AdgenModel::AdgenModel(AdgenConfig cfg)
    : layout_(build_adgen(params_, cfg,
                          static_cast<std::size_t>(describe::Vocabulary::instance().size()))) {}

std::vector<std::vector<int>> generate(const AdgenModel& model,
                                       std::span<const AdgenSample* const> samples,
                                       const eval::DecodeConfig& decode, std::mt19937_64& rng) {
  eval::validate(decode);
  const auto& l = model.layout();
  std::vector<AdgenSample> stubs;
  std::vector<const AdgenSample*> ptrs;
  for (const AdgenSample* s : samples) {
    stubs.push_back({s->frames, s->actions, {describe::kEos}});
  }
  for (const auto& s : stubs) ptrs.push_back(&s);
  const AdgenBatch batch = collate(ptrs, l.vocab);
  const std::size_t b = batch.batch;
  const auto max_len = static_cast<std::size_t>(describe::kMaxDescriptionLength);

  Graph<float> g(model.params());
  Var<float> memory = encode_trajectory(g, l, batch);
  std::vector<std::vector<int>> out(b);
  std::vector<bool> finished(b, false);
  std::vector<int> history(b * max_len, describe::kPad);
  for (std::size_t i = 0; i < b; ++i) history[i * max_len] = describe::kBos;
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    const std::size_t len = pos + 1;
    std::vector<int> inputs(b * len);
    for (std::size_t i = 0; i < b; ++i) {
      std::copy_n(history.begin() + static_cast<std::ptrdiff_t>(i * max_len), len,
                  inputs.begin() + static_cast<std::ptrdiff_t>(i * len));
    }
    Var<float> logits = decode_logits(g, l, memory, batch.frame_mask, inputs, b, len);
    const auto& v = logits.value();
    bool all_done = true;
    for (std::size_t i = 0; i < b; ++i) {
      if (finished[i]) continue;
      const float* row = v.raw() + (i * len + pos) * l.vocab;
      const int tok = eval::decode_token(std::span<const float>(row, l.vocab), decode, rng);
      out[i].push_back(tok);
      if (tok == describe::kEos) {
        finished[i] = true;
      } else {
        all_done = false;
        if (pos + 1 < max_len) history[i * max_len + pos + 1] = tok;
      }
    }
    if (all_done) break;
  }
  return out;
}

double evaluate_ce(const AdgenModel& model, const std::vector<AdgenSample>& samples,
                   std::span<const std::size_t> indices, std::size_t batch_size) {
  double total = 0.0;
  double tokens = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    std::vector<const AdgenSample*> ptrs;
    for (std::size_t i = start; i < std::min(indices.size(), start + batch_size); ++i) {
      ptrs.push_back(&samples[indices[i]]);
    }
    const AdgenBatch batch = collate(ptrs, model.layout().vocab);
    Graph<float> g(model.params());
    const double ce = teacher_forced_loss(g, model.layout(), batch).value().item();
    const auto n = static_cast<double>(std::count_if(
        batch.targets.begin(), batch.targets.end(), [](int t) { return t != describe::kPad; }));
    total += ce * n;
    tokens += n;
  }
  return tokens > 0 ? total / tokens : 0.0;
}

TrainAdgenResult train_adgen(AdgenModel& model, const std::vector<AdgenSample>& samples,
                             const TrainAdgenConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("training set is empty");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(samples.size())));
  if (n_val >= samples.size()) n_val = samples.size() - 1;
  TrainAdgenResult result;
  result.val_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  result.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  const auto& val_set = result.val_indices.empty() ? result.train_indices : result.val_indices;
  result.initial_val_ce = evaluate_ce(model, samples, val_set);

  if (cfg.out_dir) std::filesystem::create_directories(*cfg.out_dir);
  tensor::Adam<float> opt(model.params(), {.lr = cfg.lr});
  std::vector<std::size_t> train = result.train_indices;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double total = 0.0;
    double tokens = 0.0;
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
      std::vector<const AdgenSample*> ptrs;
      for (std::size_t i = start; i < std::min(train.size(), start + cfg.batch_size); ++i) {
        ptrs.push_back(&samples[train[i]]);
      }
      const AdgenBatch batch = collate(ptrs, model.layout().vocab);
      tensor::Gradients<float> grads;
      double ce = 0.0;
      {
        Graph<float> g(model.params());
        Var<float> loss = teacher_forced_loss(g, model.layout(), batch);
        ce = loss.value().item();
        grads = g.backward(loss);
      }
      if (cfg.clip > 0) tensor::clip_grad_norm(grads, cfg.clip);
      opt.step(model.params(), grads);
      const auto n = static_cast<double>(std::count_if(
          batch.targets.begin(), batch.targets.end(), [](int t) { return t != describe::kPad; }));
      total += ce * n;
      tokens += n;
    }
    EpochStats stats{epoch, total / tokens, evaluate_ce(model, samples, val_set)};
    result.curve.push_back(stats);
    if (cfg.out_dir) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
      tensor::save_checkpoint(*cfg.out_dir / name, model.params());
      util::CsvWriter csv(*cfg.out_dir / "loss.csv", {"epoch", "train_ce", "val_ce"});
      for (const auto& s : result.curve) csv.row(s.epoch, s.train_ce, s.val_ce);
    }
  }
  return result;
}

#define DESCRL_INSTANTIATE_ADGEN(R)                                                           \
  template AdgenLayout build_adgen(ParameterSet<R>&, const AdgenConfig&, std::size_t);        \
  template Var<R> encode_trajectory(Graph<R>&, const AdgenLayout&, const AdgenBatch&);        \
  template Var<R> decode_logits(Graph<R>&, const AdgenLayout&, Var<R>,                        \
                                std::span<const std::uint8_t>, std::span<const int>,          \
                                std::size_t, std::size_t);                                    \
  template Var<R> teacher_forced_loss(Graph<R>&, const AdgenLayout&, const AdgenBatch&);

DESCRL_INSTANTIATE_ADGEN(float)
DESCRL_INSTANTIATE_ADGEN(double)

#undef DESCRL_INSTANTIATE_ADGEN

}  // namespace descrl::adgen
