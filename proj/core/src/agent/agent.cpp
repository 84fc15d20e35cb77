#include "descrl/agent/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace descrl::agent {

using tensor::Tensor;

namespace {

constexpr std::size_t kLcDim = 2 + static_cast<std::size_t>(sim::kNumSemantic);
constexpr std::size_t kGoalInput = sim::kAudioDim + 2 * sim::kPoseDim;

struct AuxEntry {
  AuxKind kind;
  std::string_view name;
};

constexpr AuxEntry kAuxNames[] = {
    {AuxKind::kNone, "none"},
    {AuxKind::kDescPast, "desc_past"},
    {AuxKind::kDescFuture, "desc_future"},
    {AuxKind::kDescPastFuture, "desc_past_future"},
    {AuxKind::kNextAction, "next_action"},
    {AuxKind::kProgress, "progress"},
    {AuxKind::kNextFrame, "next_frame"},
    {AuxKind::kNextSpectrogram, "next_spectrogram"},
    {AuxKind::kGoalLocation, "goal_location"},
    {AuxKind::kGoalCategory, "goal_category"},
};

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

}  // namespace

std::string_view aux_name(AuxKind k) {
  for (const auto& e : kAuxNames) {
    if (e.kind == k) return e.name;
  }
  return "none";
}

AuxKind aux_from_name(std::string_view name) {
  for (const auto& e : kAuxNames) {
    if (e.name == name) return e.kind;
  }
  if (name == "desc_pf") return AuxKind::kDescPastFuture;
  throw ConfigError("unknown auxiliary task '" + std::string(name) + "'");
}

bool is_description(AuxKind k) {
  return k == AuxKind::kDescPast || k == AuxKind::kDescFuture || k == AuxKind::kDescPastFuture;
}

describe::Mode description_mode(AuxKind k) {
  switch (k) {
    case AuxKind::kDescPast: return describe::Mode::kPast;
    case AuxKind::kDescFuture: return describe::Mode::kFuture;
    case AuxKind::kDescPastFuture: return describe::Mode::kPastFuture;
    default: break;
  }
  throw ConfigError("auxiliary task '" + std::string(aux_name(k)) + "' has no description mode");
}

std::size_t aux_output_dim(AuxKind k) {
  switch (k) {
    case AuxKind::kNextAction: return sim::kNumActions;
    case AuxKind::kProgress: return 1;
    case AuxKind::kNextFrame: return sim::kPatchCells;
    case AuxKind::kNextSpectrogram: return sim::kAudioDim;
    case AuxKind::kGoalLocation: return 2;
    case AuxKind::kGoalCategory: return sim::kNumSemantic;
    default: return 0;
  }
}

void validate(const AgentConfig& cfg) {
  if (cfg.n_shared_dec > 3) {
    throw ConfigError("N_SD must be in 0..3, got " + std::to_string(cfg.n_shared_dec));
  }
  if (cfg.n_shared_dec + cfg.n_unshared_dec == 0) {
    throw ConfigError("each head needs at least one decoder layer");
  }
  if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0) {
    throw ConfigError("d_model must be divisible by the head count");
  }
  if (cfg.memory == 0) throw ConfigError("memory length must be positive");
  if (cfg.n_enc_layers == 0) throw ConfigError("at least one encoder layer is required");
  if (cfg.patch_embed == 0) throw ConfigError("patch embedding must be positive");
}

void set_shared_layers(AgentConfig& cfg, std::size_t n_shared) {
  if (n_shared > 3) throw ConfigError("N_SD must be in 0..3, got " + std::to_string(n_shared));
  cfg.n_shared_dec = n_shared;
  cfg.n_unshared_dec = 3 - n_shared;
}

nlohmann::json to_json(const AgentConfig& c) {
  return {{"d_model", c.d_model},
          {"heads", c.heads},
          {"ffn", c.ffn},
          {"n_enc_layers", c.n_enc_layers},
          {"n_shared_dec", c.n_shared_dec},
          {"n_unshared_dec", c.n_unshared_dec},
          {"task_embedding", c.use_task_embedding},
          {"memory", c.memory},
          {"patch_embed", c.patch_embed},
          {"aux", aux_name(c.aux)},
          {"seed", c.seed}};
}

AgentConfig agent_config_from_json(const nlohmann::json& j) {
  AgentConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.ffn = j.value("ffn", c.ffn);
  c.n_enc_layers = j.value("n_enc_layers", c.n_enc_layers);
  c.n_shared_dec = j.value("n_shared_dec", c.n_shared_dec);
  c.n_unshared_dec = j.value("n_unshared_dec", c.n_unshared_dec);
  c.use_task_embedding = j.value("task_embedding", c.use_task_embedding);
  c.memory = j.value("memory", c.memory);
  c.patch_embed = j.value("patch_embed", c.patch_embed);
  c.aux = aux_from_name(j.value("aux", std::string(aux_name(c.aux))));
  c.seed = j.value("seed", c.seed);
  validate(c);
  return c;
}

template <typename Real>
AgentLayout build_agent(ParameterSet<Real>& params, const AgentConfig& cfg) {
  validate(cfg);
  tensor::Rng rng(cfg.seed);
  AgentLayout l;
  l.cfg = cfg;
  l.vocab = static_cast<std::size_t>(describe::Vocabulary::instance().size());
  const std::size_t d = cfg.d_model;
  const auto make_dec = [&](const std::string& prefix, std::size_t n) {
    std::vector<nn::DecoderLayer> out;
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(nn::make_decoder_layer(params, prefix + std::to_string(i), d, cfg.heads,
                                           cfg.ffn, rng));
    }
    return out;
  };

  l.patch_table = params.add("obs.patch_table",
                             tensor::normal<Real>({sim::kPatchChannels, cfg.patch_embed}, 0.5, rng));
  l.vis1 = nn::make_linear(params, "obs.vis1", sim::kPatchCells * cfg.patch_embed, d, rng);
  l.vis2 = nn::make_linear(params, "obs.vis2", d, d, rng);
  l.audio = nn::make_linear(params, "obs.audio", sim::kAudioDim, d, rng);
  l.pose = nn::make_linear(params, "obs.pose", sim::kPoseDim, d, rng);
  l.prev_action_table =
      params.add("obs.prev_action", tensor::normal<Real>({sim::kNumActions + 1, d}, 0.5, rng));

  l.gd_in = nn::make_linear(params, "gd.in", kGoalInput, d, rng);
  l.gd_hidden = nn::make_linear(params, "gd.hidden", d, d, rng);
  l.gd_loc = nn::make_linear(params, "gd.loc", d, 2, rng);
  l.gd_cat = nn::make_linear(params, "gd.cat", d, sim::kNumSemantic, rng);

  l.lc_proj = nn::make_linear(params, "enc.lc_proj", kLcDim, d, rng);
  for (std::size_t i = 0; i < cfg.n_enc_layers; ++i) {
    l.encoder.push_back(
        nn::make_encoder_layer(params, "enc." + std::to_string(i), d, cfg.heads, cfg.ffn, rng));
  }
  l.enc_norm = nn::make_layer_norm(params, "enc.norm", d);

  l.shared = make_dec("shared_dec.", cfg.n_shared_dec);
  l.policy_dec = make_dec("policy_dec.", cfg.n_unshared_dec);
  l.policy_norm = nn::make_layer_norm(params, "policy_norm", d);
  l.policy_head = nn::make_linear(params, "policy_head", d, sim::kNumActions, rng, nn::Init::kZero);
  l.value_head = nn::make_linear(params, "value_head", d, 1, rng, nn::Init::kZero);

  l.ad_dec = make_dec("ad_dec.", cfg.n_unshared_dec);
  l.ad_norm = nn::make_layer_norm(params, "ad_norm", d);
  l.ad_head = nn::make_linear(params, "ad_head", d, l.vocab, rng, nn::Init::kZero);
  l.tok_emb = params.add("tok_emb", tensor::normal<Real>({l.vocab, d}, 0.5, rng));
  l.bos_proj = nn::make_linear(params, "bos_proj", kLcDim, d, rng);

  if (cfg.use_task_embedding) {
    l.task_rl = params.add("task_emb.rl", tensor::normal<Real>({d}, 0.5, rng));
    l.task_ad = params.add("task_emb.ad", tensor::normal<Real>({d}, 0.5, rng));
  }
  if (const std::size_t n = aux_output_dim(cfg.aux); n > 0) {
    l.aux_head = nn::make_linear(params, "aux." + std::string(aux_name(cfg.aux)), d, n, rng,
                                 nn::Init::kZero);
  }
  return l;
}

bool is_policy_param(std::string_view name) {
  return starts_with(name, "policy_dec.") || starts_with(name, "policy_norm.") ||
         starts_with(name, "policy_head.") || starts_with(name, "value_head.");
}

bool is_description_param(std::string_view name) {
  return starts_with(name, "ad_dec.") || starts_with(name, "ad_norm.") ||
         starts_with(name, "ad_head.") || name == "tok_emb" || starts_with(name, "bos_proj.") ||
         name == "task_emb.ad";
}

GoalTarget goal_target(const sim::World& world, const sim::EpisodeSpec& spec, sim::Pose pose) {
  const auto cells = sim::goal_cells(world, spec);
  sim::Cell best = cells.front();
  int best_d = std::abs(best.row - pose.cell.row) + std::abs(best.col - pose.cell.col);
  for (const auto& c : cells) {
    const int dist = std::abs(c.row - pose.cell.row) + std::abs(c.col - pose.cell.col);
    if (dist < best_d) {
      best = c;
      best_d = dist;
    }
  }
  const sim::Cell delta{best.row - pose.cell.row, best.col - pose.cell.col};
  const sim::Cell f = sim::forward_offset(pose.heading);
  const sim::Cell r = sim::right_offset(pose.heading);
  GoalTarget t;
  t.forward = static_cast<float>(delta.row * f.row + delta.col * f.col) / 10.f;
  t.right = static_cast<float>(delta.row * r.row + delta.col * r.col) / 10.f;
  t.label = sim::object_label(world.objects().at(static_cast<std::size_t>(spec.goal_object)).category);
  return t;
}

MemoryBatch pack_memory(const std::vector<std::span<const sim::Observation>>& windows,
                        std::size_t slots) {
  MemoryBatch b;
  b.batch = windows.size();
  std::size_t longest = 0;
  for (const auto& w : windows) {
    if (w.empty()) throw std::invalid_argument("empty memory window");
    longest = std::max(longest, w.size());
  }
  if (slots == 0) slots = longest;
  for (const auto& w : windows) {
    if (w.size() > slots) throw std::invalid_argument("memory window exceeds slot count");
  }
  b.slots = slots;
  b.patch_ids.assign(b.batch * slots * sim::kPatchCells, sim::kPatchUnknown);
  b.audio.assign(b.batch * slots * sim::kAudioDim, 0.f);
  b.pose.assign(b.batch * slots * sim::kPoseDim, 0.f);
  b.prev_action.assign(b.batch * slots, sim::kNumActions);
  b.mask.assign(b.batch * slots, 0);
  b.length.resize(b.batch);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& w = windows[i];
    b.length[i] = w.size();
    for (std::size_t s = 0; s < w.size(); ++s) {
      const std::size_t slot = i * slots + s;
      const sim::Observation& o = w[s];
      std::copy(o.patch.begin(), o.patch.end(),
                b.patch_ids.begin() + static_cast<std::ptrdiff_t>(slot * sim::kPatchCells));
      std::copy(o.audio.begin(), o.audio.end(),
                b.audio.begin() + static_cast<std::ptrdiff_t>(slot * sim::kAudioDim));
      std::copy(o.pose.begin(), o.pose.end(),
                b.pose.begin() + static_cast<std::ptrdiff_t>(slot * sim::kPoseDim));
      b.prev_action[slot] = o.prev_action < 0 ? sim::kNumActions : o.prev_action;
      b.mask[slot] = 1;
    }
  }
  return b;
}

template <typename Real>
Var<Real> encode_steps(Graph<Real>& g, const AgentLayout& l, const MemoryBatch& b) {
  const std::size_t n = b.batch * b.slots;
  Var<Real> cells = tensor::gather_rows(g.param(l.patch_table), b.patch_ids);
  Var<Real> flat = tensor::reshape(cells, {n, sim::kPatchCells * l.cfg.patch_embed});
  Var<Real> visual = nn::apply(g, l.vis2, tensor::gelu(nn::apply(g, l.vis1, flat)));
  Tensor<Real> audio({n, static_cast<std::size_t>(sim::kAudioDim)});
  Tensor<Real> pose({n, static_cast<std::size_t>(sim::kPoseDim)});
  for (std::size_t i = 0; i < audio.size(); ++i) audio[i] = static_cast<Real>(b.audio[i]);
  for (std::size_t i = 0; i < pose.size(); ++i) pose[i] = static_cast<Real>(b.pose[i]);
  Var<Real> a = nn::apply(g, l.audio, g.constant(std::move(audio), "audio"));
  Var<Real> p = nn::apply(g, l.pose, g.constant(std::move(pose), "pose"));
  Var<Real> prev = tensor::gather_rows(g.param(l.prev_action_table), b.prev_action);
  return visual + a + p + prev;
}

namespace {

template <typename Real>
GoalOutput<Real> goal_descriptor(Graph<Real>& g, const AgentLayout& l, const MemoryBatch& b) {
  const std::size_t n = b.batch * b.slots;
  Tensor<Real> in({n, kGoalInput});
  Tensor<Real> pool({b.batch, n});
  for (std::size_t i = 0; i < b.batch; ++i) {
    const std::size_t cur = i * b.slots + b.length[i] - 1;
    for (std::size_t s = 0; s < b.length[i]; ++s) {
      const std::size_t slot = i * b.slots + s;
      std::size_t c = 0;
      for (int k = 0; k < sim::kAudioDim; ++k) {
        in.at(slot, c++) = static_cast<Real>(b.audio[slot * sim::kAudioDim + k]);
      }
      for (int k = 0; k < sim::kPoseDim; ++k) {
        in.at(slot, c++) = static_cast<Real>(b.pose[slot * sim::kPoseDim + k]);
      }
      for (int k = 0; k < sim::kPoseDim; ++k) {
        in.at(slot, c++) = static_cast<Real>(b.pose[cur * sim::kPoseDim + k]);
      }
      pool.at(i, slot) = static_cast<Real>(1.0 / static_cast<double>(b.length[i]));
    }
  }
  Var<Real> h = tensor::tanh(nn::apply(g, l.gd_in, g.constant(std::move(in), "goal_input")));
  Var<Real> pooled = tensor::matmul(g.constant(std::move(pool), "goal_pool"), h);
  Var<Real> hidden = tensor::tanh(nn::apply(g, l.gd_hidden, pooled));
  GoalOutput<Real> out;
  out.location = nn::apply(g, l.gd_loc, hidden);
  out.category_logits = nn::apply(g, l.gd_cat, hidden);
  out.category = tensor::softmax(out.category_logits);
  return out;
}

template <typename Real>
Var<Real> with_task(Graph<Real>& g, const std::optional<tensor::ParamId>& task, Var<Real> x) {
  return task ? tensor::add_broadcast(x, g.param(*task)) : x;
}

}  // namespace

template <typename Real>
Var<Real> shared_stack(Graph<Real>& g, const AgentLayout& l, Var<Real> x, Var<Real> memory,
                       std::span<const std::uint8_t> memory_mask, bool description_task) {
  x = with_task(g, description_task ? l.task_ad : l.task_rl, x);
  for (const auto& layer : l.shared) x = nn::apply(g, layer, x, memory, memory_mask, true);
  return x;
}

template <typename Real>
AgentForward<Real> forward_policy(Graph<Real>& g, const AgentLayout& l, const MemoryBatch& b) {
  const std::size_t d = l.cfg.d_model;
  const std::size_t slots = b.slots + 1;
  AgentForward<Real> f;
  f.goal = goal_descriptor(g, l, b);
  f.v_lc = tensor::concat_last<Real>({f.goal.location, f.goal.category});

  Var<Real> steps = tensor::reshape(encode_steps(g, l, b), {b.batch, b.slots, d});
  steps = tensor::add_broadcast(steps, g.constant(nn::sinusoidal_encoding<Real>(b.slots, d), "pe"));
  Var<Real> lc = tensor::reshape(nn::apply(g, l.lc_proj, f.v_lc), {b.batch, 1, d});
  Var<Real> x = tensor::concat_seq(steps, lc);
  f.memory_mask.resize(b.batch * slots);
  for (std::size_t i = 0; i < b.batch; ++i) {
    std::copy_n(b.mask.begin() + static_cast<std::ptrdiff_t>(i * b.slots), b.slots,
                f.memory_mask.begin() + static_cast<std::ptrdiff_t>(i * slots));
    f.memory_mask[i * slots + b.slots] = 1;
  }
  for (const auto& layer : l.encoder) x = nn::apply(g, layer, x, f.memory_mask);
  f.memory = nn::apply(g, l.enc_norm, x);

  std::vector<int> current(b.batch);
  for (std::size_t i = 0; i < b.batch; ++i) {
    current[i] = static_cast<int>(i * slots + b.length[i] - 1);
  }
  Var<Real> query = tensor::reshape(
      tensor::gather_rows(tensor::reshape(f.memory, {b.batch * slots, d}), current),
      {b.batch, 1, d});
  f.shared_out = shared_stack(g, l, query, f.memory, f.memory_mask, false);
  Var<Real> y = f.shared_out;
  for (const auto& layer : l.policy_dec) y = nn::apply(g, layer, y, f.memory, f.memory_mask, true);
  y = tensor::reshape(nn::apply(g, l.policy_norm, y), {b.batch, d});
  f.action_logits = nn::apply(g, l.policy_head, y);
  f.value = nn::apply(g, l.value_head, y);
  return f;
}

template <typename Real>
Var<Real> forward_description(Graph<Real>& g, const AgentLayout& l, const AgentForward<Real>& f,
                              std::span<const int> inputs, std::size_t batch, std::size_t length) {
  if (inputs.size() != batch * length || length == 0) {
    throw std::invalid_argument("decoder inputs do not match batch x length");
  }
  const std::size_t d = l.cfg.d_model;
  Var<Real> x = tensor::reshape(nn::apply(g, l.bos_proj, f.v_lc), {batch, 1, d});
  if (length > 1) {
    std::vector<int> rest;
    rest.reserve(batch * (length - 1));
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t t = 1; t < length; ++t) {
        const int id = inputs[i * length + t];
        if (id < 0 || static_cast<std::size_t>(id) >= l.vocab) {
          throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary");
        }
        rest.push_back(id);
      }
    }
    Var<Real> tok = tensor::reshape(tensor::gather_rows(g.param(l.tok_emb), rest),
                                    {batch, length - 1, d});
    x = tensor::concat_seq(x, tok);
  }
  x = tensor::add_broadcast(x, g.constant(nn::sinusoidal_encoding<Real>(length, d), "pe"));
  x = shared_stack(g, l, x, f.memory, f.memory_mask, true);
  for (const auto& layer : l.ad_dec) x = nn::apply(g, layer, x, f.memory, f.memory_mask, true);
  return nn::apply(g, l.ad_head, nn::apply(g, l.ad_norm, x));
}

template <typename Real>
Var<Real> forward_aux(Graph<Real>& g, const AgentLayout& l, const AgentForward<Real>& f) {
  if (!l.aux_head) {
    throw ConfigError("auxiliary task '" + std::string(aux_name(l.cfg.aux)) + "' has no head");
  }
  const std::size_t b = f.shared_out.shape()[0];
  return nn::apply(g, *l.aux_head, tensor::reshape(f.shared_out, {b, l.cfg.d_model}));
}

Agent::Agent(AgentConfig cfg) : layout_(build_agent(params_, cfg)) {}

Agent::Agent(AgentConfig cfg, ParameterSet<float> params) : layout_(build_agent(params_, cfg)) {
  if (params.size() != params_.size()) {
    throw ConfigError("checkpoint has " + std::to_string(params.size()) +
                      " parameters, configuration expects " + std::to_string(params_.size()));
  }
  for (tensor::ParamId i = 0; i < params_.size(); ++i) {
    if (params.name(i) != params_.name(i) ||
        params.value(i).shape() != params_.value(i).shape()) {
      throw ConfigError("checkpoint parameter '" + params.name(i) +
                        "' does not match the configuration");
    }
  }
  params_ = std::move(params);
}

std::vector<std::vector<int>> decode_descriptions(const Agent& agent, const MemoryBatch& batch,
                                                  const eval::DecodeConfig& cfg,
                                                  std::mt19937_64& rng) {
  eval::validate(cfg);
  const auto& l = agent.layout();
  const auto max_len = static_cast<std::size_t>(describe::kMaxDescriptionLength);
  Graph<float> g(agent.params());
  const auto f = forward_policy(g, l, batch);
  const std::size_t b = batch.batch;
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
    const auto& v = forward_description(g, l, f, inputs, b, len).value();
    bool all_done = true;
    for (std::size_t i = 0; i < b; ++i) {
      if (finished[i]) continue;
      const float* row = v.raw() + (i * len + pos) * l.vocab;
      const int tok = eval::decode_token(std::span<const float>(row, l.vocab), cfg, rng);
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

#define DESCRL_INSTANTIATE_AGENT(R)                                                            \
  template AgentLayout build_agent(ParameterSet<R>&, const AgentConfig&);                      \
  template Var<R> encode_steps(Graph<R>&, const AgentLayout&, const MemoryBatch&);             \
  template Var<R> shared_stack(Graph<R>&, const AgentLayout&, Var<R>, Var<R>,                  \
                               std::span<const std::uint8_t>, bool);                           \
  template AgentForward<R> forward_policy(Graph<R>&, const AgentLayout&, const MemoryBatch&);  \
  template Var<R> forward_description(Graph<R>&, const AgentLayout&, const AgentForward<R>&,   \
                                      std::span<const int>, std::size_t, std::size_t);         \
  template Var<R> forward_aux(Graph<R>&, const AgentLayout&, const AgentForward<R>&);

DESCRL_INSTANTIATE_AGENT(float)
DESCRL_INSTANTIATE_AGENT(double)

#undef DESCRL_INSTANTIATE_AGENT

}  // namespace descrl::agent
