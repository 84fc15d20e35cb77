#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "descrl/describe/describer.hpp"
#include "descrl/eval/decoding.hpp"
#include "descrl/nn/layers.hpp"
#include "descrl/sim/nav_env.hpp"

// Navigation agent with a description-predicting auxiliary decoder.
//
// Parameter groups (name prefixes):
//   obs.*           step encoders (patch, audio, pose, previous action)
//   gd.*            goal descriptor
//   enc.*           memory encoder, including the v_LC slot projection
//   shared_dec.i.*  decoder layers used by both heads
//   policy_dec.i.*, policy_norm, policy_head, value_head
//   ad_dec.i.*, ad_norm, ad_head, tok_emb, bos_proj
//   task_emb.rl, task_emb.ad
//   aux.<kind>.*    alternative auxiliary head, one at most
namespace descrl::agent {

using tensor::Graph;
using tensor::ParameterSet;
using tensor::Var;

enum class AuxKind : std::uint8_t {
  kNone,
  kDescPast,
  kDescFuture,
  kDescPastFuture,
  kNextAction,
  kProgress,
  kNextFrame,
  kNextSpectrogram,
  kGoalLocation,
  kGoalCategory,
};

std::string_view aux_name(AuxKind k);
AuxKind aux_from_name(std::string_view name);
bool is_description(AuxKind k);
/// Description mode of a desc_* kind.
describe::Mode description_mode(AuxKind k);

/// Number of values a baseline head predicts.
std::size_t aux_output_dim(AuxKind k);

struct AgentConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t n_enc_layers = 2;
  std::size_t n_shared_dec = 2;
  std::size_t n_unshared_dec = 1;
  bool use_task_embedding = true;
  std::size_t memory = 20;
  std::size_t patch_embed = 4;
  AuxKind aux = AuxKind::kDescPast;
  std::uint64_t seed = 0;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws ConfigError: N_SD outside 0..3, a head with no decoder layer,
/// d_model not divisible by heads, zero memory.
void validate(const AgentConfig& cfg);

/// Sets N_SD and keeps three decoder layers per head.
void set_shared_layers(AgentConfig& cfg, std::size_t n_shared);

nlohmann::json to_json(const AgentConfig& cfg);
AgentConfig agent_config_from_json(const nlohmann::json& j);

struct AgentLayout {
  AgentConfig cfg;
  std::size_t vocab = 0;
  // obs
  tensor::ParamId patch_table = 0;
  nn::Linear vis1, vis2, audio, pose;
  tensor::ParamId prev_action_table = 0;  // kNumActions + 1 rows, last = none
  // goal descriptor
  nn::Linear gd_in, gd_hidden, gd_loc, gd_cat;
  // memory encoder
  nn::Linear lc_proj;
  std::vector<nn::EncoderLayer> encoder;
  nn::LayerNorm enc_norm;
  // decoders
  std::vector<nn::DecoderLayer> shared;
  std::vector<nn::DecoderLayer> policy_dec;
  nn::LayerNorm policy_norm;
  nn::Linear policy_head, value_head;
  std::vector<nn::DecoderLayer> ad_dec;
  nn::LayerNorm ad_norm;
  nn::Linear ad_head;
  tensor::ParamId tok_emb = 0;
  nn::Linear bos_proj;
  std::optional<tensor::ParamId> task_rl, task_ad;
  std::optional<nn::Linear> aux_head;
};

template <typename Real>
AgentLayout build_agent(ParameterSet<Real>& params, const AgentConfig& cfg);

/// Names of parameters owned by the policy side: unshared policy layers,
/// their norm and the action/value heads.
bool is_policy_param(std::string_view name);
/// Names of parameters owned by the description side.
bool is_description_param(std::string_view name);

/// Goal descriptor target: egocentric offset (forward, right) / 10 of the
/// nearest goal cell and the goal's semantic label.
struct GoalTarget {
  float forward = 0.f;
  float right = 0.f;
  int label = 0;
};

GoalTarget goal_target(const sim::World& world, const sim::EpisodeSpec& spec, sim::Pose pose);

/// Memory windows for a batch, left-aligned: slot 0 is the oldest step,
/// slot len-1 the current one. Padded slots are masked.
struct MemoryBatch {
  std::size_t batch = 0;
  std::size_t slots = 0;
  std::vector<int> patch_ids;        // batch * slots * kPatchCells
  std::vector<float> audio;          // batch * slots * kAudioDim
  std::vector<float> pose;           // batch * slots * kPoseDim
  std::vector<int> prev_action;      // batch * slots, kNumActions = none
  std::vector<std::uint8_t> mask;    // batch * slots
  std::vector<std::size_t> length;   // batch
};

/// Packs observation windows (oldest first, non-empty) into `slots` slots;
/// 0 means the longest window. Throws if a window exceeds `slots`.
MemoryBatch pack_memory(const std::vector<std::span<const sim::Observation>>& windows,
                        std::size_t slots = 0);

template <typename Real>
struct GoalOutput {
  Var<Real> location;      // [B, 2]
  Var<Real> category_logits;  // [B, N_sem]
  Var<Real> category;      // [B, N_sem], softmax
};

template <typename Real>
struct AgentForward {
  Var<Real> memory;          // [B, slots + 1, D] encoded, v_LC last
  std::vector<std::uint8_t> memory_mask;
  GoalOutput<Real> goal;
  Var<Real> v_lc;            // [B, 2 + N_sem]
  Var<Real> shared_out;      // [B, 1, D] policy query after the shared stack
  Var<Real> action_logits;   // [B, kNumActions]
  Var<Real> value;           // [B, 1]
};

/// Observation encoding, goal descriptor, memory encoder and the policy
/// path.
template <typename Real>
AgentForward<Real> forward_policy(Graph<Real>& g, const AgentLayout& layout,
                                  const MemoryBatch& batch);

/// Teacher-forced description logits [B, L, V]. `inputs` holds the B * L
/// decoder input ids; position 0 of each row is replaced by the BOS
/// projection of v_LC, so its id is ignored.
template <typename Real>
Var<Real> forward_description(Graph<Real>& g, const AgentLayout& layout,
                              const AgentForward<Real>& f, std::span<const int> inputs,
                              std::size_t batch, std::size_t length);

/// The shared stack applied to an arbitrary decoder input [B, T, D] with the
/// task embedding of one head; used to probe the task-embedding contract.
template <typename Real>
Var<Real> shared_stack(Graph<Real>& g, const AgentLayout& layout, Var<Real> x, Var<Real> memory,
                       std::span<const std::uint8_t> memory_mask, bool description_task);

/// Alternative auxiliary head output [B, aux_output_dim].
template <typename Real>
Var<Real> forward_aux(Graph<Real>& g, const AgentLayout& layout, const AgentForward<Real>& f);

/// Step embeddings of every slot, [batch * slots, D].
template <typename Real>
Var<Real> encode_steps(Graph<Real>& g, const AgentLayout& layout, const MemoryBatch& batch);

class Agent {
 public:
  explicit Agent(AgentConfig cfg = {});
  Agent(AgentConfig cfg, ParameterSet<float> params);

  ParameterSet<float>& params() { return params_; }
  const ParameterSet<float>& params() const { return params_; }
  const AgentLayout& layout() const { return layout_; }
  const AgentConfig& config() const { return layout_.cfg; }

 private:
  ParameterSet<float> params_;
  AgentLayout layout_;
};

/// Autoregressive description from the agent's current memory, starting
/// from the v_LC BOS. One description per batch row.
std::vector<std::vector<int>> decode_descriptions(const Agent& agent, const MemoryBatch& batch,
                                                  const eval::DecodeConfig& cfg,
                                                  std::mt19937_64& rng);

}  // namespace descrl::agent
