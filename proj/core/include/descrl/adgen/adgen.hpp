#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "descrl/describe/describer.hpp"
#include "descrl/eval/decoding.hpp"
#include "descrl/nn/layers.hpp"

// Trainable description generator: transformer encoder over
// (visual feature, action) pairs, causal transformer decoder over tokens.
namespace descrl::adgen {

using tensor::Graph;
using tensor::ParameterSet;
using tensor::Var;

struct AdgenConfig {
  std::size_t d_model = 128;
  std::size_t heads = 4;
  std::size_t ffn = 256;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t patch_embed = 8;
  std::uint64_t seed = 0;
};

/// Parameter ids of the generator; valid for any ParameterSet with the
/// same construction order (float for training, double for checks).
struct AdgenLayout {
  AdgenConfig cfg;
  std::size_t vocab = 0;
  tensor::ParamId patch_table = 0;
  nn::Linear fv1, fv2, action;
  std::vector<nn::EncoderLayer> encoder;
  nn::LayerNorm enc_norm;
  tensor::ParamId token_table = 0;
  std::vector<nn::DecoderLayer> decoder;
  nn::LayerNorm dec_norm;
  nn::Linear out;
};

template <typename Real>
AdgenLayout build_adgen(ParameterSet<Real>& params, const AdgenConfig& cfg, std::size_t vocab);

/// One training example: T visual patches V_0..V_{T-1} paired with the
/// actions a_1..a_T that followed them, and the target tokens (EOS-ended).
struct AdgenSample {
  std::vector<std::array<std::uint8_t, sim::kPatchCells>> frames;
  std::vector<int> actions;
  std::vector<int> tokens;
};

/// Padded batch. Frames beyond a sample's length are masked out; target
/// positions beyond its length hold PAD and carry no loss.
struct AdgenBatch {
  std::size_t batch = 0;
  std::size_t frames = 0;  // T
  std::size_t length = 0;  // L
  std::vector<int> patch_ids;             // batch * frames * kPatchCells
  std::vector<int> actions;               // batch * frames, -1 for padding
  std::vector<std::uint8_t> frame_mask;   // batch * frames
  std::vector<int> targets;               // batch * length
};

/// Throws std::invalid_argument when frames and actions differ in length,
/// a sample is empty, or a token id is outside [0, vocab).
AdgenBatch collate(std::span<const AdgenSample* const> samples, std::size_t vocab);

/// Regenerates the window's patches from a dataset record.
AdgenSample make_sample(const describe::DatasetRecord& record, const sim::World& world);

/// Samples for every record; worlds are regenerated once per seed.
std::vector<AdgenSample> make_samples(const std::vector<describe::DatasetRecord>& records);

/// Encoder output [B, T, D] with positional encoding on the inputs.
template <typename Real>
Var<Real> encode_trajectory(Graph<Real>& g, const AdgenLayout& layout, const AdgenBatch& batch);

/// Token logits [B, L, V] for decoder inputs (B * L ids, BOS first).
template <typename Real>
Var<Real> decode_logits(Graph<Real>& g, const AdgenLayout& layout, Var<Real> memory,
                        std::span<const std::uint8_t> memory_mask, std::span<const int> inputs,
                        std::size_t batch, std::size_t length);

/// Decoder inputs for teacher forcing: BOS then targets shifted right.
std::vector<int> shift_right(const AdgenBatch& batch);

/// Mean token cross-entropy over non-PAD target positions.
template <typename Real>
Var<Real> teacher_forced_loss(Graph<Real>& g, const AdgenLayout& layout, const AdgenBatch& batch);

class AdgenModel {
 public:
  explicit AdgenModel(AdgenConfig cfg = {});

  ParameterSet<float>& params() { return params_; }
  const ParameterSet<float>& params() const { return params_; }
  const AdgenLayout& layout() const { return layout_; }

 private:
  ParameterSet<float> params_;
  AdgenLayout layout_;
};

/// Autoregressive decoding until EOS or kMaxDescriptionLength tokens.
std::vector<std::vector<int>> generate(const AdgenModel& model,
                                       std::span<const AdgenSample* const> samples,
                                       const eval::DecodeConfig& decode, std::mt19937_64& rng);

struct TrainAdgenConfig {
  int epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double val_fraction = 0.1;
  double clip = 1.0;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out_dir;  // checkpoints and loss.csv
};

struct EpochStats {
  int epoch = 0;
  double train_ce = 0.0;
  double val_ce = 0.0;
};

struct TrainAdgenResult {
  std::vector<EpochStats> curve;
  double initial_val_ce = 0.0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> val_indices;
};

/// Mean per-token CE over the given samples, in fixed order.
double evaluate_ce(const AdgenModel& model, const std::vector<AdgenSample>& samples,
                   std::span<const std::size_t> indices, std::size_t batch_size = 64);

TrainAdgenResult train_adgen(AdgenModel& model, const std::vector<AdgenSample>& samples,
                             const TrainAdgenConfig& cfg);

}  // namespace descrl::adgen
