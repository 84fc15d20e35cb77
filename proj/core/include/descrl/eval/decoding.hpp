#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace descrl::eval {

enum class Strategy : std::uint8_t { kGreedy, kTopK, kTopP };

std::string_view strategy_name(Strategy s);
Strategy strategy_from_name(std::string_view name);

struct DecodeConfig {
  Strategy strategy = Strategy::kGreedy;
  double temperature = 1.0;
  int k = 10;
  double p = 0.95;
};

/// Throws std::invalid_argument for temperature <= 0, k < 1 or p outside (0, 1].
void validate(const DecodeConfig& cfg);

/// Softmax of logits / temperature, computed in double.
std::vector<double> tempered_softmax(std::span<const float> logits, double temperature);

/// Index of the largest logit; ties go to the lowest index.
int argmax(std::span<const float> logits);

/// Candidate ids of the k most likely tokens, most likely first.
std::vector<int> top_k_set(std::span<const float> logits, int k);

/// Smallest most-likely-first prefix whose tempered probability mass
/// reaches p.
std::vector<int> nucleus(std::span<const float> logits, double temperature, double p);

/// Picks the next token. Greedy ignores temperature and never draws from
/// the generator.
int decode_token(std::span<const float> logits, const DecodeConfig& cfg, std::mt19937_64& rng);

}  // namespace descrl::eval
