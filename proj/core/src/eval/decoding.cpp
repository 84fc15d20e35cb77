#include "descrl/eval/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace descrl::eval {

namespace {

// Token ids ordered by logit descending, index ascending on ties.
std::vector<int> ranked(std::span<const float> logits) {
  std::vector<int> ids(logits.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return logits[static_cast<std::size_t>(a)] > logits[static_cast<std::size_t>(b)];
  });
  return ids;
}

int sample_from(const std::vector<int>& ids, const std::vector<double>& probs,
                std::mt19937_64& rng) {
  double mass = 0.0;
  for (int id : ids) mass += probs[static_cast<std::size_t>(id)];
  const double u = std::uniform_real_distribution<double>(0.0, mass)(rng);
  double acc = 0.0;
  for (int id : ids) {
    acc += probs[static_cast<std::size_t>(id)];
    if (u < acc) return id;
  }
  return ids.back();
}

}  // namespace

std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kGreedy: return "greedy";
    case Strategy::kTopK: return "top_k";
    case Strategy::kTopP: return "top_p";
  }
  return "greedy";
}

Strategy strategy_from_name(std::string_view name) {
  if (name == "greedy") return Strategy::kGreedy;
  if (name == "top_k" || name == "topk") return Strategy::kTopK;
  if (name == "top_p" || name == "topp") return Strategy::kTopP;
  throw std::invalid_argument("unknown decoding strategy '" + std::string(name) + "'");
}

void validate(const DecodeConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (cfg.k < 1) throw std::invalid_argument("top-k needs k >= 1");
  if (!(cfg.p > 0.0 && cfg.p <= 1.0)) throw std::invalid_argument("top-p needs p in (0, 1]");
}

std::vector<double> tempered_softmax(std::span<const float> logits, double temperature) {
  if (logits.empty()) throw std::invalid_argument("empty logits");
  double mx = -INFINITY;
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

int argmax(std::span<const float> logits) {
  if (logits.empty()) throw std::invalid_argument("empty logits");
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

std::vector<int> top_k_set(std::span<const float> logits, int k) {
  auto ids = ranked(logits);
  ids.resize(std::min(ids.size(), static_cast<std::size_t>(std::max(k, 1))));
  return ids;
}

std::vector<int> nucleus(std::span<const float> logits, double temperature, double p) {
  const auto probs = tempered_softmax(logits, temperature);
  const auto ids = ranked(logits);
  std::vector<int> out;
  double mass = 0.0;
  for (int id : ids) {
    out.push_back(id);
    mass += probs[static_cast<std::size_t>(id)];
    if (mass >= p) break;
  }
  return out;
}

int decode_token(std::span<const float> logits, const DecodeConfig& cfg, std::mt19937_64& rng) {
  validate(cfg);
  switch (cfg.strategy) {
    case Strategy::kGreedy: return argmax(logits);
    case Strategy::kTopK: {
      const auto ids = top_k_set(logits, cfg.k);
      if (ids.size() == 1) return ids.front();
      return sample_from(ids, tempered_softmax(logits, cfg.temperature), rng);
    }
    case Strategy::kTopP: {
      const auto ids = nucleus(logits, cfg.temperature, cfg.p);
      if (ids.size() == 1) return ids.front();
      return sample_from(ids, tempered_softmax(logits, cfg.temperature), rng);
    }
  }
  return argmax(logits);
}

}  // namespace descrl::eval
