#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "descrl/eval/metrics.hpp"

namespace descrl::testing {

/// Randomized records covering successes, failures, detours, early stops
/// and episodes with and without the sound stopping.
std::vector<eval::EpisodeRecord> random_records(std::uint64_t seed, std::size_t n);

struct OracleMetrics {
  double sr = 0, spl = 0, sna = 0, dtg = 0;
  std::optional<double> sws;
};

/// Naive per-episode recomputation, kept independent of compute_metrics.
OracleMetrics oracle_metrics(const std::vector<eval::EpisodeRecord>& records);

}  // namespace descrl::testing
