#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "descrl/tensor/parameters.hpp"

namespace descrl::tensor {

// Binary layout, all integers little-endian:
//   "DRL1" | u32 format version | u64 parameter count
//   per parameter: u32 name length | UTF-8 name | u32 rank |
//                  rank x u64 dims | product(dims) x f32 data
inline constexpr char kCheckpointMagic[4] = {'D', 'R', 'L', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(std::ostream& out, const ParameterSet<float>& params);
ParameterSet<float> read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params);
ParameterSet<float> load_checkpoint(const std::filesystem::path& path);

/// Loads values into an existing set; names, order and shapes must match.
void load_checkpoint_into(const std::filesystem::path& path, ParameterSet<float>& params);

/// FNV-1a over names, shapes and raw float bits, rendered as 16 hex digits.
std::string parameter_digest(const ParameterSet<float>& params);

}  // namespace descrl::tensor
