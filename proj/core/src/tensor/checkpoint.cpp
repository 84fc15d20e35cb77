#include "descrl/tensor/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace descrl::tensor {
namespace {

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(buf.data(), buf.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> buf{};
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!in) throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 4096;

}  // namespace

void write_checkpoint(std::ostream& out, const ParameterSet<float>& params) {
  out.write(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, params.size());
  for (ParamId id = 0; id < params.size(); ++id) {
    const std::string& name = params.name(id);
    const Tensor<float>& t = params.value(id);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw CheckpointError("checkpoint write failed");
}

ParameterSet<float> read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_le<std::uint64_t>(in, "parameter count");
  ParameterSet<float> params;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(in, "name length");
    if (len > kMaxName) throw CheckpointError("parameter name too long");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw CheckpointError("checkpoint truncated while reading name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    if (rank > kMaxRank) throw CheckpointError("rank too large for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint64_t>(in, "dims");
    std::vector<float> data(shape_size(shape));
    for (float& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(in, "data"));
    params.add(std::move(name), Tensor<float>(std::move(shape), std::move(data)));
  }
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, params);
}

ParameterSet<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path.string() + "'");
  return read_checkpoint(in);
}

void load_checkpoint_into(const std::filesystem::path& path, ParameterSet<float>& params) {
  ParameterSet<float> loaded = load_checkpoint(path);
  if (loaded.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(loaded.size()) +
                          " parameters, model expects " + std::to_string(params.size()));
  }
  for (ParamId id = 0; id < params.size(); ++id) {
    if (loaded.name(id) != params.name(id) ||
        loaded.value(id).shape() != params.value(id).shape()) {
      throw CheckpointError("checkpoint parameter '" + loaded.name(id) + "' " +
                            shape_to_string(loaded.value(id).shape()) +
                            " does not match model parameter '" + params.name(id) + "' " +
                            shape_to_string(params.value(id).shape()));
    }
  }
  for (ParamId id = 0; id < params.size(); ++id) params.value(id) = loaded.value(id);
}

std::string parameter_digest(const ParameterSet<float>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  for (ParamId id = 0; id < params.size(); ++id) {
    for (char c : params.name(id)) mix(static_cast<unsigned char>(c));
    for (std::size_t d : params.value(id).shape()) mix(d);
    for (float v : params.value(id).data()) mix(std::bit_cast<std::uint32_t>(v));
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace descrl::tensor
