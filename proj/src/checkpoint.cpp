#include "lpd/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace lpd {

namespace {

constexpr char kMagic[8] = {'L', 'P', 'D', 'C', 'K', 'P', 'T', '\0'};
// Guards against absurd headers from corrupt files.
constexpr std::uint64_t kMaxFeatures = 1 << 16;
constexpr std::uint64_t kMaxDim = 1 << 24;

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!in) throw ModelError("checkpoint: truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(buf[i]) << (8 * i);
  return value;
}

}  // namespace

void write_params(std::ostream& out, const ModelParams& params) {
  out.write(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, params.topology == Topology::kFeatureSpecific ? 0u : 1u);
  put_le<std::uint64_t>(out, params.dims.text_features());
  put_le<std::uint64_t>(out, params.dims.video_features());
  put_le<std::uint64_t>(out, params.dims.common_dim);
  for (auto d : params.dims.text_dims) put_le<std::uint64_t>(out, d);
  for (auto d : params.dims.video_dims) put_le<std::uint64_t>(out, d);
  const auto flat = params.flatten();
  put_le<std::uint64_t>(out, flat.size());
  for (double v : flat) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw ModelError("checkpoint: write failed");
}

ModelParams read_params(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw ModelError("checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw ModelError("checkpoint: unsupported version " + std::to_string(version));
  const auto topo = get_le<std::uint32_t>(in);
  if (topo > 1) throw ModelError("checkpoint: unknown topology tag " + std::to_string(topo));

  ModelDims dims;
  const auto k1 = get_le<std::uint64_t>(in);
  const auto k2 = get_le<std::uint64_t>(in);
  dims.common_dim = get_le<std::uint64_t>(in);
  if (k1 < 1 || k2 < 1 || k1 > kMaxFeatures || k2 > kMaxFeatures || dims.common_dim < 1 || dims.common_dim > kMaxDim) {
    throw ModelError("checkpoint: implausible dimensions");
  }
  for (std::uint64_t i = 0; i < k1; ++i) dims.text_dims.push_back(get_le<std::uint64_t>(in));
  for (std::uint64_t i = 0; i < k2; ++i) dims.video_dims.push_back(get_le<std::uint64_t>(in));
  for (auto d : dims.text_dims) {
    if (d < 1 || d > kMaxDim) throw ModelError("checkpoint: implausible feature dimension");
  }
  for (auto d : dims.video_dims) {
    if (d < 1 || d > kMaxDim) throw ModelError("checkpoint: implausible feature dimension");
  }

  auto params = ModelParams::zeros(dims, topo == 0 ? Topology::kFeatureSpecific : Topology::kParallelHeads);
  const auto count = get_le<std::uint64_t>(in);
  if (count != params.parameter_count()) throw ModelError("checkpoint: parameter count does not match dimensions");
  std::vector<double> flat(count);
  for (auto& v : flat) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  params.assign(flat);
  params.check_finite();
  return params;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError("cannot write checkpoint " + path.string());
  write_params(out, params);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open checkpoint " + path.string());
  return read_params(in);
}

}  // namespace lpd
