#include "latentmorph/voxel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace lm {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'V', 'X', 'G', '1'};

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError("truncated VXG1 header in " + path.string());
  return value;
}

}  // namespace

void write_vxg(const std::filesystem::path& path, const VoxelVolume& volume, VxgDtype dtype) {
  if (volume.data.size() != volume.channels * volume.channel_size()) {
    throw FormatError("VXG1 payload size does not match header for " + path.string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  put<std::uint32_t>(out, volume.channels);
  for (std::size_t d : volume.dims) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  if (dtype == VxgDtype::u8) {
    std::vector<std::uint8_t> bytes(volume.data.size());
    std::transform(volume.data.begin(), volume.data.end(), bytes.begin(),
                   [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); });
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  } else {
    std::vector<float> floats(volume.data.begin(), volume.data.end());
    out.write(reinterpret_cast<const char*>(floats.data()), static_cast<std::streamsize>(floats.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

VoxelVolume read_vxg(const std::filesystem::path& path, VxgDtype* dtype_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + " is not a VXG1 file");
  VoxelVolume v;
  v.channels = get<std::uint32_t>(in, path);
  for (std::size_t& d : v.dims) d = get<std::uint32_t>(in, path);
  const auto tag = get<std::uint8_t>(in, path);
  if (tag > 1) throw FormatError("unknown VXG1 dtype tag " + std::to_string(tag) + " in " + path.string());
  const auto dtype = static_cast<VxgDtype>(tag);
  const std::size_t n = v.channels * v.channel_size();
  v.data.resize(n);
  if (dtype == VxgDtype::u8) {
    std::vector<std::uint8_t> bytes(n);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n))) {
      throw FormatError("truncated VXG1 payload in " + path.string());
    }
    std::copy(bytes.begin(), bytes.end(), v.data.begin());
  } else {
    std::vector<float> floats(n);
    if (!in.read(reinterpret_cast<char*>(floats.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
      throw FormatError("truncated VXG1 payload in " + path.string());
    }
    std::copy(floats.begin(), floats.end(), v.data.begin());
  }
  if (dtype_out) *dtype_out = dtype;
  return v;
}

}  // namespace lm
