#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace lm {

using Dims3 = std::array<std::size_t, 3>;

/// Row-major 3D grid, last axis fastest.
template <class T>
struct Grid3 {
  Dims3 dims{0, 0, 0};
  std::vector<T> data;

  Grid3() = default;
  explicit Grid3(Dims3 d, T fill = T{}) : dims(d), data(d[0] * d[1] * d[2], fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (x * dims[1] + y) * dims[2] + z; }
  T& at(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
  const T& at(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }

  friend bool operator==(const Grid3&, const Grid3&) = default;
};

using Mask = Grid3<std::uint8_t>;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Payload encodings of the VXG1 format.
enum class VxgDtype : std::uint8_t { u8 = 0, f32 = 1 };

/// Multi-channel voxel volume as stored in a VXG1 file: "VXG1", u32 channel
/// count, u32 dx, dy, dz, u8 dtype, then the channel-major row-major payload,
/// all little-endian.
struct VoxelVolume {
  std::uint32_t channels = 0;
  Dims3 dims{0, 0, 0};
  std::vector<double> data;

  std::size_t channel_size() const { return dims[0] * dims[1] * dims[2]; }
};

void write_vxg(const std::filesystem::path& path, const VoxelVolume& volume, VxgDtype dtype);
VoxelVolume read_vxg(const std::filesystem::path& path, VxgDtype* dtype = nullptr);

}  // namespace lm
