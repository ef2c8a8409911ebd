#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentmorph/tensor.hpp"
#include "latentmorph/voxel.hpp"

namespace lm {

/// Generator parameters of one synthetic ventricle-like shape. Lengths are in
/// voxels. The shape is an ellipsoidal shell cut at its equator (basal plane),
/// long axis along z, apex pointing to -z.
struct ShapeParams {
  double a = 9.5;  // outer semi-axes
  double b = 9.5;
  double c = 13.0;
  double wall = 2.5;   // mean wall thickness
  double asym = 0.0;   // septal thickness modulation in [0, 1]
  double kappa = 0.65; // end-systolic cavity contraction in (0, 1)
  std::array<double, 3> rotation_deg{0.0, 0.0, 0.0};
  std::array<double, 3> translation{0.0, 0.0, 0.0};

  /// Wall thickness at azimuth phi (radians). The septum sits at phi = pi.
  double thickness(double phi) const;
  bool valid() const;

  nlohmann::json to_json() const;
  static ShapeParams from_json(const nlohmann::json& j);
};

/// Two-phase sample. ed/es are the network channels, the cavities are auxiliary.
struct VoxelSample {
  std::string id;
  int label = 0;  // 0 healthy-analog, 1 hypertrophic-analog
  ShapeParams params;
  std::uint64_t seed = 0;
  Mask ed, es, cavity_ed, cavity_es;

  std::size_t size() const { return ed.dims[0]; }
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Class-conditional draw: class 1 gets a thicker, more asymmetric wall and a
/// stronger contraction.
ShapeParams draw_shape_params(int label, std::uint64_t seed, std::uint32_t attempt = 0);

/// Voxelizes the shape on an S^3 grid (voxel centers at integer coordinates,
/// shape centered at (S-1)/2 before pose translation).
VoxelSample render_sample(const ShapeParams& params, std::size_t grid_size, int label);

/// draw_shape_params + render_sample, redrawing (bounded) until the shape is
/// valid, nonempty and clear of the grid border.
VoxelSample generate_sample(int label, std::uint64_t seed, std::size_t grid_size = 32);

std::array<double, 3> centroid(const Mask& mask);

/// Crops / zero-pads every channel to out_size^3 with the box placed so the ED
/// myocardium centroid lands on voxel (S/2, S/2, S/2) after rounding.
VoxelSample crop_pad_center(const VoxelSample& sample, std::size_t out_size);

struct VolumeMetrics {
  double lvm_ed = 0.0;
  double lvm_es = 0.0;
  double lvcv_ed = 0.0;
  double lvcv_es = 0.0;
  bool empty_mask = false;  // some thresholded myocardium mask was empty
};

std::size_t count_foreground(const Mask& mask);
Mask threshold(std::span<const double> values, Dims3 dims, double level = 0.5);

/// Background enclosed by the wall: per z-slice, the non-wall pixels inside
/// the convex hull of that slice's wall pixels. Slices cut by a tilted open
/// base still count their cavity.
double enclosed_volume(const Mask& wall);

/// Volumes in voxel units from the generated cavity channels.
VolumeMetrics volume_metrics(const VoxelSample& sample);
/// Volumes of a decoded [2,S,S,S] (or [1,2,S,S,S]) soft grid thresholded at
/// `level`; cavities come from enclosed_volume.
VolumeMetrics volume_metrics(const Tensor& decoded, double level = 0.5);

/// Network input [N, 2, S, S, S] from the ED and ES channels.
Tensor stack_inputs(std::span<const VoxelSample* const> samples);

VoxelVolume to_volume(const VoxelSample& sample);
VoxelSample from_volume(const VoxelVolume& volume);

struct SplitFractions {
  double train = 0.625;
  double val = 0.1875;
  double test = 0.1875;
};

struct ManifestRecord {
  std::string id;
  std::string file;  // relative to the dataset directory
  int label = 0;
  std::string split;
  ShapeParams params;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static ManifestRecord from_json(const nlohmann::json& j);
};

/// Per-class split sizes: round(n * fraction) for train and val, rest to test.
std::array<std::size_t, 3> split_counts(std::size_t n_per_class, const SplitFractions& fractions);

/// Writes samples/<id>.vxg plus train.jsonl, val.jsonl and test.jsonl into `dir`.
std::vector<ManifestRecord> make_dataset(const std::filesystem::path& dir, std::size_t n_per_class,
                                         const SplitFractions& fractions, std::uint64_t seed,
                                         std::size_t grid_size = 32);

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
VoxelSample load_sample(const std::filesystem::path& dataset_dir, const ManifestRecord& record);

}  // namespace lm
