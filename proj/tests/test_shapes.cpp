#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <iterator>
#include <numbers>
#include <numeric>

#include <gtest/gtest.h>

#include "latentmorph/shapes.hpp"
#include "support.hpp"

using lm::Dims3;
using lm::Mask;
using lm::Shape;
using lm::Tensor;
using lm::VoxelSample;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("latentmorph_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}


Tensor two_channel(const Mask& ed, const Mask& es) {
  Tensor t(Shape{2, ed.dims[0], ed.dims[1], ed.dims[2]});
  for (std::size_t i = 0; i < ed.size(); ++i) {
    t[i] = ed.data[i];
    t[ed.size() + i] = es.data[i];
  }
  return t;
}

}  // namespace

TEST(ShapeParams, ThicknessPeaksAtSeptum) {
  lm::ShapeParams p;
  p.wall = 3.0;
  p.asym = 0.4;
  EXPECT_DOUBLE_EQ(p.thickness(std::numbers::pi), 3.0 * 1.4);
  EXPECT_DOUBLE_EQ(p.thickness(0.0), 3.0 * 0.6);
  EXPECT_TRUE(p.valid());
  p.wall = 0.5;
  EXPECT_FALSE(p.valid());
}

TEST(Generator, SameSeedIsBitwiseIdentical) {
  const VoxelSample a = lm::generate_sample(1, 77), b = lm::generate_sample(1, 77);
  EXPECT_EQ(a.ed, b.ed);
  EXPECT_EQ(a.es, b.es);
  EXPECT_EQ(a.cavity_ed, b.cavity_ed);
  EXPECT_NE(a.ed, lm::generate_sample(1, 78).ed);
}

TEST(Generator, SymmetricWithoutAsymmetryOrPose) {
  lm::ShapeParams p;
  p.asym = 0.0;
  const VoxelSample s = lm::render_sample(p, 32, 0);
  const std::size_t S = 32;
  for (std::size_t x = 0; x < S; ++x)
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t z = 0; z < S; ++z) {
        ASSERT_EQ(s.ed.at(x, y, z), s.ed.at(S - 1 - x, y, z));
        ASSERT_EQ(s.ed.at(x, y, z), s.ed.at(x, S - 1 - y, z));
        ASSERT_EQ(s.es.at(x, y, z), s.es.at(S - 1 - x, y, z));
      }
}

TEST(Generator, AsymmetryThickensOneSide) {
  lm::ShapeParams p;
  p.asym = 0.5;
  const VoxelSample s = lm::render_sample(p, 32, 1);
  std::size_t minus = 0, plus = 0;
  for (std::size_t x = 0; x < 32; ++x)
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t z = 0; z < 32; ++z) (x < 16 ? minus : plus) += s.ed.at(x, y, z);
  EXPECT_GT(minus, plus);
}

TEST(Generator, InvariantsHoldForBothClasses) {
  for (int label = 0; label < 2; ++label) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const VoxelSample s = lm::generate_sample(label, 1000 + seed);
      for (std::size_t i = 0; i < s.ed.size(); ++i) {
        ASSERT_FALSE(s.ed.data[i] && s.cavity_ed.data[i]);
        ASSERT_FALSE(s.es.data[i] && s.cavity_es.data[i]);
      }
      const lm::VolumeMetrics m = lm::volume_metrics(s);
      EXPECT_GT(m.lvm_ed, 0.0);
      EXPECT_GT(m.lvm_es, 0.0);
      EXPECT_LT(m.lvcv_es, m.lvcv_ed);
      EXPECT_FALSE(m.empty_mask);
    }
  }
}

TEST(Generator, ClassMeansAndOverlapOfLvm) {
  std::vector<double> lvm[2];
  double lvcv[2] = {0, 0};
  for (int label = 0; label < 2; ++label) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const lm::VolumeMetrics m = lm::volume_metrics(lm::generate_sample(label, 5000 + seed));
      lvm[label].push_back(m.lvm_ed);
      lvcv[label] += m.lvcv_ed;
    }
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  EXPECT_GT(mean(lvm[1]), mean(lvm[0]));
  EXPECT_LT(lvcv[1], lvcv[0]);

  // Samples inside the shared LVM range.
  const double lo = std::max(*std::min_element(lvm[0].begin(), lvm[0].end()), *std::min_element(lvm[1].begin(), lvm[1].end()));
  const double hi = std::min(*std::max_element(lvm[0].begin(), lvm[0].end()), *std::max_element(lvm[1].begin(), lvm[1].end()));
  std::size_t shared = 0;
  for (const auto& v : lvm)
    for (double x : v) shared += x >= lo && x <= hi;
  EXPECT_LT(static_cast<double>(shared) / 200.0, 0.20);
}

TEST(CropPad, SingleVoxelMovesToCenter) {
  VoxelSample s;
  s.ed = s.es = s.cavity_ed = s.cavity_es = Mask(Dims3{8, 8, 8});
  s.ed.at(1, 1, 1) = 1;
  s.es.at(1, 1, 1) = 1;
  const VoxelSample c = lm::crop_pad_center(s, 8);
  EXPECT_EQ(c.ed.at(4, 4, 4), 1);
  EXPECT_EQ(lm::count_foreground(c.ed), 1u);
}

TEST(CropPad, CenteredSampleUnchanged) {
  VoxelSample s;
  s.ed = s.es = s.cavity_ed = s.cavity_es = Mask(Dims3{8, 8, 8});
  s.ed.at(4, 4, 4) = 1;
  s.es.at(3, 4, 5) = 1;
  const VoxelSample c = lm::crop_pad_center(s, 8);
  EXPECT_EQ(c.ed, s.ed);
  EXPECT_EQ(c.es, s.es);
}

TEST(CropPad, CentroidLandsOnGridCenter) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const VoxelSample raw = lm::generate_sample(static_cast<int>(seed % 2), 9000 + seed, 40);
    const VoxelSample c = lm::crop_pad_center(raw, 32);
    const auto got = lm::testing::mean_position(c.ed);
    for (int a = 0; a < 3; ++a) ASSERT_LE(std::abs(got[a] - 16.0), 0.5) << "seed " << seed << " axis " << a;
    // ED-ES offset survives the crop.
    const auto before_ed = lm::testing::mean_position(raw.ed), before_es = lm::testing::mean_position(raw.es);
    const auto after_es = lm::testing::mean_position(c.es);
    for (int a = 0; a < 3; ++a) {
      ASSERT_NEAR(after_es[a] - got[a], before_es[a] - before_ed[a], 1e-9);
    }
  }
}

TEST(CropPad, OverflowNamesExtent) {
  const VoxelSample raw = lm::generate_sample(1, 3, 32);
  try {
    lm::crop_pad_center(raw, 12);
    FAIL() << "expected a GeometryError";
  } catch (const lm::GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("overflow"), std::string::npos);
  }
}

TEST(Volumes, CountingMask) {
  Mask m(Dims3{5, 5, 5});
  for (std::size_t i = 0; i < 10; ++i) m.data[i * 7] = 1;
  const Mask empty(Dims3{5, 5, 5});
  const lm::VolumeMetrics v = lm::volume_metrics(two_channel(m, empty));
  EXPECT_EQ(v.lvm_ed, 10.0);
  EXPECT_EQ(v.lvm_es, 0.0);
  EXPECT_TRUE(v.empty_mask);
}

TEST(Volumes, DigitalSphereNearAnalyticVolume) {
  const double r = 8.0, analytic = 4.0 / 3.0 * std::numbers::pi * r * r * r;
  Tensor grid(Shape{2, 20, 20, 20});
  std::size_t count = 0;
  for (std::size_t x = 0; x < 20; ++x)
    for (std::size_t y = 0; y < 20; ++y)
      for (std::size_t z = 0; z < 20; ++z) {
        const double dx = x - 10.0, dy = y - 10.0, dz = z - 10.0;
        if (dx * dx + dy * dy + dz * dz <= r * r) {
          grid[(x * 20 + y) * 20 + z] = 0.9;
          ++count;
        }
      }
  const lm::VolumeMetrics v = lm::volume_metrics(grid);
  EXPECT_EQ(v.lvm_ed, static_cast<double>(count));
  EXPECT_NEAR(analytic, 2144.66, 0.01);
  EXPECT_LE(std::abs(v.lvm_ed - analytic) / analytic, 0.05);
}

TEST(Volumes, HollowShellCavity) {
  // Closed 6^3 box of thickness 1 inside a 10^3 grid: a 4^3 interior.
  Mask shell(Dims3{10, 10, 10});
  for (std::size_t x = 2; x < 8; ++x)
    for (std::size_t y = 2; y < 8; ++y)
      for (std::size_t z = 2; z < 8; ++z) {
        const bool face = x == 2 || x == 7 || y == 2 || y == 7 || z == 2 || z == 7;
        shell.at(x, y, z) = face;
      }
  EXPECT_EQ(lm::enclosed_volume(shell), 64.0);
  EXPECT_EQ(lm::volume_metrics(two_channel(shell, shell)).lvcv_ed, 64.0);
}

TEST(Volumes, OpenBaseCupStillHasCavity) {
  // Cup open at the top slice: a 3D fill from the border would leak in.
  Mask cup(Dims3{10, 10, 10});
  for (std::size_t x = 2; x < 8; ++x)
    for (std::size_t y = 2; y < 8; ++y)
      for (std::size_t z = 2; z < 8; ++z) cup.at(x, y, z) = x == 2 || x == 7 || y == 2 || y == 7 || z == 2;
  EXPECT_EQ(lm::enclosed_volume(cup), 16.0 * 5.0);
}

TEST(Volumes, GeneratedCavityMatchesEnclosedBackground) {
  for (int label = 0; label < 2; ++label)
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const VoxelSample s = lm::generate_sample(label, seed);
      for (const auto& [wall, cavity] : {std::pair{&s.ed, &s.cavity_ed}, std::pair{&s.es, &s.cavity_es}}) {
        const double filled = lm::enclosed_volume(*wall);
        const double truth = static_cast<double>(lm::count_foreground(*cavity));
        EXPECT_LE(std::abs(filled - truth) / truth, 0.05) << "label " << label << " seed " << seed;
      }
    }
}

TEST(Vxg, RoundTripU8AndF32) {
  const fs::path dir = scratch_dir("vxg");
  const VoxelSample s = lm::generate_sample(0, 4);
  lm::write_vxg(dir / "a.vxg", lm::to_volume(s), lm::VxgDtype::u8);
  lm::VxgDtype dtype{};
  const VoxelSample back = lm::from_volume(lm::read_vxg(dir / "a.vxg", &dtype));
  EXPECT_EQ(dtype, lm::VxgDtype::u8);
  EXPECT_EQ(back.ed, s.ed);
  EXPECT_EQ(back.cavity_es, s.cavity_es);

  lm::VoxelVolume soft;
  soft.channels = 2;
  soft.dims = {2, 3, 4};
  for (int i = 0; i < 48; ++i) soft.data.push_back(i / 64.0);
  lm::write_vxg(dir / "b.vxg", soft, lm::VxgDtype::f32);
  const lm::VoxelVolume b = lm::read_vxg(dir / "b.vxg", &dtype);
  EXPECT_EQ(dtype, lm::VxgDtype::f32);
  EXPECT_EQ(b.dims, soft.dims);
  EXPECT_EQ(b.data, soft.data);

  const std::string bytes = slurp(dir / "b.vxg");
  EXPECT_EQ(bytes.substr(0, 4), "VXG1");
  EXPECT_EQ(bytes.size(), 4u + 16u + 1u + 48u * 4u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);  // little-endian channel count
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 1u); // dtype tag
}

TEST(Vxg, RejectsBadInput) {
  const fs::path dir = scratch_dir("vxg_bad");
  std::ofstream(dir / "bad.vxg", std::ios::binary) << "VXG2xxxxxxxxxxxxxxxxxxxx";
  EXPECT_THROW(lm::read_vxg(dir / "bad.vxg"), lm::FormatError);
  lm::VoxelVolume v;
  v.channels = 1;
  v.dims = {2, 2, 2};
  v.data.assign(8, 1.0);
  lm::write_vxg(dir / "ok.vxg", v, lm::VxgDtype::u8);
  std::string bytes = slurp(dir / "ok.vxg");
  std::ofstream(dir / "short.vxg", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(lm::read_vxg(dir / "short.vxg"), lm::FormatError);
}

TEST(Dataset, SplitArithmetic) {
  const auto c = lm::split_counts(100, {0.6, 0.2, 0.2});
  EXPECT_EQ(2 * c[0], 120u);
  EXPECT_EQ(2 * c[1], 40u);
  EXPECT_EQ(2 * c[2], 40u);
  const auto d = lm::split_counts(160, {});
  EXPECT_EQ(d, (std::array<std::size_t, 3>{100, 30, 30}));
  EXPECT_THROW(lm::split_counts(10, {0.5, 0.5, 0.5}), std::invalid_argument);
}

TEST(Dataset, StratifiedAndDeterministic) {
  const fs::path a = scratch_dir("ds_a"), b = scratch_dir("ds_b");
  const auto records = lm::make_dataset(a, 10, {0.6, 0.2, 0.2}, 42, 32);
  lm::make_dataset(b, 10, {0.6, 0.2, 0.2}, 42, 32);
  ASSERT_EQ(records.size(), 20u);
  for (const char* split : {"train", "val", "test"}) {
    const auto recs = lm::read_manifest(a / (std::string(split) + ".jsonl"));
    std::size_t ones = 0;
    for (const auto& r : recs) ones += r.label;
    EXPECT_EQ(2 * ones, recs.size()) << split;
    EXPECT_EQ(slurp(a / (std::string(split) + ".jsonl")), slurp(b / (std::string(split) + ".jsonl")));
  }
  for (const auto& r : records) {
    ASSERT_EQ(slurp(a / r.file), slurp(b / r.file)) << r.id;
    const VoxelSample s = lm::load_sample(a, r);
    EXPECT_EQ(s.label, r.label);
    EXPECT_EQ(s.ed.dims, (Dims3{32, 32, 32}));
  }
}
