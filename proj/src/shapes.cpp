#include "latentmorph/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "latentmorph/rng.hpp"

namespace lm {
namespace fs = std::filesystem;

double ShapeParams::thickness(double phi) const { return wall * (1.0 - asym * std::cos(phi)); }

bool ShapeParams::valid() const {
  const double septal = wall * (1.0 + asym);
  return wall >= 1.0 && asym >= 0.0 && asym <= 1.0 && kappa > 0.0 && kappa < 1.0 && a - septal >= 2.0 &&
         b - septal >= 2.0 && c - wall >= 2.0;
}

nlohmann::json ShapeParams::to_json() const {
  return {{"a", a},       {"b", b},         {"c", c},
          {"wall", wall}, {"asym", asym},   {"kappa", kappa},
          {"rotation_deg", rotation_deg},   {"translation", translation}};
}

ShapeParams ShapeParams::from_json(const nlohmann::json& j) {
  ShapeParams p;
  p.a = j.at("a").get<double>();
  p.b = j.at("b").get<double>();
  p.c = j.at("c").get<double>();
  p.wall = j.at("wall").get<double>();
  p.asym = j.at("asym").get<double>();
  p.kappa = j.at("kappa").get<double>();
  p.rotation_deg = j.at("rotation_deg").get<std::array<double, 3>>();
  p.translation = j.at("translation").get<std::array<double, 3>>();
  return p;
}

ShapeParams draw_shape_params(int label, std::uint64_t seed, std::uint32_t attempt) {
  if (label != 0 && label != 1) throw std::invalid_argument("class label must be 0 or 1");
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::shapes), attempt});
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  ShapeParams p;
  p.a = uniform(9.0, 10.5);
  p.b = uniform(9.0, 10.5);
  p.c = uniform(12.5, 14.0);
  if (label == 0) {
    p.wall = uniform(2.0, 3.0);
    p.asym = uniform(0.0, 0.15);
    p.kappa = uniform(0.60, 0.72);
  } else {
    p.wall = uniform(3.4, 4.4);
    p.asym = uniform(0.25, 0.5);
    p.kappa = uniform(0.50, 0.65);
  }
  for (double& r : p.rotation_deg) r = uniform(-10.0, 10.0);
  for (double& t : p.translation) t = uniform(-2.0, 2.0);
  return p;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_matrix(const std::array<double, 3>& deg) {
  const double k = std::numbers::pi / 180.0;
  const double ca = std::cos(deg[0] * k), sa = std::sin(deg[0] * k);
  const double cb = std::cos(deg[1] * k), sb = std::sin(deg[1] * k);
  const double cg = std::cos(deg[2] * k), sg = std::sin(deg[2] * k);
  // Rz(g) * Ry(b) * Rx(a)
  return {{{cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa},
           {sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa},
           {-sb, cb * sa, cb * ca}}};
}

double ellipsoid(double x, double y, double z, double ax, double ay, double az) {
  return (x / ax) * (x / ax) + (y / ay) * (y / ay) + (z / az) * (z / az);
}

}  // namespace

VoxelSample render_sample(const ShapeParams& p, std::size_t S, int label) {
  if (!p.valid()) throw GeometryError("shape parameters violate wall/cavity invariants");
  VoxelSample s;
  s.label = label;
  s.params = p;
  const Dims3 dims{S, S, S};
  s.ed = s.es = s.cavity_ed = s.cavity_es = Mask(dims);

  const Mat3 R = rotation_matrix(p.rotation_deg);
  const double mid = (static_cast<double>(S) - 1.0) / 2.0;
  const std::array<double, 3> center{mid + p.translation[0], mid + p.translation[1],
                                     mid + p.c / 2.0 + p.translation[2]};

  // End systole: cavity contracts (less along the long axis); the outer
  // surface shrinks uniformly so the shell volume is roughly conserved.
  const double kappa_long = 0.5 * (1.0 + p.kappa);
  const double outer = p.a * p.b * p.c;
  const double inner = (p.a - p.wall) * (p.b - p.wall) * (p.c - p.wall);
  const double es_scale = std::cbrt((outer - inner * (1.0 - p.kappa * p.kappa * kappa_long)) / outer);

  for (std::size_t x = 0; x < S; ++x)
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t z = 0; z < S; ++z) {
        const double d[3] = {x - center[0], y - center[1], z - center[2]};
        // local = R^T d
        const double u = R[0][0] * d[0] + R[1][0] * d[1] + R[2][0] * d[2];
        const double v = R[0][1] * d[0] + R[1][1] * d[1] + R[2][1] * d[2];
        const double w = R[0][2] * d[0] + R[1][2] * d[1] + R[2][2] * d[2];
        if (w > 0.0) continue;
        const double t = p.thickness(std::atan2(v, u));
        const double ia = p.a - t, ib = p.b - t, ic = p.c - p.wall;
        const std::size_t i = s.ed.index(x, y, z);

        const bool cav_ed = ellipsoid(u, v, w, ia, ib, ic) < 1.0;
        const bool out_ed = ellipsoid(u, v, w, p.a, p.b, p.c) <= 1.0;
        s.cavity_ed.data[i] = cav_ed;
        s.ed.data[i] = out_ed && !cav_ed;

        const bool cav_es = ellipsoid(u, v, w, p.kappa * ia, p.kappa * ib, kappa_long * ic) < 1.0;
        const bool out_es = ellipsoid(u, v, w, es_scale * p.a, es_scale * p.b, es_scale * p.c) <= 1.0;
        s.cavity_es.data[i] = cav_es;
        s.es.data[i] = out_es && !cav_es;
      }
  return s;
}

namespace {

bool touches_border(const Mask& m) {
  const Dims3& d = m.dims;
  for (std::size_t x = 0; x < d[0]; ++x)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t z = 0; z < d[2]; ++z) {
        if (!m.at(x, y, z)) continue;
        if (x == 0 || y == 0 || z == 0 || x + 1 == d[0] || y + 1 == d[1] || z + 1 == d[2]) return true;
      }
  return false;
}

}  // namespace

VoxelSample generate_sample(int label, std::uint64_t seed, std::size_t grid_size) {
  constexpr std::uint32_t kMaxAttempts = 32;
  for (std::uint32_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const ShapeParams p = draw_shape_params(label, seed, attempt);
    if (!p.valid()) continue;
    VoxelSample s = render_sample(p, grid_size, label);
    const bool nonempty = count_foreground(s.ed) && count_foreground(s.es) && count_foreground(s.cavity_ed) &&
                          count_foreground(s.cavity_es);
    if (!nonempty || touches_border(s.ed) || touches_border(s.es)) continue;
    s.seed = seed;
    return s;
  }
  throw GeometryError("no valid shape after " + std::to_string(kMaxAttempts) + " draws (grid " +
                      std::to_string(grid_size) + ")");
}

std::size_t count_foreground(const Mask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.data.begin(), mask.data.end(), [](std::uint8_t v) { return v != 0; }));
}

std::array<double, 3> centroid(const Mask& m) {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  std::size_t n = 0;
  for (std::size_t x = 0; x < m.dims[0]; ++x)
    for (std::size_t y = 0; y < m.dims[1]; ++y)
      for (std::size_t z = 0; z < m.dims[2]; ++z) {
        if (!m.at(x, y, z)) continue;
        sum[0] += static_cast<double>(x);
        sum[1] += static_cast<double>(y);
        sum[2] += static_cast<double>(z);
        ++n;
      }
  if (n == 0) throw GeometryError("centroid of an empty mask");
  for (double& v : sum) v /= static_cast<double>(n);
  return sum;
}

VoxelSample crop_pad_center(const VoxelSample& sample, std::size_t S) {
  const std::array<double, 3> c = centroid(sample.ed);
  std::array<long, 3> origin{};
  for (int a = 0; a < 3; ++a) origin[a] = std::lround(c[a]) - static_cast<long>(S / 2);

  const Mask* channels[4] = {&sample.ed, &sample.es, &sample.cavity_ed, &sample.cavity_es};
  std::array<long, 3> lo{0, 0, 0}, hi{0, 0, 0};
  bool overflow = false;
  for (const Mask* m : channels) {
    for (std::size_t x = 0; x < m->dims[0]; ++x)
      for (std::size_t y = 0; y < m->dims[1]; ++y)
        for (std::size_t z = 0; z < m->dims[2]; ++z) {
          if (!m->at(x, y, z)) continue;
          const long p[3] = {static_cast<long>(x) - origin[0], static_cast<long>(y) - origin[1],
                             static_cast<long>(z) - origin[2]};
          for (int a = 0; a < 3; ++a) {
            if (p[a] < 0) lo[a] = std::max(lo[a], -p[a]), overflow = true;
            if (p[a] >= static_cast<long>(S)) hi[a] = std::max(hi[a], p[a] - static_cast<long>(S) + 1), overflow = true;
          }
        }
  }
  if (overflow) {
    std::ostringstream msg;
    msg << "foreground exceeds " << S << "^3 after centering; overflow (low/high voxels) x " << lo[0] << "/" << hi[0]
        << ", y " << lo[1] << "/" << hi[1] << ", z " << lo[2] << "/" << hi[2];
    throw GeometryError(msg.str());
  }

  VoxelSample out = sample;
  Mask* targets[4] = {&out.ed, &out.es, &out.cavity_ed, &out.cavity_es};
  for (int ch = 0; ch < 4; ++ch) {
    const Mask& m = *channels[ch];
    Mask r(Dims3{S, S, S});
    for (std::size_t x = 0; x < m.dims[0]; ++x)
      for (std::size_t y = 0; y < m.dims[1]; ++y)
        for (std::size_t z = 0; z < m.dims[2]; ++z) {
          if (!m.at(x, y, z)) continue;
          r.at(static_cast<std::size_t>(static_cast<long>(x) - origin[0]),
               static_cast<std::size_t>(static_cast<long>(y) - origin[1]),
               static_cast<std::size_t>(static_cast<long>(z) - origin[2])) = m.at(x, y, z);
        }
    *targets[ch] = std::move(r);
  }
  return out;
}

Mask threshold(std::span<const double> values, Dims3 dims, double level) {
  Mask m(dims);
  if (values.size() != m.size()) throw ShapeError("threshold: value count does not match grid");
  for (std::size_t i = 0; i < m.size(); ++i) m.data[i] = values[i] >= level;
  return m;
}

namespace {

using Point2 = std::array<long, 2>;

long cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Andrew's monotone chain; counter-clockwise, collinear points dropped.
std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point2> h(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
    h[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i > 0; --i) {
    while (k >= lower && cross(h[k - 2], h[k - 1], pts[i - 1]) <= 0) --k;
    h[k++] = pts[i - 1];
  }
  h.resize(k - 1);
  return h;
}

}  // namespace

double enclosed_volume(const Mask& wall) {
  const std::size_t X = wall.dims[0], Y = wall.dims[1], Z = wall.dims[2];
  std::size_t enclosed = 0;
  std::vector<Point2> pts;
  for (std::size_t z = 0; z < Z; ++z) {
    pts.clear();
    for (std::size_t x = 0; x < X; ++x)
      for (std::size_t y = 0; y < Y; ++y)
        if (wall.at(x, y, z)) pts.push_back({static_cast<long>(x), static_cast<long>(y)});
    const std::vector<Point2> hull = convex_hull(pts);
    if (hull.size() < 3) continue;
    for (std::size_t x = 0; x < X; ++x)
      for (std::size_t y = 0; y < Y; ++y) {
        if (wall.at(x, y, z)) continue;
        const Point2 q{static_cast<long>(x), static_cast<long>(y)};
        bool inside = true;
        for (std::size_t i = 0; i < hull.size() && inside; ++i)
          inside = cross(hull[i], hull[(i + 1) % hull.size()], q) >= 0;
        enclosed += inside;
      }
  }
  return static_cast<double>(enclosed);
}

VolumeMetrics volume_metrics(const VoxelSample& s) {
  VolumeMetrics m;
  m.lvm_ed = static_cast<double>(count_foreground(s.ed));
  m.lvm_es = static_cast<double>(count_foreground(s.es));
  m.lvcv_ed = static_cast<double>(count_foreground(s.cavity_ed));
  m.lvcv_es = static_cast<double>(count_foreground(s.cavity_es));
  m.empty_mask = m.lvm_ed == 0.0 || m.lvm_es == 0.0;
  return m;
}

VolumeMetrics volume_metrics(const Tensor& decoded, double level) {
  const Shape& s = decoded.shape();
  const bool batched = s.size() == 5 && s[0] == 1;
  if (!(s.size() == 4 || batched) || s[s.size() - 4] != 2) {
    throw ShapeError("volume_metrics expects [2,X,Y,Z] or [1,2,X,Y,Z], got " + to_string(s));
  }
  const Dims3 dims{s[s.size() - 3], s[s.size() - 2], s[s.size() - 1]};
  const std::size_t n = dims[0] * dims[1] * dims[2];
  const Mask ed = threshold(decoded.data().subspan(0, n), dims, level);
  const Mask es = threshold(decoded.data().subspan(n, n), dims, level);
  VolumeMetrics m;
  m.lvm_ed = static_cast<double>(count_foreground(ed));
  m.lvm_es = static_cast<double>(count_foreground(es));
  m.lvcv_ed = enclosed_volume(ed);
  m.lvcv_es = enclosed_volume(es);
  m.empty_mask = m.lvm_ed == 0.0 || m.lvm_es == 0.0;
  return m;
}

Tensor stack_inputs(std::span<const VoxelSample* const> samples) {
  if (samples.empty()) throw ShapeError("stack_inputs of zero samples");
  const Dims3 d = samples[0]->ed.dims;
  Tensor x(Shape{samples.size(), 2, d[0], d[1], d[2]});
  double* out = x.data().data();
  for (const VoxelSample* s : samples) {
    if (s->ed.dims != d || s->es.dims != d) throw ShapeError("stack_inputs: samples differ in grid size");
    out = std::copy(s->ed.data.begin(), s->ed.data.end(), out);
    out = std::copy(s->es.data.begin(), s->es.data.end(), out);
  }
  return x;
}

VoxelVolume to_volume(const VoxelSample& s) {
  VoxelVolume v;
  v.channels = 4;
  v.dims = s.ed.dims;
  v.data.reserve(4 * s.ed.size());
  for (const Mask* m : {&s.ed, &s.es, &s.cavity_ed, &s.cavity_es}) v.data.insert(v.data.end(), m->data.begin(), m->data.end());
  return v;
}

VoxelSample from_volume(const VoxelVolume& v) {
  if (v.channels != 4) throw FormatError("sample files carry 4 channels, found " + std::to_string(v.channels));
  VoxelSample s;
  const std::size_t n = v.channel_size();
  Mask* targets[4] = {&s.ed, &s.es, &s.cavity_ed, &s.cavity_es};
  for (std::size_t c = 0; c < 4; ++c) {
    *targets[c] = Mask(v.dims);
    for (std::size_t i = 0; i < n; ++i) targets[c]->data[i] = v.data[c * n + i] >= 0.5;
  }
  return s;
}

nlohmann::json ManifestRecord::to_json() const {
  return {{"id", id}, {"file", file}, {"label", label}, {"split", split}, {"params", params.to_json()}, {"seed", seed}};
}

ManifestRecord ManifestRecord::from_json(const nlohmann::json& j) {
  ManifestRecord r;
  r.id = j.at("id").get<std::string>();
  r.file = j.at("file").get<std::string>();
  r.label = j.at("label").get<int>();
  r.split = j.at("split").get<std::string>();
  r.params = ShapeParams::from_json(j.at("params"));
  r.seed = j.at("seed").get<std::uint64_t>();
  return r;
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be nonnegative and sum to 1");
  }
  const auto train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.train));
  const auto val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * f.val));
  if (train + val > n) throw std::invalid_argument("split fractions overflow the sample count");
  return {train, val, n - train - val};
}

std::vector<ManifestRecord> make_dataset(const fs::path& dir, std::size_t n_per_class, const SplitFractions& fractions,
                                         std::uint64_t seed, std::size_t grid_size) {
  const auto counts = split_counts(n_per_class, fractions);
  static const char* kSplits[3] = {"train", "val", "test"};
  fs::create_directories(dir / "samples");

  std::vector<ManifestRecord> records;
  for (int label = 0; label < 2; ++label) {
    for (std::size_t j = 0; j < n_per_class; ++j) {
      const std::size_t index = static_cast<std::size_t>(label) * n_per_class + j;
      const std::uint64_t sample_seed = derive_seed({seed, static_cast<std::uint64_t>(Stream::shapes), index});
      VoxelSample s = crop_pad_center(generate_sample(label, sample_seed, grid_size), grid_size);
      char id[16];
      std::snprintf(id, sizeof id, "s%05zu", index);
      s.id = id;

      ManifestRecord r;
      r.id = s.id;
      r.file = "samples/" + s.id + ".vxg";
      r.label = label;
      r.split = kSplits[j < counts[0] ? 0 : j < counts[0] + counts[1] ? 1 : 2];
      r.params = s.params;
      r.seed = sample_seed;
      write_vxg(dir / r.file, to_volume(s), VxgDtype::u8);
      records.push_back(std::move(r));
    }
  }
  for (const char* split : kSplits) {
    std::ofstream out(dir / (std::string(split) + ".jsonl"), std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
    for (const ManifestRecord& r : records) {
      if (r.split == split) out << r.to_json().dump() << '\n';
    }
  }
  return records;
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(ManifestRecord::from_json(nlohmann::json::parse(line)));
  }
  return out;
}

VoxelSample load_sample(const fs::path& dataset_dir, const ManifestRecord& record) {
  VoxelSample s = from_volume(read_vxg(dataset_dir / record.file));
  s.id = record.id;
  s.label = record.label;
  s.params = record.params;
  s.seed = record.seed;
  return s;
}

}  // namespace lm
