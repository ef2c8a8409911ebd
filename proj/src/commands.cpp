#include "latentmorph/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace lm {
namespace fs = std::filesystem;

ModelConfig RunConfig::model() const {
  ModelConfig m;
  try {
    m = ModelConfig::from_preset(preset);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (latent_dim) m.latent_dim = *latent_dim;
  m.alpha = alpha;
  m.beta = beta;
  return m;
}

void RunConfig::validate() const {
  try {
    model().validate();
    train.validate();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw UsageError("loss weights must be nonnegative");
  if (n_per_class < 1) throw UsageError("n-per-class must be at least 1");
  if (target != 0 && target != 1) throw UsageError("target class must be 0 or 1");
  if (!(nav.lambda >= 0.0) || !std::isfinite(nav.lambda)) throw UsageError("lambda must be nonnegative");
  if (!(nav.p_stop > 0.0 && nav.p_stop <= 1.0)) throw UsageError("p-stop must lie in (0, 1]");
  if (k < 1) throw UsageError("k must be at least 1");
  for (const std::string& s : {split, embed_split}) {
    if (s != "train" && s != "val" && s != "test") throw UsageError("unknown split '" + s + "'");
  }
}

namespace {

void require_dir(const fs::path& dir, const std::string& what) {
  if (!fs::is_directory(dir)) throw std::runtime_error(what + " " + dir.string() + " does not exist");
}

VaeModel load_model(const RunConfig& cfg) {
  const fs::path path = resolve_checkpoint(cfg);
  return restore_model(load_checkpoint(path), cfg.model());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Eigen::MatrixXd stack_rows(const std::vector<Tensor>& rows, std::size_t d) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw std::runtime_error("latent row has dimension " + std::to_string(rows[i].size()));
    for (std::size_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

}  // namespace

fs::path resolve_checkpoint(const RunConfig& cfg) {
  if (cfg.checkpoint) {
    if (!fs::exists(*cfg.checkpoint)) throw std::runtime_error("checkpoint " + cfg.checkpoint->string() + " not found");
    return *cfg.checkpoint;
  }
  for (const char* name : {"best.ckpt", "last.ckpt"}) {
    if (fs::exists(cfg.run_dir / name)) return cfg.run_dir / name;
  }
  throw std::runtime_error("no checkpoint in " + cfg.run_dir.string() + " (expected best.ckpt or last.ckpt)");
}

std::vector<ManifestRecord> cmd_gen_data(const RunConfig& cfg) {
  cfg.validate();
  const std::size_t size = cfg.grid_size.value_or(cfg.model().input_size);
  return make_dataset(cfg.data_dir, cfg.n_per_class, SplitFractions{}, cfg.seed, size);
}

TrainSummary cmd_train(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  require_dir(cfg.data_dir, "dataset directory");
  const SplitData train_split = load_split(cfg.data_dir, "train");
  const SplitData val_split = load_split(cfg.data_dir, "val");
  TrainOptions options;
  options.out_dir = cfg.run_dir;
  options.log = log;

  if (cfg.resume) {
    const Checkpoint ckpt = load_checkpoint(*cfg.resume);
    VaeModel model = restore_model(ckpt, cfg.model());
    return train(model, cfg.train, cfg.seed, train_split, val_split, options, ckpt.state);
  }
  VaeModel model(cfg.model(), cfg.seed);
  return train(model, cfg.train, cfg.seed, train_split, val_split, options);
}

nlohmann::json cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  require_dir(cfg.data_dir, "dataset directory");
  const VaeModel model = load_model(cfg);
  const SplitData data = load_split(cfg.data_dir, cfg.split);
  nlohmann::json report = eval_report(evaluate(model, data.samples, cfg.train.batch), cfg.split);
  report["checkpoint"] = resolve_checkpoint(cfg).string();
  const fs::path out = cfg.out_dir.empty() ? cfg.run_dir : cfg.out_dir;
  fs::create_directories(out);
  std::ofstream(out / "report.json", std::ios::trunc) << report.dump(2) << '\n';
  return report;
}

NavigationTrace cmd_navigate(const RunConfig& cfg) {
  cfg.validate();
  require_dir(cfg.data_dir, "dataset directory");
  const VaeModel model = load_model(cfg);

  std::optional<VoxelSample> sample;
  std::string source;
  for (const char* split : {"train", "val", "test"}) {
    for (const ManifestRecord& r : read_manifest(cfg.data_dir / (std::string(split) + ".jsonl"))) {
      const bool match = cfg.sample_id.empty() ? r.label != cfg.target && split == cfg.split : r.id == cfg.sample_id;
      if (match) {
        sample = load_sample(cfg.data_dir, r);
        source = split;
        break;
      }
    }
    if (sample) break;
  }
  if (!sample) {
    throw std::runtime_error(cfg.sample_id.empty() ? "no sample of the source class in split " + cfg.split
                                                   : "sample '" + cfg.sample_id + "' not found");
  }
  const VoxelSample* ptr = &*sample;
  const LatentCode code = model.encode(stack_inputs({&ptr, 1}));
  NavigationOptions opts = cfg.nav;
  const NavigationTrace trace = navigate(model, code.mu, cfg.target, opts);

  const fs::path out = cfg.out_dir.empty() ? cfg.run_dir / ("nav_" + sample->id) : cfg.out_dir;
  const nlohmann::json meta = {{"sample_id", sample->id},
                               {"sample_label", sample->label},
                               {"sample_split", source},
                               {"checkpoint", resolve_checkpoint(cfg).string()},
                               {"seed", cfg.seed},
                               {"p_stop", opts.p_stop},
                               {"max_iters", opts.max_iters}};
  write_trace(trace, out, meta, cfg.every);
  return trace;
}

Embedding2D cmd_embed(const RunConfig& cfg) {
  cfg.validate();
  require_dir(cfg.data_dir, "dataset directory");
  const VaeModel model = load_model(cfg);
  const SplitData data = load_split(cfg.data_dir, cfg.embed_split);
  const std::size_t d = model.config().latent_dim;

  std::vector<Tensor> mus;
  for (std::size_t start = 0; start < data.samples.size(); start += cfg.train.batch) {
    const std::size_t stop = std::min(data.samples.size(), start + cfg.train.batch);
    std::vector<const VoxelSample*> ptrs;
    for (std::size_t i = start; i < stop; ++i) ptrs.push_back(&data.samples[i]);
    const Tensor mu = model.encode(stack_inputs(ptrs)).mu;
    for (std::size_t n = 0; n < stop - start; ++n) {
      mus.emplace_back(Shape{d}, std::vector<double>(mu.data().begin() + n * d, mu.data().begin() + (n + 1) * d));
    }
  }
  std::vector<Tensor> trace;
  if (cfg.trace_dir) {
    require_dir(*cfg.trace_dir, "trace directory");
    trace = read_trace_mus(*cfg.trace_dir);
  }
  const Embedding2D emb = embed_with_trace(stack_rows(mus, d), stack_rows(trace, d), cfg.k, cfg.weights);

  std::vector<EmbeddingPoint> points;
  for (std::size_t i = 0; i < mus.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    points.push_back({data.samples[i].id, cfg.embed_split, data.samples[i].label, emb.coords(r, 0), emb.coords(r, 1)});
  }
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(mus.size() + t);
    points.push_back({"trace_" + std::to_string(t), "trace", -1, emb.coords(r, 0), emb.coords(r, 1)});
  }
  const fs::path out = cfg.out_dir.empty() ? cfg.run_dir / "embedding" : cfg.out_dir;
  fs::create_directories(out);
  write_embedding_csv(out / "embedding.csv", points);
  write_embedding_svg(out / "plot.svg", points);
  return emb;
}

void write_embedding_csv(const fs::path& path, const std::vector<EmbeddingPoint>& points) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "point_id,source,label,x,y\n";
  for (const EmbeddingPoint& p : points) {
    out << p.id << ',' << p.source << ',';
    if (p.label >= 0) out << p.label;
    out << ',' << fmt(p.x) << ',' << fmt(p.y) << '\n';
  }
}

void write_embedding_svg(const fs::path& path, const std::vector<EmbeddingPoint>& points) {
  constexpr double kSize = 800.0, kMargin = 60.0;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const EmbeddingPoint& p : points) {
    x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  }
  const double span_x = x1 > x0 ? x1 - x0 : 1.0;
  const double span_y = y1 > y0 ? y1 - y0 : 1.0;
  auto px = [&](double x) { return kMargin + (x - x0) / span_x * (kSize - 2 * kMargin); };
  auto py = [&](double y) { return kSize - kMargin - (y - y0) / span_y * (kSize - 2 * kMargin); };

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[200];
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" viewBox=\"0 0 800 800\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"800\" fill=\"white\"/>\n"
      << "<rect x=\"60\" y=\"60\" width=\"680\" height=\"680\" fill=\"none\" stroke=\"#888888\"/>\n";
  for (const EmbeddingPoint& p : points) {
    const char* color = p.source == "trace" ? "#87cefa" : (p.label == 1 ? "#d62728" : "#2ca02c");
    std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%s\" fill=\"%s\"/>\n", px(p.x), py(p.y),
                  p.source == "trace" ? "3" : "4", color);
    out << buf;
  }
  const char* labels[3] = {"class 0 (thin wall)", "class 1 (thick wall)", "navigation trace"};
  const char* colors[3] = {"#2ca02c", "#d62728", "#87cefa"};
  for (int i = 0; i < 3; ++i) {
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"70\" y=\"%d\" width=\"10\" height=\"10\" fill=\"%s\"/>"
                  "<text x=\"86\" y=\"%d\" font-family=\"sans-serif\" font-size=\"12\">%s</text>\n",
                  12 + 16 * i, colors[i], 21 + 16 * i, labels[i]);
    out << buf;
  }
  out << "</svg>\n";
}

}  // namespace lm
