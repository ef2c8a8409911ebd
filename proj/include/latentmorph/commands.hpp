#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentmorph/embedding.hpp"
#include "latentmorph/navigation.hpp"
#include "latentmorph/training.hpp"

namespace lm {

/// Invalid settings; the CLI maps it to exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path run_dir = "run";
  std::filesystem::path out_dir;  // navigate / embed output; eval report path
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> resume;
  std::optional<std::filesystem::path> trace_dir;

  std::string preset = "desk32";
  std::optional<std::size_t> latent_dim;
  double alpha = 0.1;
  double beta = 1.0;
  std::uint64_t seed = 42;

  std::size_t n_per_class = 160;
  std::optional<std::size_t> grid_size;

  TrainConfig train;
  std::string split = "test";

  std::string sample_id;
  int target = 1;
  NavigationOptions nav;
  std::size_t every = 1;

  std::size_t k = 10;
  WeightMode weights = WeightMode::heat;
  std::string embed_split = "train";

  ModelConfig model() const;
  /// Throws UsageError on invalid rates, sizes or names.
  void validate() const;
};

std::vector<ManifestRecord> cmd_gen_data(const RunConfig& cfg);
TrainSummary cmd_train(const RunConfig& cfg, std::ostream* log = nullptr);
nlohmann::json cmd_eval(const RunConfig& cfg);
NavigationTrace cmd_navigate(const RunConfig& cfg);
Embedding2D cmd_embed(const RunConfig& cfg);

/// Checkpoint named by cfg.checkpoint, else run_dir/best.ckpt, else run_dir/last.ckpt.
std::filesystem::path resolve_checkpoint(const RunConfig& cfg);

struct EmbeddingPoint {
  std::string id;
  std::string source;  // "train" / "test" / ... or "trace"
  int label = -1;      // -1 for trace points
  double x = 0.0;
  double y = 0.0;
};

void write_embedding_csv(const std::filesystem::path& path, const std::vector<EmbeddingPoint>& points);
/// 800x800 scatter: class 0 green, class 1 red, trace light blue; one circle
/// per point and a text legend.
void write_embedding_svg(const std::filesystem::path& path, const std::vector<EmbeddingPoint>& points);

}  // namespace lm
