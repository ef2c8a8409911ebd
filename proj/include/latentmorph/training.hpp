#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentmorph/checkpoint.hpp"
#include "latentmorph/shapes.hpp"
#include "latentmorph/vae.hpp"

namespace lm {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 16;
  std::size_t max_iters = 2000;
  std::size_t eval_every = 200;
  std::size_t patience = 10;
  std::optional<double> clip_norm;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitData {
  std::vector<ManifestRecord> records;
  std::vector<VoxelSample> samples;
};

/// Loads `<split>.jsonl` and its voxel files from a dataset directory.
SplitData load_split(const std::filesystem::path& dataset_dir, const std::string& split);

/// Training-set positions for one iteration: consecutive slices of per-epoch
/// permutations keyed by (seed, epoch), so batches may straddle epochs.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t iteration, std::size_t batch, std::size_t n);

struct EvalResult {
  LossComponents loss;  // sample-weighted means, decoder fed with mu
  double accuracy = 0.0;
  std::array<std::array<std::size_t, 2>, 2> confusion{};  // [true][predicted]
  double dice = 0.0;                                      // mean hard Dice of the reconstruction
  std::vector<int> predictions;
  std::vector<std::array<double, 2>> probs;
};

EvalResult evaluate(const VaeModel& model, const std::vector<VoxelSample>& samples, std::size_t chunk = 16);

/// accuracy, per-class precision/recall, confusion matrix, mean Dice.
nlohmann::json eval_report(const EvalResult& result, const std::string& split);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::ostream* log = nullptr;
  std::size_t log_every = 50;
};

struct TrainSummary {
  TrainState state;
  std::optional<EvalResult> last_eval;
};

/// Runs Adam on the training split until config.max_iters total iterations,
/// validating every eval_every iterations. Writes metrics.csv, last.ckpt and
/// best.ckpt (on validation improvement) into options.out_dir. When `resume`
/// is given, continues from its state and appends to metrics.csv. A non-finite
/// loss or gradient saves the pre-step parameters to last.ckpt and throws
/// TrainingError.
TrainSummary train(VaeModel& model, const TrainConfig& config, std::uint64_t seed, const SplitData& train_split,
                   const SplitData& val_split, const TrainOptions& options,
                   const std::optional<TrainState>& resume = std::nullopt);

}  // namespace lm
