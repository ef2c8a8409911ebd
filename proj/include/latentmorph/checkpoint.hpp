#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentmorph/vae.hpp"

namespace lm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loop state needed to resume training exactly. Random streams are keyed by
/// (seed, iteration), so these counters are the whole generator state.
struct TrainState {
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  double best_val = std::numeric_limits<double>::infinity();
  std::uint64_t best_iteration = 0;
  std::uint64_t evals_since_best = 0;
  bool stopped_early = false;
};

struct Checkpoint {
  ModelConfig model;
  nlohmann::json train_config = nlohmann::json::object();
  TrainState state;
  std::vector<Parameter> params;
};

/// Layout (little-endian): "LMCK", u32 version, u64 length + JSON header
/// (model config, train config), loop state, u32 parameter count, then per
/// parameter: u32 name length, name, u32 rank, u64 dims, f64 value, f64 adam_m,
/// f64 adam_v, u64 step count.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const VaeModel& model, const TrainState& state,
                           const nlohmann::json& train_config = nlohmann::json::object());

/// Rebuilds a model; `expected`, when given, must describe the same
/// architecture (otherwise the first mismatched parameter is named).
VaeModel restore_model(const Checkpoint& ckpt);
VaeModel restore_model(const Checkpoint& ckpt, const ModelConfig& expected);

}  // namespace lm
