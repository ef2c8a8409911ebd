#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentmorph/shapes.hpp"
#include "latentmorph/vae.hpp"

namespace lm {

/// probability: gradient of the target-class softmax probability (the literal
/// update rule). logit: gradient of the target-vs-other logit margin, which
/// does not vanish when the prediction saturates.
enum class GradMode { probability, logit };

enum class StopReason { threshold, max_iters };

std::string to_string(GradMode mode);
std::string to_string(StopReason reason);
GradMode parse_grad_mode(const std::string& name);

class NavigationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// d/d(mu) of the target-class score, back-propagated through the MLP only.
/// `mu` is a d-vector (shape [d] or [1, d]); the result has shape [d].
Tensor class_grad(const VaeModel& model, const Tensor& mu, int target, GradMode mode);

struct NavigationStep {
  std::size_t t = 0;
  Tensor mu;                          // [d]
  std::array<double, 2> probs{0.0, 0.0};
  Tensor decoded;                     // [2, S, S, S] soft segmentation
  VolumeMetrics volumes;              // thresholded at 0.5
};

struct NavigationOptions {
  double lambda = 0.1;
  std::size_t max_iters = 200;
  double p_stop = 0.999;
  GradMode mode = GradMode::probability;
};

struct NavigationTrace {
  std::vector<NavigationStep> steps;
  double lambda = 0.1;
  int target_class = 1;
  GradMode mode = GradMode::probability;
  StopReason stop_reason = StopReason::max_iters;
};

/// Iterates mu_t = mu_{t-1} + lambda * class_grad(mu_{t-1}) from mu0 until the
/// target probability reaches p_stop or t == max_iters. Every step is decoded
/// and measured.
NavigationTrace navigate(const VaeModel& model, const Tensor& mu0, int target, const NavigationOptions& options);

/// Writes manifest.json, steps.csv (t, p_class0, p_class1, lvm, lvcv), mu.csv
/// (t, mu_0 .. mu_{d-1}) and step_XXXX.vxg for every `every`-th step plus the
/// final one. Volumes in steps.csv are the end-diastolic ones.
void write_trace(const NavigationTrace& trace, const std::filesystem::path& dir, const nlohmann::json& metadata,
                 std::size_t every = 1);

/// Reads the mu sidecar back as rows [m, d].
std::vector<Tensor> read_trace_mus(const std::filesystem::path& dir);

}  // namespace lm
