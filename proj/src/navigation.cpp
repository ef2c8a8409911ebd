#include "latentmorph/navigation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace lm {
namespace fs = std::filesystem;

std::string to_string(GradMode mode) { return mode == GradMode::probability ? "probability" : "logit"; }

std::string to_string(StopReason reason) { return reason == StopReason::threshold ? "threshold" : "max_iters"; }

GradMode parse_grad_mode(const std::string& name) {
  if (name == "probability") return GradMode::probability;
  if (name == "logit") return GradMode::logit;
  throw std::invalid_argument("unknown gradient mode '" + name + "' (expected probability or logit)");
}

namespace {

Tensor as_row(const Tensor& mu, std::size_t d) {
  if (mu.size() != d || (mu.rank() != 1 && !(mu.rank() == 2 && mu.dim(0) == 1))) {
    throw ShapeError("expected a latent vector of length " + std::to_string(d) + ", got " + to_string(mu.shape()));
  }
  return mu.reshaped(Shape{1, d});
}

}  // namespace

Tensor class_grad(const VaeModel& model, const Tensor& mu, int target, GradMode mode) {
  if (target != 0 && target != 1) throw std::invalid_argument("target class must be 0 or 1");
  const std::size_t d = model.config().latent_dim;
  Tape tape;
  const VaeModel::Bindings bound = model.bind(tape, false);
  Var m = tape.variable(as_row(mu, d));
  Var logits = model.logits(bound, m);

  Tensor pick(Shape{1, kNumClasses});
  pick[static_cast<std::size_t>(target)] = 1.0;
  Var score;
  if (mode == GradMode::probability) {
    score = sum(mul(softmax(logits), tape.constant(pick)));
  } else {
    pick[static_cast<std::size_t>(1 - target)] = -1.0;
    score = sum(mul(logits, tape.constant(pick)));
  }
  tape.backward(score);
  return tape.grad(m).reshaped(Shape{d});
}

NavigationTrace navigate(const VaeModel& model, const Tensor& mu0, int target, const NavigationOptions& options) {
  if (target != 0 && target != 1) throw std::invalid_argument("target class must be 0 or 1");
  const std::size_t d = model.config().latent_dim;
  NavigationTrace trace;
  trace.lambda = options.lambda;
  trace.target_class = target;
  trace.mode = options.mode;

  Tensor mu = as_row(mu0, d).reshaped(Shape{d});
  for (std::size_t t = 0;; ++t) {
    const Tensor row = mu.reshaped(Shape{1, d});
    const Tensor probs = model.classify(row);
    NavigationStep step;
    step.t = t;
    step.mu = mu;
    step.probs = {probs[0], probs[1]};
    step.decoded = model.decode(row).reshaped(Shape{2, model.config().input_size, model.config().input_size,
                                                    model.config().input_size});
    step.volumes = volume_metrics(step.decoded);
    trace.steps.push_back(std::move(step));

    if (probs[static_cast<std::size_t>(target)] >= options.p_stop) {
      trace.stop_reason = StopReason::threshold;
      break;
    }
    if (t == options.max_iters) {
      trace.stop_reason = StopReason::max_iters;
      break;
    }
    const Tensor grad = class_grad(model, mu, target, options.mode);
    if (!grad.all_finite()) {
      std::ostringstream msg;
      msg << "non-finite latent gradient at step " << t << " (p_target = " << probs[static_cast<std::size_t>(target)]
          << ")";
      throw NavigationError(msg.str());
    }
    for (std::size_t i = 0; i < d; ++i) mu[i] += options.lambda * grad[i];
  }
  return trace;
}

void write_trace(const NavigationTrace& trace, const fs::path& dir, const nlohmann::json& metadata, std::size_t every) {
  if (trace.steps.empty()) throw std::invalid_argument("cannot write an empty navigation trace");
  if (every == 0) every = 1;
  fs::create_directories(dir);

  nlohmann::json manifest = metadata;
  manifest["lambda"] = trace.lambda;
  manifest["target_class"] = trace.target_class;
  manifest["grad_mode"] = to_string(trace.mode);
  manifest["stop_reason"] = to_string(trace.stop_reason);
  manifest["steps"] = trace.steps.size();
  nlohmann::json files = nlohmann::json::array();

  std::ofstream steps(dir / "steps.csv", std::ios::trunc);
  std::ofstream mus(dir / "mu.csv", std::ios::trunc);
  if (!steps || !mus) throw std::runtime_error("cannot write trace files in " + dir.string());
  steps << "t,p_class0,p_class1,lvm,lvcv\n";
  const std::size_t d = trace.steps.front().mu.size();
  mus << "t";
  for (std::size_t i = 0; i < d; ++i) mus << ",mu_" << i;
  mus << '\n';

  char buf[64];
  for (const NavigationStep& s : trace.steps) {
    steps << s.t;
    for (double v : {s.probs[0], s.probs[1], s.volumes.lvm_ed, s.volumes.lvcv_ed}) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      steps << buf;
    }
    steps << '\n';
    mus << s.t;
    for (double v : s.mu.data()) {
      std::snprintf(buf, sizeof buf, ",%.17g", v);
      mus << buf;
    }
    mus << '\n';

    if (s.t % every == 0 || &s == &trace.steps.back()) {
      std::snprintf(buf, sizeof buf, "step_%04zu.vxg", s.t);
      VoxelVolume vol;
      vol.channels = 2;
      vol.dims = {s.decoded.dim(1), s.decoded.dim(2), s.decoded.dim(3)};
      vol.data = s.decoded.values();
      write_vxg(dir / buf, vol, VxgDtype::f32);
      files.push_back(buf);
    }
  }
  manifest["voxel_files"] = files;
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
}

std::vector<Tensor> read_trace_mus(const fs::path& dir) {
  std::ifstream in(dir / "mu.csv");
  if (!in) throw std::runtime_error("no mu.csv in " + dir.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<Tensor> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
    rows.emplace_back(Shape{values.size()}, std::move(values));
  }
  return rows;
}

}  // namespace lm
