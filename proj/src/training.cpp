#include "latentmorph/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace lm {
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive");
  if (batch < 1) throw std::invalid_argument("batch size must be at least 1");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be at least 1");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (clip_norm && !(*clip_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {{"lr", lr},
                      {"batch", batch},
                      {"max_iters", max_iters},
                      {"eval_every", eval_every},
                      {"patience", patience},
                      {"clip_norm", nullptr}};
  if (clip_norm) j["clip_norm"] = *clip_norm;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.max_iters = j.value("max_iters", c.max_iters);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.patience = j.value("patience", c.patience);
  if (j.contains("clip_norm") && !j.at("clip_norm").is_null()) c.clip_norm = j.at("clip_norm").get<double>();
  return c;
}

SplitData load_split(const fs::path& dataset_dir, const std::string& split) {
  SplitData out;
  out.records = read_manifest(dataset_dir / (split + ".jsonl"));
  out.samples.reserve(out.records.size());
  for (const ManifestRecord& r : out.records) out.samples.push_back(load_sample(dataset_dir, r));
  return out;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::uint64_t iteration, std::size_t batch, std::size_t n) {
  if (n == 0) throw std::invalid_argument("cannot draw batches from an empty training set");
  std::vector<std::size_t> out;
  out.reserve(batch);
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < batch; ++j) {
    const std::uint64_t pos = iteration * batch + j;
    const std::uint64_t epoch = pos / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::batch_order), epoch});
      for (std::size_t i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(perm[i], perm[pick(rng)]);
      }
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

EvalResult evaluate(const VaeModel& model, const std::vector<VoxelSample>& samples, std::size_t chunk) {
  if (samples.empty()) throw std::invalid_argument("cannot evaluate an empty split");
  chunk = std::max<std::size_t>(chunk, 1);
  EvalResult res;
  double dice_sum = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t stop = std::min(samples.size(), start + chunk);
    std::vector<const VoxelSample*> ptrs;
    std::vector<int> labels;
    for (std::size_t i = start; i < stop; ++i) {
      ptrs.push_back(&samples[i]);
      labels.push_back(samples[i].label);
    }
    Tape tape;
    const VaeModel::Bindings bound = model.bind(tape, false);
    const Tensor x = stack_inputs(ptrs);
    const LossTerms terms = total_loss(model, bound, tape.constant(x), labels, nullptr);
    const double w = static_cast<double>(stop - start);
    res.loss.rec += w * terms.components.rec;
    res.loss.kl += w * terms.components.kl;
    res.loss.mlp += w * terms.components.mlp;
    res.loss.total += w * terms.components.total;

    const Tensor& x_hat = terms.x_hat.value();
    const std::size_t per = x.size() / (stop - start);
    const Tensor probs = softmax(terms.logits).value();
    for (std::size_t n = 0; n < stop - start; ++n) {
      const Shape one{1, x.dim(1), x.dim(2), x.dim(3), x.dim(4)};
      const Tensor a(one, std::vector<double>(x.data().begin() + n * per, x.data().begin() + (n + 1) * per));
      const Tensor b(one, std::vector<double>(x_hat.data().begin() + n * per, x_hat.data().begin() + (n + 1) * per));
      dice_sum += dice_score(a, b);
      const std::array<double, 2> p{probs[2 * n], probs[2 * n + 1]};
      const int pred = p[1] > p[0] ? 1 : 0;
      res.probs.push_back(p);
      res.predictions.push_back(pred);
      ++res.confusion[static_cast<std::size_t>(labels[n])][static_cast<std::size_t>(pred)];
    }
  }
  const double n = static_cast<double>(samples.size());
  res.loss.rec /= n;
  res.loss.kl /= n;
  res.loss.mlp /= n;
  res.loss.total /= n;
  res.dice = dice_sum / n;
  res.accuracy = static_cast<double>(res.confusion[0][0] + res.confusion[1][1]) / n;
  return res;
}

nlohmann::json eval_report(const EvalResult& r, const std::string& split) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < 2; ++c) {
    const std::size_t tp = r.confusion[c][c];
    const std::size_t predicted = r.confusion[0][c] + r.confusion[1][c];
    const std::size_t actual = r.confusion[c][0] + r.confusion[c][1];
    nlohmann::json entry = {{"class", c}, {"support", actual}};
    entry["precision"] = predicted ? nlohmann::json(static_cast<double>(tp) / static_cast<double>(predicted)) : nlohmann::json(nullptr);
    entry["recall"] = actual ? nlohmann::json(static_cast<double>(tp) / static_cast<double>(actual)) : nlohmann::json(nullptr);
    per_class.push_back(entry);
  }
  return {{"split", split},
          {"n", r.predictions.size()},
          {"accuracy", r.accuracy},
          {"per_class", per_class},
          {"confusion_matrix", {{r.confusion[0][0], r.confusion[0][1]}, {r.confusion[1][0], r.confusion[1][1]}}},
          {"mean_dice", r.dice},
          {"loss", {{"rec", r.loss.rec}, {"kl", r.loss.kl}, {"mlp", r.loss.mlp}, {"total", r.loss.total}}}};
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainSummary train(VaeModel& model, const TrainConfig& config, std::uint64_t seed, const SplitData& train_split,
                   const SplitData& val_split, const TrainOptions& options, const std::optional<TrainState>& resume) {
  config.validate();
  if (train_split.samples.empty()) throw std::invalid_argument("training split is empty");
  fs::create_directories(options.out_dir);

  TrainSummary summary;
  TrainState& state = summary.state;
  if (resume) {
    state = *resume;
    if (state.seed != seed) {
      throw TrainingError("resume seed " + std::to_string(seed) + " differs from checkpoint seed " +
                          std::to_string(state.seed));
    }
    state.stopped_early = false;
  } else {
    state.seed = seed;
  }

  const fs::path metrics_path = options.out_dir / "metrics.csv";
  std::ofstream metrics;
  if (resume && fs::exists(metrics_path)) {
    metrics.open(metrics_path, std::ios::app);
  } else {
    metrics.open(metrics_path, std::ios::trunc);
    metrics << "iter,L_rec,L_KL,L_MLP,total,val_total,val_acc\n";
  }
  if (!metrics) throw TrainingError("cannot write " + metrics_path.string());

  const nlohmann::json train_json = config.to_json();
  auto save = [&](const std::string& file) {
    save_checkpoint(options.out_dir / file, make_checkpoint(model, state, train_json));
  };

  AdamConfig adam;
  adam.lr = config.lr;
  adam.clip_norm = config.clip_norm;
  const std::size_t n = train_split.samples.size();
  const std::size_t d = model.config().latent_dim;

  while (state.iteration < config.max_iters) {
    const std::uint64_t it = state.iteration;
    const std::vector<std::size_t> idx = batch_indices(seed, it, config.batch, n);
    std::vector<const VoxelSample*> ptrs;
    std::vector<int> labels;
    std::vector<std::uint64_t> ids;
    for (std::size_t i : idx) {
      ptrs.push_back(&train_split.samples[i]);
      labels.push_back(train_split.samples[i].label);
      ids.push_back(i);
    }
    const Tensor eps = sample_eps(seed, it, ids, d);

    Tape tape;
    const VaeModel::Bindings bound = model.bind(tape, true);
    const LossTerms terms = total_loss(model, bound, tape.constant(stack_inputs(ptrs)), labels, &eps);
    const LossComponents& c = terms.components;
    if (!std::isfinite(c.total)) {
      save("last.ckpt");
      throw TrainingError("non-finite loss at iteration " + std::to_string(it) + " (rec=" + fmt(c.rec) +
                          ", kl=" + fmt(c.kl) + ", mlp=" + fmt(c.mlp) + "); parameters before this step saved to " +
                          (options.out_dir / "last.ckpt").string());
    }
    tape.backward(terms.total);
    model.collect_grads(tape, bound);
    const double gnorm = global_grad_norm(model.parameters());
    if (!std::isfinite(gnorm)) {
      save("last.ckpt");
      throw TrainingError("non-finite gradient at iteration " + std::to_string(it) +
                          "; parameters before this step saved to " + (options.out_dir / "last.ckpt").string());
    }
    adam_step(model.parameters(), adam);
    ++state.iteration;

    metrics << state.iteration << ',' << fmt(c.rec) << ',' << fmt(c.kl) << ',' << fmt(c.mlp) << ',' << fmt(c.total);
    const bool eval_now = state.iteration % config.eval_every == 0 && !val_split.samples.empty();
    if (eval_now) {
      summary.last_eval = evaluate(model, val_split.samples, config.batch);
      const EvalResult& ev = *summary.last_eval;
      metrics << ',' << fmt(ev.loss.total) << ',' << fmt(ev.accuracy) << '\n';
      metrics.flush();
      if (ev.loss.total < state.best_val) {
        state.best_val = ev.loss.total;
        state.best_iteration = state.iteration;
        state.evals_since_best = 0;
        save("best.ckpt");
      } else {
        ++state.evals_since_best;
      }
      if (state.evals_since_best >= config.patience) state.stopped_early = true;
      save("last.ckpt");
      if (options.log) {
        *options.log << "iter " << state.iteration << " val_total " << ev.loss.total << " val_acc " << ev.accuracy
                     << " val_dice " << ev.dice << '\n';
      }
      if (state.stopped_early) break;
    } else {
      metrics << ",,\n";
    }
    if (options.log && options.log_every && state.iteration % options.log_every == 0) {
      *options.log << "iter " << state.iteration << " rec " << c.rec << " kl " << c.kl << " mlp " << c.mlp
                   << " total " << c.total << '\n';
    }
  }
  metrics.flush();
  save("last.ckpt");
  return summary;
}

}  // namespace lm
