// latentmorph: dataset generation, training, evaluation, latent navigation and
// embedding for the synthetic morphology VAE.

#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "latentmorph/commands.hpp"

namespace {

void add_model_options(CLI::App* cmd, lm::RunConfig& cfg) {
  cmd->add_option("--preset", cfg.preset, "Model preset")->check(CLI::IsMember({"desk32", "paper80"}));
  cmd->add_option("--latent-dim", cfg.latent_dim, "Override the preset latent dimension");
  cmd->add_option("--data", cfg.data_dir, "Dataset directory");
  cmd->add_option("--run", cfg.run_dir, "Run directory (checkpoints, metrics)");
}

void add_checkpoint_option(CLI::App* cmd, lm::RunConfig& cfg) {
  cmd->add_option("--checkpoint", cfg.checkpoint, "Checkpoint file (default: <run>/best.ckpt, then last.ckpt)");
}

}  // namespace

int main(int argc, char** argv) {
  lm::RunConfig cfg;
  CLI::App app{"latentmorph: VAE shape classification and latent-space navigation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file; command-line flags win");
  app.add_option("--seed", cfg.seed, "Global seed")->capture_default_str();
  app.option_defaults()->always_capture_default();

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic two-class dataset");
  gen->fallthrough();
  add_model_options(gen, cfg);
  gen->add_option("--n-per-class", cfg.n_per_class, "Samples per class");
  gen->add_option("--size", cfg.grid_size, "Grid edge length (default: preset input size)");

  auto* tr = app.add_subcommand("train", "Train the VAE and classifier head");
  tr->fallthrough();
  add_model_options(tr, cfg);
  tr->add_option("--lr", cfg.train.lr, "Adam learning rate");
  tr->add_option("--batch", cfg.train.batch, "Batch size");
  tr->add_option("--max-iters", cfg.train.max_iters, "Total training iterations");
  tr->add_option("--eval-every", cfg.train.eval_every, "Validation interval (iterations)");
  tr->add_option("--patience", cfg.train.patience, "Evaluations without improvement before stopping");
  tr->add_option("--clip-norm", cfg.train.clip_norm, "Global gradient-norm clip (off by default)");
  tr->add_option("--alpha", cfg.alpha, "KL weight");
  tr->add_option("--beta", cfg.beta, "Classifier weight");
  tr->add_option("--resume", cfg.resume, "Resume from a checkpoint")->check(CLI::ExistingFile);
  bool quiet = false;
  tr->add_flag("--quiet", quiet, "No progress output");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split, writing report.json");
  ev->fallthrough();
  add_model_options(ev, cfg);
  add_checkpoint_option(ev, cfg);
  ev->add_option("--split", cfg.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", cfg.out_dir, "Report directory (default: run directory)");

  auto* nav = app.add_subcommand("navigate", "Move a sample's latent mean toward a target class");
  nav->fallthrough();
  add_model_options(nav, cfg);
  add_checkpoint_option(nav, cfg);
  nav->add_option("--sample", cfg.sample_id, "Sample id (default: first source-class sample in --split)");
  nav->add_option("--split", cfg.split, "Split searched when --sample is absent")
      ->check(CLI::IsMember({"train", "val", "test"}));
  nav->add_option("--target", cfg.target, "Target class")->check(CLI::IsMember({0, 1}));
  nav->add_option("--lambda", cfg.nav.lambda, "Step size");
  nav->add_option("--p-stop", cfg.nav.p_stop, "Stop once the target probability reaches this");
  nav->add_option("--max-iters", cfg.nav.max_iters, "Iteration cap");
  std::string mode = "probability";
  nav->add_option("--mode", mode, "Gradient of the probability or of the logit margin")
      ->check(CLI::IsMember({"probability", "logit"}));
  nav->add_option("--every", cfg.every, "Write a voxel file every N steps");
  nav->add_option("--out", cfg.out_dir, "Trace directory (default: <run>/nav_<id>)");

  auto* emb = app.add_subcommand("embed", "Laplacian Eigenmaps of latent means, with an optional trace");
  emb->fallthrough();
  add_model_options(emb, cfg);
  add_checkpoint_option(emb, cfg);
  emb->add_option("--split", cfg.embed_split, "Split to embed")->check(CLI::IsMember({"train", "val", "test"}));
  emb->add_option("--trace", cfg.trace_dir, "Navigation trace directory")->check(CLI::ExistingDirectory);
  emb->add_option("--k", cfg.k, "Nearest neighbours");
  std::string weights = "heat";
  emb->add_option("--weights", weights, "Edge weights")->check(CLI::IsMember({"heat", "binary"}));
  emb->add_option("--out", cfg.out_dir, "Output directory (default: <run>/embedding)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  cfg.nav.mode = lm::parse_grad_mode(mode);
  cfg.weights = weights == "binary" ? lm::WeightMode::binary : lm::WeightMode::heat;

  try {
    if (*gen) {
      const auto records = lm::cmd_gen_data(cfg);
      std::cout << "wrote " << records.size() << " samples to " << cfg.data_dir.string() << '\n';
    } else if (*tr) {
      const lm::TrainSummary s = lm::cmd_train(cfg, quiet ? nullptr : &std::cerr);
      std::cout << "trained to iteration " << s.state.iteration << (s.state.stopped_early ? " (early stop)" : "")
                << "; best val_total " << s.state.best_val << " at " << s.state.best_iteration << '\n';
    } else if (*ev) {
      const auto report = lm::cmd_eval(cfg);
      std::cout << "accuracy " << report["accuracy"].get<double>() << ", mean Dice "
                << report["mean_dice"].get<double>() << '\n';
    } else if (*nav) {
      const lm::NavigationTrace trace = lm::cmd_navigate(cfg);
      const auto& last = trace.steps.back();
      std::cout << trace.steps.size() - 1 << " steps, stop: " << lm::to_string(trace.stop_reason) << ", p_target "
                << last.probs[static_cast<std::size_t>(trace.target_class)] << '\n';
    } else if (*emb) {
      const lm::Embedding2D e = lm::cmd_embed(cfg);
      std::cout << "embedded " << e.coords.rows() << " points, eigenvalues " << e.eigenvalues[0] << ", "
                << e.eigenvalues[1] << '\n';
    }
  } catch (const lm::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
