// sslgrader: command-line front end for the self-supervised grading pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sslgrade/pipeline.hpp"

namespace {

using sslgrade::RunConfig;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Options write into `staged`; only options actually given on the command line
// are copied over the defaults + config-file view.
struct FlagSet {
  RunConfig staged;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&, const RunConfig&)>>> bindings;
  std::string config_file;
  std::string run_dir;
  std::string runs_root = "runs";

  template <class T>
  CLI::Option* add(CLI::App* app, const std::string& names, T RunConfig::*field, const std::string& help) {
    auto* opt = app->add_option(names, staged.*field, help);
    if constexpr (std::is_same_v<T, std::vector<std::size_t>>) opt->delimiter(',');
    bindings.emplace_back(opt, [field](RunConfig& dst, const RunConfig& src) { dst.*field = src.*field; });
    return opt;
  }

  RunConfig resolve() const {
    RunConfig c = config_file.empty() ? RunConfig{} : sslgrade::load_config(config_file);
    for (const auto& [opt, apply] : bindings)
      if (opt->count() > 0) apply(c, staged);
    return c;
  }
};

void add_run_flags(CLI::App* app, FlagSet& f) {
  app->add_option("--config", f.config_file, "flat JSON config file (flags override it)");
  app->add_option("--run-dir", f.run_dir, "output directory (must not exist)");
  app->add_option("--runs-root", f.runs_root, "parent of auto-named run directories");
  f.add(app, "--seed", &RunConfig::seed, "random seed");
}

void add_arch_flags(CLI::App* app, FlagSet& f) {
  f.add(app, "--target", &RunConfig::target, "model input size in pixels");
  f.add(app, "--stem", &RunConfig::stem_channels, "stem channel count");
  f.add(app, "--blocks", &RunConfig::block_channels, "encoder block widths, comma separated");
  f.add(app, "--bottleneck-convs", &RunConfig::bottleneck_convs, "convs in the residual bottleneck");
  f.add(app, "--dense", &RunConfig::dense_hidden, "hidden width of the dense head");
}

void add_pretrain_flags(CLI::App* app, FlagSet& f, bool short_names) {
  f.add(app, short_names ? "--lr,--pretrain-lr" : "--pretrain-lr", &RunConfig::pretrain_lr, "Adam learning rate");
  f.add(app, short_names ? "--batch,--pretrain-batch" : "--pretrain-batch", &RunConfig::pretrain_batch, "batch size");
  f.add(app, short_names ? "--epochs,--pretrain-epochs" : "--pretrain-epochs", &RunConfig::pretrain_epochs, "epochs");
}

void add_finetune_flags(CLI::App* app, FlagSet& f, bool short_names) {
  f.add(app, short_names ? "--lr,--finetune-lr" : "--finetune-lr", &RunConfig::finetune_lr, "SGD learning rate");
  f.add(app, short_names ? "--batch,--finetune-batch" : "--finetune-batch", &RunConfig::finetune_batch, "batch size");
  f.add(app, short_names ? "--epochs,--finetune-epochs" : "--finetune-epochs", &RunConfig::finetune_epochs, "epochs");
  f.add(app, "--patience", &RunConfig::patience, "early-stopping patience on validation loss (0 = off)");
  f.add(app, "--clip-norm", &RunConfig::clip_norm, "global gradient norm cap (0 = off)");
}

void add_tsne_flags(CLI::App* app, FlagSet& f) {
  f.add(app, "--perplexity", &RunConfig::tsne_perplexity, "t-SNE perplexity");
  f.add(app, "--tsne-iterations", &RunConfig::tsne_iterations, "t-SNE iterations");
  f.add(app, "--tsne-lr", &RunConfig::tsne_lr, "t-SNE learning rate");
  f.add(app, "--exaggeration", &RunConfig::tsne_exaggeration, "t-SNE early exaggeration");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised histopathology patch grading"};
  app.require_subcommand(1);
  FlagSet flags;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic labelled patch set");
  add_run_flags(synth, flags);
  flags.add(synth, "--per-class,--synthetic", &RunConfig::synthetic, "patches per grade");

  auto* patchify = app.add_subcommand("patchify", "sliding-window patch extraction from a directory of images");
  add_run_flags(patchify, flags);
  flags.add(patchify, "--input", &RunConfig::input, "directory of PNG/PPM/JPEG images")->required();
  flags.add(patchify, "--patch", &RunConfig::patch, "window size in pixels");
  flags.add(patchify, "--overlap", &RunConfig::overlap, "window overlap fraction in [0,1)");
  flags.add(patchify, "--target", &RunConfig::target, "resized patch size");

  auto* split = app.add_subcommand("split", "stratified train/val split of a manifest");
  add_run_flags(split, flags);
  flags.add(split, "--manifest", &RunConfig::manifest, "input manifest CSV");
  flags.add(split, "--ratio", &RunConfig::split_ratio, "train fraction per class");

  auto* pretrain = app.add_subcommand("pretrain", "train the autoencoder on patch reconstruction");
  add_run_flags(pretrain, flags);
  add_arch_flags(pretrain, flags);
  add_pretrain_flags(pretrain, flags, true);
  flags.add(pretrain, "--manifest", &RunConfig::manifest, "patch manifest CSV");

  auto* transfer = app.add_subcommand("transfer", "build a classifier from a pretext checkpoint");
  add_run_flags(transfer, flags);
  add_arch_flags(transfer, flags);
  flags.add(transfer, "--cae", &RunConfig::cae, "pretext checkpoint");
  flags.add(transfer, "--levels", &RunConfig::transfer_levels, "manifest levels to copy");

  auto* finetune = app.add_subcommand("finetune", "train the classifier on labelled patches");
  add_run_flags(finetune, flags);
  add_arch_flags(finetune, flags);
  add_finetune_flags(finetune, flags, true);
  flags.add(finetune, "--manifest", &RunConfig::manifest, "split manifest CSV");
  flags.add(finetune, "--classifier", &RunConfig::classifier, "classifier checkpoint");

  auto* eval = app.add_subcommand("eval", "metrics and confusion matrix on one split");
  add_run_flags(eval, flags);
  add_arch_flags(eval, flags);
  flags.add(eval, "--manifest", &RunConfig::manifest, "split manifest CSV");
  flags.add(eval, "--classifier", &RunConfig::classifier, "classifier checkpoint");
  flags.add(eval, "--split", &RunConfig::eval_split, "train|val|test|unassigned (all)");

  auto* embed = app.add_subcommand("embed", "t-SNE embedding of classifier features");
  add_run_flags(embed, flags);
  add_arch_flags(embed, flags);
  add_tsne_flags(embed, flags);
  flags.add(embed, "--manifest", &RunConfig::manifest, "split manifest CSV");
  flags.add(embed, "--classifier", &RunConfig::classifier, "classifier checkpoint");
  flags.add(embed, "--split", &RunConfig::eval_split, "train|val|test|unassigned (all)");
  flags.add(embed, "--layer", &RunConfig::layer, "layer whose activations are embedded");

  auto* pipeline = app.add_subcommand("pipeline", "synthetic end-to-end run of every stage");
  add_run_flags(pipeline, flags);
  add_arch_flags(pipeline, flags);
  add_pretrain_flags(pipeline, flags, false);
  add_finetune_flags(pipeline, flags, false);
  add_tsne_flags(pipeline, flags);
  flags.add(pipeline, "--synthetic", &RunConfig::synthetic, "synthetic patches per grade");
  flags.add(pipeline, "--levels", &RunConfig::transfer_levels, "manifest levels to copy");
  flags.add(pipeline, "--ratio", &RunConfig::split_ratio, "train fraction per class");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    const RunConfig cfg = flags.resolve();
    const auto dir = sslgrade::make_run_dir(flags.run_dir, flags.runs_root, name, cfg.seed);
    sslgrade::write_config_snapshot(cfg, dir);
    const sslgrade::RunLog log(dir / "log.txt");
    log(name + ": run directory " + dir.string());
    namespace st = sslgrade::stage;
    if (name == "synth-data") st::synth_data(cfg, dir, log);
    else if (name == "patchify") st::patchify_dir(cfg, dir, log);
    else if (name == "split") st::split(cfg, dir, log);
    else if (name == "pretrain") st::pretrain(cfg, dir, log);
    else if (name == "transfer") st::transfer(cfg, dir, log);
    else if (name == "finetune") st::finetune(cfg, dir, log);
    else if (name == "eval") st::evaluate(cfg, dir, log);
    else if (name == "embed") st::embed(cfg, dir, log);
    else if (name == "pipeline") sslgrade::run_pipeline(cfg, dir, log);
    std::cout << dir.string() << '\n';
    return kOk;
  } catch (const sslgrade::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const sslgrade::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const sslgrade::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
