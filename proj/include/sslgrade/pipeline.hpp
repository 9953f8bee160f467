#pragma once

// Stage orchestration shared by the command-line tool and the acceptance
// suite. Every stage reads its inputs from paths in RunConfig and writes its
// artefacts into the directory it is given.

#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sslgrade/checkpoint.hpp"
#include "sslgrade/data/image.hpp"
#include "sslgrade/data/ingest.hpp"
#include "sslgrade/data/manifest.hpp"
#include "sslgrade/data/patch.hpp"
#include "sslgrade/data/synth.hpp"
#include "sslgrade/error.hpp"
#include "sslgrade/eval/metrics.hpp"
#include "sslgrade/eval/report.hpp"
#include "sslgrade/eval/tsne.hpp"
#include "sslgrade/model.hpp"
#include "sslgrade/train.hpp"

namespace sslgrade {

// Flat view of every tunable. Defaults are the published hyperparameters
// where those exist.
struct RunConfig {
  std::uint64_t seed = 0;

  std::size_t patch = 512;
  double overlap = 0.5;
  std::size_t target = 128;

  std::size_t stem_channels = 32;
  std::vector<std::size_t> block_channels{32, 64, 128, 256};
  std::size_t bottleneck_convs = 4;
  std::size_t dense_hidden = 200;

  double pretrain_lr = 5e-4;
  std::size_t pretrain_batch = 16;
  std::size_t pretrain_epochs = 30;

  double finetune_lr = 0.5;
  std::size_t finetune_batch = 8;
  std::size_t finetune_epochs = 50;
  std::size_t transfer_levels = 29;
  std::size_t patience = 10;
  double clip_norm = 0.0;

  double split_ratio = 0.8;

  double tsne_perplexity = 30.0;
  std::size_t tsne_iterations = 1000;
  double tsne_lr = 200.0;
  double tsne_exaggeration = 12.0;

  std::size_t synthetic = 8;  // patches per class for synth-data / pipeline

  std::string input;       // image directory (patchify) or dataset root
  std::string manifest;    // patch manifest CSV
  std::string cae;         // pretext checkpoint
  std::string classifier;  // classifier checkpoint
  std::string eval_split = "val";
  std::string layer = std::string(kPooledFeatures);

  PatchParams patch_params() const { return {patch, overlap, target}; }

  CaeConfig cae_config() const {
    CaeConfig c;
    c.input_size = target;
    c.stem_channels = stem_channels;
    c.block_channels = block_channels;
    c.bottleneck_channels = block_channels.empty() ? 0 : block_channels.back();
    c.bottleneck_convs = bottleneck_convs;
    return c;
  }
  ClassifierConfig head_config() const { return {dense_hidden, kGradeCount}; }

  PretextConfig pretext() const {
    PretextConfig p;
    p.learning_rate = pretrain_lr;
    p.batch_size = pretrain_batch;
    p.epochs = pretrain_epochs;
    p.seed = seed;
    return p;
  }
  DownstreamConfig downstream() const {
    DownstreamConfig d;
    d.learning_rate = finetune_lr;
    d.batch_size = finetune_batch;
    d.epochs = finetune_epochs;
    d.transfer_levels = transfer_levels;
    d.seed = seed;
    d.patience = patience;
    d.clip_norm = clip_norm;
    return d;
  }
  TsneConfig tsne() const {
    TsneConfig t;
    t.perplexity = tsne_perplexity;
    t.iterations = tsne_iterations;
    t.learning_rate = tsne_lr;
    t.early_exaggeration = tsne_exaggeration;
    t.seed = seed;
    return t;
  }
};

#define SSLGRADE_CONFIG_FIELDS(X)                                                                            \
  X(seed) X(patch) X(overlap) X(target) X(stem_channels) X(block_channels) X(bottleneck_convs) X(dense_hidden) \
  X(pretrain_lr) X(pretrain_batch) X(pretrain_epochs) X(finetune_lr) X(finetune_batch) X(finetune_epochs)    \
  X(transfer_levels) X(patience) X(clip_norm) X(split_ratio) X(tsne_perplexity) X(tsne_iterations) X(tsne_lr) \
  X(tsne_exaggeration) X(synthetic) X(input) X(manifest) X(cae) X(classifier) X(eval_split) X(layer)

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
#define X(field) j[#field] = c.field;
  SSLGRADE_CONFIG_FIELDS(X)
#undef X
  return j;
}

// Applies the keys present in j on top of c. Unknown keys are an error.
inline void merge_config(RunConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw DataError("config file must hold a flat JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    try {
#define X(field)                                 \
  if (key == #field) {                           \
    value.get_to(c.field);                       \
    known = true;                                \
  }
      SSLGRADE_CONFIG_FIELDS(X)
#undef X
    } catch (const nlohmann::json::exception& e) {
      throw DataError("config key '" + key + "': " + e.what());
    }
    if (!known) throw DataError("unknown config key '" + key + "'");
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("config file not found: " + path.string());
  RunConfig c;
  try {
    merge_config(c, nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("config file " + path.string() + ": " + e.what());
  }
  return c;
}

// Appends timestamped lines to <run_dir>/log.txt and echoes them to stderr.
class RunLog {
 public:
  RunLog() = default;
  explicit RunLog(const std::filesystem::path& file, bool echo = true)
      : out_(std::make_shared<std::ofstream>(file, std::ios::app)), echo_(echo) {}

  void operator()(const std::string& line) const {
    if (echo_) std::cerr << line << '\n';
    if (out_ && *out_) {
      *out_ << line << '\n';
      out_->flush();
    }
  }

 private:
  std::shared_ptr<std::ofstream> out_;
  bool echo_ = false;
};

// Creates a fresh run directory. An explicit path must not exist yet; with an
// empty path one is derived from root, the stage name, a timestamp and the
// seed, with a numeric suffix on collision.
inline std::filesystem::path make_run_dir(const std::filesystem::path& explicit_dir, const std::filesystem::path& root,
                                          const std::string& stage, std::uint64_t seed) {
  namespace fs = std::filesystem;
  if (!explicit_dir.empty()) {
    if (fs::exists(explicit_dir)) throw DataError("run directory already exists: " + explicit_dir.string());
    fs::create_directories(explicit_dir);
    return explicit_dir;
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const auto base = root / (stage + "-" + stamp + "-s" + std::to_string(seed));
  fs::path dir = base;
  for (int k = 2; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
  fs::create_directories(dir);
  return dir;
}

inline void write_config_snapshot(const RunConfig& c, const std::filesystem::path& dir) {
  std::ofstream out(dir / "config.json", std::ios::trunc);
  if (!out) throw DataError("cannot write config snapshot in " + dir.string());
  out << to_json(c).dump(2) << '\n';
}

namespace stage {

inline void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw DataError("missing input: no " + what + " given");
  if (!std::filesystem::exists(path)) throw DataError("missing input: " + what + " not found: " + path);
}

inline void save_model(const ModelGraph<float>& g, const CaeConfig& cfg, const ClassifierConfig& head,
                       const std::filesystem::path& path) {
  save_checkpoint(g, path);
  std::ofstream out(architecture_path(path), std::ios::trunc);
  if (!out) throw DataError("cannot write " + architecture_path(path).string());
  out << to_json(cfg, head).dump(2) << '\n';
}

// Architecture for a checkpoint: its sidecar when present, else the config.
inline std::pair<CaeConfig, ClassifierConfig> architecture_for(const std::string& ckpt, const RunConfig& c) {
  const auto side = architecture_path(ckpt);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    try {
      return architecture_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(side.string() + ": " + e.what());
    }
  }
  return {c.cae_config(), c.head_config()};
}

inline ModelGraph<float> load_classifier(const RunConfig& c) {
  require_file(c.classifier, "classifier checkpoint");
  const auto [arch, head] = architecture_for(c.classifier, c);
  auto g = build_classifier<float>(arch, head);
  load_checkpoint(g, c.classifier);
  return g;
}

inline std::vector<PatchRecord> records_in(const std::vector<PatchRecord>& all, Split s) {
  std::vector<PatchRecord> out;
  for (const auto& r : all)
    if (r.split == s) out.push_back(r);
  return out;
}

inline std::filesystem::path synth_data(const RunConfig& c, const std::filesystem::path& dir, const RunLog& log) {
  const std::size_t k = c.synthetic;
  const auto records = synth_generate({k, k, k, k}, c.seed, dir);
  const auto manifest = dir / "manifest.csv";
  write_manifest(records, manifest);
  log("synth-data: wrote " + std::to_string(records.size()) + " patches");
  return manifest;
}

inline std::filesystem::path patchify_dir(const RunConfig& c, const std::filesystem::path& dir, const RunLog& log) {
  namespace fs = std::filesystem;
  if (c.input.empty() || !fs::is_directory(c.input)) throw DataError("missing input: image directory not found: " + c.input);
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(c.input))
    if (e.is_regular_file() && is_image_file(e.path())) images.push_back(e.path());
  std::sort(images.begin(), images.end());
  const auto params = c.patch_params();
  fs::create_directories(dir / "patches");
  std::vector<PatchRecord> records;
  for (const auto& path : images) {
    Image img;
    try {
      img = read_image(path);
    } catch (const DataError& e) {
      log(std::string("patchify: skipped unreadable image: ") + e.what());
      continue;
    }
    if (img.width < params.patch_size || img.height < params.patch_size) {
      log("patchify: skipped " + path.filename().string() + " (smaller than one window)");
      continue;
    }
    for (const auto& p : patchify(img, params)) {
      const auto rel = fs::path("patches") /
                       (path.stem().string() + "_x" + std::to_string(p.x) + "_y" + std::to_string(p.y) + ".png");
      write_image(p.pixels, dir / rel);
      records.push_back({rel.generic_string(), path.stem().string(), p.x, p.y, std::nullopt, Split::unassigned});
    }
  }
  const auto manifest = dir / "manifest.csv";
  write_manifest(records, manifest);
  log("patchify: " + std::to_string(images.size()) + " images -> " + std::to_string(records.size()) + " patches");
  return manifest;
}

// Rewrites patch paths relative to a manifest that will live in to_dir.
inline std::vector<PatchRecord> relocate(const std::vector<PatchRecord>& records, const std::filesystem::path& from,
                                         const std::filesystem::path& to_dir) {
  std::vector<PatchRecord> out = records;
  for (auto& r : out)
    r.patch_path = std::filesystem::relative(std::filesystem::absolute(resolve_patch_path(from, r)),
                                             std::filesystem::absolute(to_dir))
                       .generic_string();
  return out;
}

inline std::filesystem::path split(const RunConfig& c, const std::filesystem::path& dir, const RunLog& log) {
  require_file(c.manifest, "manifest");
  const auto records = read_manifest(c.manifest);
  auto result = split_dataset(records, c.split_ratio, c.seed);
  for (const auto& w : result.warnings) log("split: warning: " + w);
  std::vector<PatchRecord> merged = result.train;
  merged.insert(merged.end(), result.val.begin(), result.val.end());
  const auto manifest = dir / "manifest.csv";
  write_manifest(relocate(merged, c.manifest, dir), manifest);
  log("split: " + std::to_string(result.train.size()) + " train / " + std::to_string(result.val.size()) + " val");
  return manifest;
}

inline std::filesystem::path pretrain(const RunConfig& c, const std::filesystem::path& dir, const RunLog& log) {
  require_file(c.manifest, "manifest");
  auto records = read_manifest(c.manifest);
  std::erase_if(records, [](const PatchRecord& r) { return r.split == Split::test; });
  const auto arch = c.cae_config();
  auto cae = build_cae<float>(arch);
  init_parameters(cae, c.seed);
  const auto data = load_patches(records, c.manifest, arch.input_size);
  auto cfg = c.pretext();
  const auto history = sslgrade::pretrain(cae, data, cfg, [&](const EpochRecord& e) {
    log("pretrain: epoch " + std::to_string(e.epoch) + " mse " + format_real(e.train_loss));
  });
  const auto ckpt = dir / "cae.ckpt";
  save_model(cae, arch, c.head_config(), ckpt);
  write_history_csv(history, dir / "history.csv");
  return ckpt;
}

inline std::filesystem::path transfer(const RunConfig& c, const std::filesystem::path& dir, const RunLog& log) {
  require_file(c.cae, "pretext checkpoint");
  const auto [arch, head] = architecture_for(c.cae, c);
  auto cae = build_cae<float>(arch);
  load_checkpoint(cae, c.cae);
  auto clf = build_classifier<float>(arch, head);
  init_parameters(clf, c.seed + 1);
  const auto copied = transfer_prefix(cae, clf, c.transfer_levels);
  log("transfer: copied " + std::to_string(copied) + " parameterized levels of " + std::to_string(c.transfer_levels));
  const auto ckpt = dir / "classifier.ckpt";
  save_model(clf, arch, head, ckpt);
  return ckpt;
}

inline LabeledSet<float> labeled(const std::vector<PatchRecord>& records, const std::string& manifest, std::size_t size) {
  return {load_patches(records, manifest, size), labels_of(records)};
}

inline std::filesystem::path finetune(const RunConfig& c, const std::filesystem::path& dir, const RunLog& log) {
  require_file(c.manifest, "manifest");
  auto clf = load_classifier(c);
  const auto [arch, head] = architecture_for(c.classifier, c);
  const auto records = read_manifest(c.manifest);
  const auto train_records = records_in(records, Split::train);
  if (train_records.empty()) throw DataError("finetune: manifest has no train split (run split first)");
  const auto train = labeled(train_records, c.manifest, arch.input_size);
  const auto val = labeled(records_in(records, Split::val), c.manifest, arch.input_size);
  const auto history = sslgrade::finetune(clf, train, val, c.downstream(), [&](const EpochRecord& e) {
    std::string line = "finetune: epoch " + std::to_string(e.epoch) + " loss " + format_real(e.train_loss);
    if (e.val_accuracy) line += " val_acc " + format_real(*e.val_accuracy);
    log(line);
  });
  const auto ckpt = dir / "classifier.ckpt";
  save_model(clf, arch, head, ckpt);
  write_history_csv(history, dir / "history.csv");
  return ckpt;
}

inline std::vector<PatchRecord> eval_records(const RunConfig& c) {
  require_file(c.manifest, "manifest");
  const auto records = read_manifest(c.manifest);
  const auto s = parse_split(c.eval_split);
  if (!s) throw DataError("unknown split '" + c.eval_split + "'");
  auto chosen = *s == Split::unassigned ? records : records_in(records, *s);
  if (chosen.empty()) throw DataError("manifest has no records in split '" + c.eval_split + "'");
  return chosen;
}

inline MetricsReport evaluate(const RunConfig& c, const std::filesystem::path& dir, const RunLog& log) {
  require_file(c.classifier, "classifier checkpoint");
  const auto records = eval_records(c);
  const auto clf = load_classifier(c);
  const auto set = labeled(records, c.manifest, clf.input_dims()[1]);
  const auto probs = predict(clf, set.x);
  const auto pred = argmax_rows(probs);
  const auto cm = confusion(set.y, pred, kGradeCount);
  const auto f1 = f1_scores(cm);
  for (auto k : f1.degenerate) log("eval: warning: class " + std::string(kGradeNames[k]) + " has an empty row or column");
  const auto r = make_report(cm);
  write_metrics(r, dir);
  log("eval: accuracy " + format_real(r.accuracy) + " kappa " + format_real(r.kappa_quadratic));
  return r;
}

inline TsneResult embed(const RunConfig& c, const std::filesystem::path& dir, const RunLog& log) {
  require_file(c.classifier, "classifier checkpoint");
  const auto records = eval_records(c);
  const auto clf = load_classifier(c);
  const auto x = load_patches(records, c.manifest, clf.input_dims()[1]);
  const auto feats = extract_features(clf, x, c.layer);
  std::vector<double> f(feats.data().begin(), feats.data().end());
  const auto t = sslgrade::tsne(f, feats.n(), feats.c(), c.tsne());
  for (const auto& w : t.warnings) log("embed: warning: " + w);
  std::vector<int> labels;
  for (const auto& r : records) labels.push_back(r.label ? static_cast<int>(*r.label) : -1);
  write_embedding(t, labels, dir);
  log("embed: " + std::to_string(t.n) + " points, final KL " + format_real(t.kl_history.back()));
  return t;
}

}  // namespace stage

// synth-data -> split -> pretrain -> transfer -> finetune -> eval -> embed,
// each stage in its own subdirectory of dir.
inline MetricsReport run_pipeline(RunConfig c, const std::filesystem::path& dir, const RunLog& log) {
  namespace fs = std::filesystem;
  for (const char* sub : {"synth", "split", "pretrain", "transfer", "finetune", "eval"}) fs::create_directories(dir / sub);
  c.manifest = stage::synth_data(c, dir / "synth", log).string();
  c.manifest = stage::split(c, dir / "split", log).string();
  c.cae = stage::pretrain(c, dir / "pretrain", log).string();
  c.classifier = stage::transfer(c, dir / "transfer", log).string();
  c.classifier = stage::finetune(c, dir / "finetune", log).string();
  const auto metrics = stage::evaluate(c, dir / "eval", log);
  stage::embed(c, dir / "eval", log);
  return metrics;
}

}  // namespace sslgrade
