#pragma once

// Two-phase training: reconstruction pretraining of the autoencoder with Adam,
// then joint fine-tuning of the transferred feature extractor and the dense
// head with SGD and cross-entropy.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sslgrade/checkpoint.hpp"
#include "sslgrade/data/manifest.hpp"
#include "sslgrade/error.hpp"
#include "sslgrade/loss.hpp"
#include "sslgrade/model.hpp"
#include "sslgrade/optim.hpp"
#include "sslgrade/random.hpp"

namespace sslgrade {

struct PretextConfig {
  double learning_rate = 5e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  AdamHyper adam;
  std::filesystem::path checkpoint;  // written after the last epoch when set
};

struct DownstreamConfig {
  double learning_rate = 0.5;
  std::size_t batch_size = 8;
  std::size_t epochs = 50;
  std::size_t transfer_levels = 29;
  std::uint64_t seed = 0;
  std::size_t patience = 10;  // epochs without validation-loss improvement; 0 disables
  double clip_norm = 0.0;     // global gradient norm cap; 0 disables
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_accuracy;

  bool operator==(const EpochRecord&) const = default;
};

using History = std::vector<EpochRecord>;

inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_history_csv(const History& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write history " + path.string());
  out << "epoch,train_loss,val_loss,val_accuracy\n";
  for (const auto& e : history) {
    out << e.epoch << ',' << format_real(e.train_loss) << ',' << (e.val_loss ? format_real(*e.val_loss) : "") << ','
        << (e.val_accuracy ? format_real(*e.val_accuracy) : "") << '\n';
  }
}

// ---------------------------------------------------------------------------
// Stratified split

struct SplitResult {
  std::vector<PatchRecord> train;
  std::vector<PatchRecord> val;
  std::vector<std::string> warnings;
};

// Per class, floor(ratio * count) records go to train and the rest to val.
// Classes are shuffled independently from one seeded stream; each output
// keeps the input order.
inline SplitResult split_dataset(const std::vector<PatchRecord>& records, double ratio = 0.8, std::uint64_t seed = 0) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw DataError("split ratio must be in [0, 1]");
  std::array<std::vector<std::size_t>, kGradeCount> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) throw DataError("split requires labels; record " + records[i].patch_path + " has none");
    by_class[static_cast<std::size_t>(*records[i].label)].push_back(i);
  }
  SplitResult out;
  Rng rng(seed);
  std::vector<char> to_train(records.size(), 0);
  for (std::size_t g = 0; g < kGradeCount; ++g) {
    auto& idx = by_class[g];
    if (idx.empty()) {
      out.warnings.push_back("class " + std::string(kGradeNames[g]) + " has 0 records");
      continue;
    }
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(idx.size()) + 1e-9));
    for (std::size_t k = 0; k < n_train; ++k) to_train[idx[k]] = 1;
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    PatchRecord r = records[i];
    r.split = to_train[i] ? Split::train : Split::val;
    (to_train[i] ? out.train : out.val).push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Helpers

template <class Real>
Tensor4<Real> gather(const Tensor4<Real>& data, std::span<const std::size_t> rows) {
  Tensor4<Real> out(rows.size(), data.c(), data.h(), data.w());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = data.sample(rows[i]);
    std::copy(src.begin(), src.end(), out.sample(i).begin());
  }
  return out;
}

inline void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError(what + " is not finite");
}

// Class probabilities (n, classes) in batches of batch_size.
template <class Real>
Tensor4<Real> predict(const ModelGraph<Real>& classifier, const Tensor4<Real>& x, std::size_t batch_size = 16) {
  const std::size_t classes = classifier.output_layer().kind == LayerKind::softmax
                                  ? classifier.find(kLogits)->dense->out
                                  : 0;
  if (classes == 0) throw ShapeError("predict requires a classifier graph");
  Tensor4<Real> out = Tensor4<Real>::matrix(x.n(), classes);
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < x.n(); start += batch_size) {
    rows.resize(std::min(batch_size, x.n() - start));
    std::iota(rows.begin(), rows.end(), start);
    const auto acts = forward(classifier, gather(x, rows), Mode::infer);
    const auto& probs = acts.output();
    std::copy(probs.data().begin(), probs.data().end(), out.sample(start).begin());
  }
  return out;
}

template <class Real>
std::vector<int> argmax_rows(const Tensor4<Real>& probs) {
  std::vector<int> out(probs.n());
  for (std::size_t i = 0; i < probs.n(); ++i) {
    auto row = probs.sample(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

template <class Real>
double accuracy_of(const Tensor4<Real>& probs, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(probs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Pretext phase

using EpochCallback = std::function<void(const EpochRecord&)>;

template <class Real>
History pretrain(ModelGraph<Real>& cae, const Tensor4<Real>& data, const PretextConfig& cfg,
                 const EpochCallback& on_epoch = {}) {
  if (data.n() == 0) throw DataError("pretrain: empty dataset");
  if (!(cfg.learning_rate > 0.0)) throw DataError("pretrain: learning rate must be positive");
  if (cfg.batch_size == 0) throw DataError("pretrain: batch size must be at least 1");
  Rng rng(cfg.seed);
  auto adam = make_adam_state(cae, cfg.adam);
  std::vector<std::size_t> order(data.n());
  std::iota(order.begin(), order.end(), 0);
  History history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const auto batch = gather(data, rows);
      const auto acts = forward(cae, batch, Mode::train);
      auto loss = mse_loss(acts.output(), batch);
      require_finite(loss.value, "reconstruction loss at epoch " + std::to_string(epoch));
      const auto grads = backward(cae, acts, loss.grad);
      adam_step(cae, grads.params, adam, cfg.learning_rate);
      total += loss.value * static_cast<double>(rows.size());
    }
    EpochRecord rec{epoch, total / static_cast<double>(data.n()), std::nullopt, std::nullopt};
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!cfg.checkpoint.empty()) save_checkpoint(cae, cfg.checkpoint);
  return history;
}

// ---------------------------------------------------------------------------
// Downstream phase

template <class Real>
struct LabeledSet {
  Tensor4<Real> x;
  std::vector<int> y;
};

template <class Real>
std::pair<double, double> evaluate_loss_accuracy(const ModelGraph<Real>& classifier, const LabeledSet<Real>& set,
                                                 std::size_t batch_size) {
  const auto probs = predict(classifier, set.x, batch_size);
  const auto ce = cross_entropy_loss(probs, std::span<const int>(set.y));
  return {ce.value, accuracy_of(probs, set.y)};
}

// Updates every parameter of the classifier, feature extractor included.
// Early stopping watches validation loss when a validation set is given.
template <class Real>
History finetune(ModelGraph<Real>& classifier, const LabeledSet<Real>& train, const LabeledSet<Real>& val,
                 const DownstreamConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (train.x.n() == 0) throw DataError("finetune: empty training split");
  if (train.y.size() != train.x.n() || val.y.size() != val.x.n())
    throw DataError("finetune: label count does not match patch count");
  if (!(cfg.learning_rate > 0.0)) throw DataError("finetune: learning rate must be positive");
  if (cfg.batch_size == 0) throw DataError("finetune: batch size must be at least 1");
  const std::size_t classes = classifier.find(kLogits)->dense->out;
  for (const auto* set : {&train, &val})
    for (int label : set->y)
      if (label < 0 || static_cast<std::size_t>(label) >= classes)
        throw DataError("finetune: label " + std::to_string(label) + " out of range");

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train.x.n());
  std::iota(order.begin(), order.end(), 0);
  History history;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  BackwardOptions from_logits;
  from_logits.start = std::string(kLogits);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const auto batch = gather(train.x, rows);
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(train.y[r]);
      const auto acts = forward(classifier, batch, Mode::train);
      auto loss = cross_entropy_loss(acts.output(), std::span<const int>(labels));
      require_finite(loss.value, "classification loss at epoch " + std::to_string(epoch));
      auto grads = backward(classifier, acts, loss.grad, from_logits);
      if (cfg.clip_norm > 0.0) clip_by_global_norm(grads.params, cfg.clip_norm);
      sgd_step(classifier, grads.params, cfg.learning_rate);
      total += loss.value * static_cast<double>(rows.size());
    }
    EpochRecord rec{epoch, total / static_cast<double>(train.x.n()), std::nullopt, std::nullopt};
    if (val.x.n() > 0) {
      const auto [vl, va] = evaluate_loss_accuracy(classifier, val, cfg.batch_size);
      rec.val_loss = vl;
      rec.val_accuracy = va;
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss && cfg.patience > 0) {
      if (*rec.val_loss < best_val) {
        best_val = *rec.val_loss;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  return history;
}

}  // namespace sslgrade
