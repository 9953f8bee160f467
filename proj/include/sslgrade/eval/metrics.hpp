#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sslgrade/error.hpp"

namespace sslgrade {

// K x K counts, rows = true grade, columns = predicted grade.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 4) : k_(classes), counts_(classes * classes, 0) {}
  ConfusionMatrix(std::size_t classes, std::vector<std::int64_t> counts) : k_(classes), counts_(std::move(counts)) {
    if (counts_.size() != k_ * k_) throw ShapeError("confusion matrix needs K*K counts");
    for (auto c : counts_)
      if (c < 0) throw ShapeError("confusion matrix counts must be non-negative");
  }

  std::size_t classes() const { return k_; }
  std::int64_t& operator()(std::size_t truth, std::size_t pred) { return counts_[truth * k_ + pred]; }
  std::int64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::int64_t row_sum(std::size_t r) const {
    std::int64_t t = 0;
    for (std::size_t c = 0; c < k_; ++c) t += (*this)(r, c);
    return t;
  }
  std::int64_t col_sum(std::size_t c) const {
    std::int64_t t = 0;
    for (std::size_t r = 0; r < k_; ++r) t += (*this)(r, c);
    return t;
  }
  std::int64_t trace() const {
    std::int64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += (*this)(i, i);
    return t;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::int64_t> counts_;
};

inline ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes = 4) {
  if (truth.size() != pred.size())
    throw ShapeError("confusion: " + std::to_string(truth.size()) + " labels vs " + std::to_string(pred.size()) +
                     " predictions");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (int v : {truth[i], pred[i]})
      if (v < 0 || static_cast<std::size_t>(v) >= classes)
        throw ShapeError("confusion: label " + std::to_string(v) + " out of range");
    ++cm(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i]));
  }
  return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ShapeError("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

struct F1Scores {
  std::vector<double> per_class;
  double macro = 0.0;
  // Classes whose precision or recall was 0/0 and defaulted to 0.
  std::vector<std::size_t> degenerate;
};

inline F1Scores f1_scores(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ShapeError("f1 of an empty confusion matrix");
  F1Scores out;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto tp = static_cast<double>(cm(c, c));
    const auto predicted = static_cast<double>(cm.col_sum(c));
    const auto actual = static_cast<double>(cm.row_sum(c));
    const double precision = predicted > 0 ? tp / predicted : 0.0;
    const double recall = actual > 0 ? tp / actual : 0.0;
    if (predicted == 0 || actual == 0) out.degenerate.push_back(c);
    const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    out.per_class.push_back(f1);
    out.macro += f1;
  }
  out.macro /= static_cast<double>(cm.classes());
  return out;
}

// Cohen's kappa with weights (i - j)^2 / (K - 1)^2.
inline double quadratic_kappa(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  const auto total = static_cast<double>(cm.total());
  if (total <= 0) throw ShapeError("kappa of an empty confusion matrix");
  if (k < 2) throw ShapeError("kappa needs at least two classes");
  std::vector<double> rows(k), cols(k);
  for (std::size_t i = 0; i < k; ++i) {
    rows[i] = static_cast<double>(cm.row_sum(i)) / total;
    cols[i] = static_cast<double>(cm.col_sum(i)) / total;
  }
  const double norm = static_cast<double>((k - 1) * (k - 1));
  double observed = 0.0, expected = 0.0;
  bool diagonal = true;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      const double w = d * d / norm;
      observed += w * static_cast<double>(cm(i, j)) / total;
      expected += w * rows[i] * cols[j];
      if (i != j && cm(i, j) != 0) diagonal = false;
    }
  if (expected == 0.0) {
    if (diagonal) return 1.0;
    throw NumericError("kappa undefined: degenerate marginals");
  }
  return 1.0 - observed / expected;
}

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<double> f1_per_class;
  double f1_macro = 0.0;
  double kappa_quadratic = 0.0;
  ConfusionMatrix confusion{4};

  bool operator==(const MetricsReport&) const = default;
};

inline MetricsReport make_report(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.confusion = cm;
  r.accuracy = accuracy(cm);
  const auto f1 = f1_scores(cm);
  r.f1_per_class = f1.per_class;
  r.f1_macro = f1.macro;
  r.kappa_quadratic = quadratic_kappa(cm);
  return r;
}

}  // namespace sslgrade
