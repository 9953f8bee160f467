#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>

#include "sslgrade/error.hpp"
#include "sslgrade/tensor.hpp"

namespace sslgrade {

template <class Real>
struct LossResult {
  double value = 0.0;
  Tensor4<Real> grad;
};

// Mean of squared differences over all elements; grad = 2 (pred - target) / count.
template <class Real>
LossResult<Real> mse_loss(const Tensor4<Real>& pred, const Tensor4<Real>& target) {
  if (pred.dims() != target.dims())
    throw ShapeError("mse_loss: " + dims_string(pred.dims()) + " vs " + dims_string(target.dims()));
  LossResult<Real> r{0.0, Tensor4<Real>(pred.dims())};
  if (pred.empty()) return r;
  const auto count = static_cast<double>(pred.size());
  auto p = pred.data();
  auto t = target.data();
  auto g = r.grad.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    total += d * d;
    g[i] = static_cast<Real>(2.0 * d / count);
  }
  r.value = total / count;
  return r;
}

inline constexpr double kProbabilityFloor = 1e-12;

// probs is (n, classes, 1, 1) after softmax. The returned gradient is with
// respect to the logits that produced probs: (p - onehot) / n.
template <class Real>
LossResult<Real> cross_entropy_loss(const Tensor4<Real>& probs, std::span<const int> labels) {
  if (labels.size() != probs.n())
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(probs.n()) + " rows");
  const std::size_t classes = probs.sample_size();
  LossResult<Real> r{0.0, Tensor4<Real>(probs.dims())};
  if (probs.n() == 0) return r;
  const auto n = static_cast<double>(probs.n());
  double total = 0.0;
  for (std::size_t i = 0; i < probs.n(); ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw ShapeError("cross_entropy_loss: label " + std::to_string(label) + " out of range");
    auto p = probs.sample(i);
    total -= std::log(std::max(static_cast<double>(p[static_cast<std::size_t>(label)]), kProbabilityFloor));
    auto g = r.grad.sample(i);
    for (std::size_t c = 0; c < classes; ++c) {
      const double onehot = static_cast<std::size_t>(label) == c ? 1.0 : 0.0;
      g[c] = static_cast<Real>((static_cast<double>(p[c]) - onehot) / n);
    }
  }
  r.value = total / n;
  return r;
}

}  // namespace sslgrade
