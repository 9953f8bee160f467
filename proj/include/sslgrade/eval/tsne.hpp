#pragma once

// Exact (all-pairs) t-SNE. Per-point Gaussian bandwidths are calibrated by
// bisection so that each conditional distribution has entropy ln(perplexity);
// the symmetrized affinities are matched by a Student-t embedding optimised
// with momentum gradient descent and per-coordinate gains.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sslgrade/error.hpp"
#include "sslgrade/random.hpp"

namespace sslgrade {

struct TsneConfig {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  std::size_t exaggeration_iterations = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  std::size_t output_dims = 2;
  double init_std = 1e-4;
  std::uint64_t seed = 0;
  double entropy_tolerance = 1e-5;
  std::size_t max_bisection_steps = 50;
};

struct Calibration {
  std::vector<double> probs;  // conditional p_{j|i} over the given neighbours
  double beta = 1.0;          // 1 / (2 sigma^2)
  double entropy = 0.0;       // natural-log entropy of probs
  std::size_t steps = 0;
};

// Calibrates one row of squared distances to the other points.
inline Calibration calibrate_conditional(std::span<const double> sq_dist, double perplexity, double tolerance = 1e-5,
                                         std::size_t max_steps = 50) {
  if (sq_dist.empty()) throw ShapeError("calibration needs at least one neighbour");
  if (!(perplexity > 0.0)) throw ShapeError("perplexity must be positive");
  const double target = std::log(perplexity);
  const double d_min = *std::min_element(sq_dist.begin(), sq_dist.end());
  double mean = 0.0;
  for (double d : sq_dist) mean += d - d_min;
  mean /= static_cast<double>(sq_dist.size());

  Calibration out;
  out.probs.resize(sq_dist.size());
  auto evaluate = [&](double beta) {
    double sum = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < sq_dist.size(); ++j) {
      const double shifted = sq_dist[j] - d_min;
      out.probs[j] = std::exp(-beta * shifted);
      sum += out.probs[j];
      weighted += shifted * out.probs[j];
    }
    for (auto& p : out.probs) p /= sum;
    // H = ln(sum) + beta * E[d] with distances shifted by d_min.
    return std::log(sum) + beta * weighted / sum;
  };

  double beta = mean > 0.0 ? 1.0 / mean : 1.0;
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  double h = evaluate(beta);
  for (out.steps = 0; out.steps < max_steps; ++out.steps) {
    const double diff = h - target;
    if (std::abs(diff) < tolerance) break;
    if (diff > 0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
    } else {
      hi = beta;
      beta = 0.5 * (beta + lo);
    }
    h = evaluate(beta);
  }
  out.beta = beta;
  out.entropy = h;
  return out;
}

struct TsneResult {
  std::vector<double> coords;  // n x output_dims, row-major
  std::size_t n = 0;
  std::size_t dims = 2;
  std::vector<double> kl_history;
  std::vector<double> entropies;  // calibrated conditional entropy per point
  double perplexity = 0.0;        // value actually used after clamping
  std::vector<std::string> warnings;

  double at(std::size_t i, std::size_t d) const { return coords[i * dims + d]; }
};

// features: n x d row-major.
inline TsneResult tsne(std::span<const double> features, std::size_t n, std::size_t d, const TsneConfig& cfg = {}) {
  if (n < 4) throw ShapeError("tsne needs at least 4 points, got " + std::to_string(n));
  if (d == 0 || features.size() != n * d) throw ShapeError("tsne feature matrix has the wrong size");
  for (double v : features)
    if (!std::isfinite(v)) throw NumericError("tsne: non-finite input feature");
  if (cfg.output_dims == 0) throw ShapeError("tsne output_dims must be positive");

  TsneResult out;
  out.n = n;
  out.dims = cfg.output_dims;
  out.perplexity = cfg.perplexity;
  const double limit = static_cast<double>(n - 1) / 3.0;
  if (!(cfg.perplexity < limit)) {
    out.perplexity = std::nextafter(limit, 0.0);
    out.warnings.push_back("perplexity " + std::to_string(cfg.perplexity) + " clamped to " +
                           std::to_string(out.perplexity) + " for " + std::to_string(n) + " points");
  }

  // Centre and scale to unit max-abs so bandwidths are scale free.
  std::vector<double> x(features.begin(), features.end());
  for (std::size_t k = 0; k < d; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[i * d + k];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) x[i * d + k] -= mean;
  }
  double max_abs = 0.0;
  for (double v : x) max_abs = std::max(max_abs, std::abs(v));
  if (max_abs > 0.0)
    for (double& v : x) v /= max_abs;

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = x[i * d + k] - x[j * d + k];
        s += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = s;
    }

  std::vector<double> p(n * n, 0.0);
  std::vector<double> row(n - 1);
  out.entropies.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0, k = 0; j < n; ++j)
      if (j != i) row[k++] = dist[i * n + j];
    const auto cal = calibrate_conditional(row, out.perplexity, cfg.entropy_tolerance, cfg.max_bisection_steps);
    out.entropies[i] = cal.entropy;
    for (std::size_t j = 0, k = 0; j < n; ++j)
      if (j != i) p[i * n + j] = cal.probs[k++];
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
      p[i * n + j] = p[j * n + i] = s;
    }

  const std::size_t dims = cfg.output_dims;
  Rng rng(cfg.seed);
  std::vector<double> y(n * dims), update(n * dims, 0.0), gains(n * dims, 1.0), grad(n * dims);
  for (auto& v : y) v = cfg.init_std * rng.normal();

  std::vector<double> num(n * n, 0.0);
  out.kl_history.reserve(cfg.iterations);
  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    const double exaggeration = iter < cfg.exaggeration_iterations ? cfg.early_exaggeration : 1.0;
    // Velocity and gains tuned to the exaggerated objective overshoot once it
    // is lifted; the second phase starts from rest.
    if (iter == cfg.exaggeration_iterations && iter > 0) {
      std::fill(update.begin(), update.end(), 0.0);
      std::fill(gains.begin(), gains.end(), 1.0);
    }
    const double momentum = iter < cfg.momentum_switch ? cfg.initial_momentum : cfg.final_momentum;

    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < dims; ++k) {
          const double diff = y[i * dims + k] - y[j * dims + k];
          s += diff * diff;
        }
        const double q = 1.0 / (1.0 + s);
        num[i * n + j] = num[j * n + i] = q;
        z += 2.0 * q;
      }

    double kl = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double pij = p[i * n + j];
        const double qij = std::max(num[i * n + j] / z, 1e-300);
        kl += pij * std::log(pij / qij);
        const double mult = (exaggeration * pij - qij) * num[i * n + j];
        for (std::size_t k = 0; k < dims; ++k) grad[i * dims + k] += 4.0 * mult * (y[i * dims + k] - y[j * dims + k]);
      }
    if (!std::isfinite(kl)) throw NumericError("tsne: NaN encountered at iteration " + std::to_string(iter));
    out.kl_history.push_back(kl);

    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool same_sign = update[i] != 0.0 && (grad[i] > 0.0) == (update[i] > 0.0);
      gains[i] = same_sign ? std::max(gains[i] * 0.8, 0.01) : gains[i] + 0.2;
      update[i] = momentum * update[i] - cfg.learning_rate * gains[i] * grad[i];
      y[i] += update[i];
    }
    for (std::size_t k = 0; k < dims; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += y[i * dims + k];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y[i * dims + k] -= mean;
    }
    for (double v : y)
      if (!std::isfinite(v)) throw NumericError("tsne: NaN encountered at iteration " + std::to_string(iter));
  }
  out.coords = std::move(y);
  return out;
}

}  // namespace sslgrade
