#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "sslgrade/eval/tsne.hpp"

using namespace sslgrade;

namespace {

// Largest rise of KL across any 50-iteration window starting at or after `start`.
double worst_window_rise(const std::vector<double>& kl, std::size_t start, std::size_t window = 50) {
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = start; i + window < kl.size(); ++i) worst = std::max(worst, kl[i + window] - kl[i]);
  return worst;
}

}  // namespace

TEST(TsneCalibration, EquidistantNeighboursAreUniform) {
  // Three mutually equidistant points: each sees two neighbours at the same distance.
  for (double d : {1e-3, 1.0, 250.0}) {
    const std::vector<double> row{d, d};
    const auto cal = calibrate_conditional(row, 2.0);
    EXPECT_DOUBLE_EQ(cal.probs[0], 0.5);
    EXPECT_DOUBLE_EQ(cal.probs[1], 0.5);
    EXPECT_NEAR(cal.entropy, std::log(2.0), 1e-12);
    EXPECT_NEAR(std::exp(cal.entropy), 2.0, 1e-9);
  }
}

TEST(TsneCalibration, RandomRowsHitTargetEntropy) {
  Rng rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> row(5 + rng.below(100));
    for (auto& v : row) v = rng.uniform(0.0, 10.0) * rng.uniform(0.0, 10.0);
    const double perplexity = rng.uniform(1.5, static_cast<double>(row.size()) / 3.0 + 1.5);
    const auto cal = calibrate_conditional(row, perplexity);
    EXPECT_NEAR(cal.entropy, std::log(perplexity), 1e-5) << trial;
    EXPECT_LE(cal.steps, 50u);
    double sum = 0.0;
    for (double p : cal.probs) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  EXPECT_THROW(calibrate_conditional(std::vector<double>{}, 2.0), ShapeError);
  EXPECT_THROW(calibrate_conditional(std::vector<double>{1.0}, 0.0), ShapeError);
}

TEST(Tsne, EveryPointCalibratedToPerplexity) {
  const std::size_t n = 80, d = 12;
  const auto x = oracle::clusters(n, d, 4, 5);
  TsneConfig cfg;
  cfg.perplexity = 15.0;
  cfg.iterations = 1;
  const auto r = tsne(x, n, d, cfg);
  ASSERT_EQ(r.entropies.size(), n);
  for (double h : r.entropies) EXPECT_NEAR(h, std::log(15.0), 1e-5);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Tsne, KlNonIncreasingAfterExaggeration) {
  const std::size_t n = 200, d = 10;
  for (std::uint64_t seed : {9u, 10u, 11u}) {
    const auto x = oracle::clusters(n, d, 4, seed);
    const auto r = tsne(x, n, d, TsneConfig{});
    ASSERT_EQ(r.kl_history.size(), 1000u);
    EXPECT_LE(worst_window_rise(r.kl_history, 250), 1e-3) << seed;
    EXPECT_LT(r.kl_history.back(), r.kl_history[250]);
  }
}

TEST(Tsne, ClustersStaySeparated) {
  const std::size_t n = 150, d = 10;
  std::vector<int> labels;
  const auto x = oracle::clusters(n, d, 3, 21, &labels);
  const auto r = tsne(x, n, d, TsneConfig{});
  std::size_t agree = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t nn = i;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = r.at(i, 0) - r.at(j, 0), dy = r.at(i, 1) - r.at(j, 1);
      if (dx * dx + dy * dy < best) best = dx * dx + dy * dy, nn = j;
    }
    agree += labels[i] == labels[nn];
  }
  EXPECT_EQ(agree, n);
}

TEST(Tsne, PerplexityClampedWithWarning) {
  const std::size_t n = 10, d = 3;
  const auto x = oracle::clusters(n, d, 2, 2);
  TsneConfig cfg;
  cfg.iterations = 20;
  const auto r = tsne(x, n, d, cfg);
  EXPECT_LT(r.perplexity, 3.0);
  EXPECT_GT(r.perplexity, 2.999);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("clamped"), std::string::npos);
  for (double h : r.entropies) EXPECT_NEAR(h, std::log(r.perplexity), 1e-5);
}

TEST(Tsne, DeterministicForSeed) {
  const std::size_t n = 20, d = 4;
  const auto x = oracle::clusters(n, d, 2, 3);
  TsneConfig cfg;
  cfg.perplexity = 5.0;
  cfg.iterations = 300;
  const auto a = tsne(x, n, d, cfg), b = tsne(x, n, d, cfg);
  EXPECT_EQ(a.coords, b.coords);
  EXPECT_EQ(a.kl_history, b.kl_history);
  cfg.seed = 1;
  EXPECT_NE(tsne(x, n, d, cfg).coords, a.coords);
}

TEST(Tsne, RejectsBadInput) {
  std::vector<double> x(3 * 2, 0.5);
  EXPECT_THROW(tsne(x, 3, 2), ShapeError);
  std::vector<double> y(5 * 2, 0.5);
  EXPECT_THROW(tsne(y, 5, 3), ShapeError);
  y[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(tsne(y, 5, 2), NumericError);
}
