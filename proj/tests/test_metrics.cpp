#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "sslgrade/eval/metrics.hpp"
#include "sslgrade/eval/report.hpp"

using namespace sslgrade;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ConfusionMatrix permuted(const ConfusionMatrix& cm, const std::vector<std::size_t>& perm) {
  ConfusionMatrix out(cm.classes());
  for (std::size_t i = 0; i < cm.classes(); ++i)
    for (std::size_t j = 0; j < cm.classes(); ++j) out(perm[i], perm[j]) = cm(i, j);
  return out;
}

}  // namespace

TEST(Confusion, CountsRowsAsTruth) {
  const std::vector<int> t{0, 0, 1, 3, 3, 3}, p{0, 1, 1, 3, 2, 3};
  const auto cm = confusion(t, p);
  EXPECT_EQ(cm(0, 0), 1);
  EXPECT_EQ(cm(0, 1), 1);
  EXPECT_EQ(cm(3, 2), 1);
  EXPECT_EQ(cm(3, 3), 2);
  EXPECT_EQ(cm.total(), 6);
  EXPECT_DOUBLE_EQ(accuracy(cm), 4.0 / 6.0);
  EXPECT_THROW(confusion(t, std::vector<int>{0}), ShapeError);
  EXPECT_THROW(confusion(std::vector<int>{4}, std::vector<int>{0}), ShapeError);
  EXPECT_THROW(accuracy(ConfusionMatrix(4)), ShapeError);
}

TEST(F1, HandEnumeratedExample) {
  const std::vector<int> t{0, 0, 1, 1}, p{0, 1, 1, 1};
  const auto f1 = f1_scores(confusion(t, p));
  EXPECT_DOUBLE_EQ(f1.per_class[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(f1.per_class[1], 0.8);
  EXPECT_DOUBLE_EQ(f1.per_class[2], 0.0);
  EXPECT_DOUBLE_EQ(f1.macro, (2.0 / 3.0 + 0.8) / 4.0);
  EXPECT_EQ(f1.degenerate, (std::vector<std::size_t>{2, 3}));  // absent classes are flagged
  EXPECT_DOUBLE_EQ(accuracy(confusion(t, p)), 0.75);
}

TEST(F1, MatchesPredictionEnumeration) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> t(1 + rng.below(60)), p(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<int>(rng.below(4)), p[i] = static_cast<int>(rng.below(4));
    const auto f1 = f1_scores(confusion(t, p));
    const auto ref = oracle::f1_by_enumeration(t, p, 4);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(f1.per_class[c], ref[c], 1e-12);
    EXPECT_NEAR(f1.macro, std::accumulate(ref.begin(), ref.end(), 0.0) / 4.0, 1e-12);
  }
}

TEST(Kappa, PerfectAndInverted) {
  const std::vector<int> t{0, 1, 2, 3, 3, 1};
  EXPECT_DOUBLE_EQ(quadratic_kappa(confusion(t, t)), 1.0);
  const std::vector<int> a{0, 0, 1, 1}, b{1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(quadratic_kappa(confusion(a, b, 2)), -1.0);
  // Every sample in one class, predicted correctly: no disagreement at all.
  const std::vector<int> same{2, 2, 2};
  EXPECT_DOUBLE_EQ(quadratic_kappa(confusion(same, same)), 1.0);
  EXPECT_THROW(quadratic_kappa(ConfusionMatrix(4)), ShapeError);
}

TEST(Kappa, FiveSampleExampleMatchesDirectFormula) {
  const std::vector<int> t{0, 1, 2, 3, 3}, p{0, 1, 2, 3, 2};
  const auto cm = confusion(t, p);
  // By hand, unnormalised weights: observed sum d^2 O = 1; expected sum d^2 r c / N = 61 / 5.
  EXPECT_NEAR(quadratic_kappa(cm), oracle::kappa_double_sum(cm), 1e-9);
  EXPECT_NEAR(quadratic_kappa(cm), oracle::kappa_moments(cm), 1e-9);
  EXPECT_NEAR(quadratic_kappa(cm), 1.0 - 1.0 / 12.2, 1e-12);
}

TEST(Kappa, MatchesOraclesOnRandomMatrices) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto cm = oracle::random_confusion(rng);
    const double k = quadratic_kappa(cm);
    ASSERT_NEAR(k, oracle::kappa_double_sum(cm), 1e-9) << trial;
    ASSERT_NEAR(k, oracle::kappa_moments(cm), 1e-9) << trial;
  }
}

TEST(Metrics, BoundsHoldOnRandomMatrices) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto r = make_report(oracle::random_confusion(rng));
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_LE(r.accuracy, 1.0);
    for (double f : r.f1_per_class) EXPECT_TRUE(f >= 0.0 && f <= 1.0);
    EXPECT_TRUE(r.f1_macro >= 0.0 && r.f1_macro <= 1.0);
    EXPECT_TRUE(r.kappa_quadratic >= -1.0 - 1e-12 && r.kappa_quadratic <= 1.0 + 1e-12) << r.kappa_quadratic;
  }
}

TEST(Metrics, PermutationConsistency) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cm = oracle::random_confusion(rng);
    std::vector<std::size_t> perm{0, 1, 2, 3};
    rng.shuffle(std::span<std::size_t>(perm));
    const auto pm = permuted(cm, perm);
    EXPECT_DOUBLE_EQ(accuracy(pm), accuracy(cm));
    const auto f = f1_scores(cm), fp = f1_scores(pm);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(fp.per_class[perm[c]], f.per_class[c]);
    EXPECT_NEAR(quadratic_kappa(permuted(cm, {3, 2, 1, 0})), quadratic_kappa(cm), 1e-12);
    // Swapping truth and prediction transposes the matrix; kappa is symmetric.
    ConfusionMatrix tr(4);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) tr(j, i) = cm(i, j);
    EXPECT_NEAR(quadratic_kappa(tr), quadratic_kappa(cm), 1e-12);
  }
}

TEST(Report, JsonSchemaAndRoundTrip) {
  Rng rng(3);
  const auto r = make_report(oracle::random_confusion(rng));
  const auto j = to_json(r);
  for (const char* key : {"accuracy", "f1_per_class", "f1_macro", "kappa_quadratic", "confusion"})
    EXPECT_TRUE(j.contains(key)) << key;
  const auto back = metrics_from_json(nlohmann::json::parse(j.dump(2)));
  EXPECT_NEAR(back.accuracy, r.accuracy, 1e-9);
  EXPECT_NEAR(back.kappa_quadratic, r.kappa_quadratic, 1e-9);
  EXPECT_NEAR(back.f1_macro, r.f1_macro, 1e-9);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(back.f1_per_class[c], r.f1_per_class[c], 1e-9);
  EXPECT_EQ(back.confusion, r.confusion);
  EXPECT_THROW(metrics_from_json(nlohmann::json::parse(R"({"accuracy": 1})")), DataError);
}

TEST(Report, WritesArtefacts) {
  const auto dir = fs::temp_directory_path() / "sslgrade_metrics_report";
  fs::remove_all(dir);
  const std::vector<int> t{0, 1, 2, 3, 3, 0}, p{0, 1, 2, 3, 2, 1};
  const auto r = make_report(confusion(t, p));
  const auto features = oracle::clusters(8, 3, 4, 1);
  TsneConfig cfg;
  cfg.iterations = 50;
  cfg.perplexity = 2.0;
  const auto emb = tsne(features, 8, 3, cfg);
  const std::vector<int> labels{0, 1, 2, 3, 0, 1, 2, 3};
  const auto files = report(r, &emb, labels, dir);
  EXPECT_EQ(metrics_from_json(nlohmann::json::parse(slurp(files.metrics_json))).confusion, r.confusion);
  const auto csv = slurp(files.confusion_csv);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "true\\pred,NC,G3,G4,G5");
  EXPECT_NE(csv.find("G5,0,0,1,1"), std::string::npos);
  EXPECT_EQ(slurp(files.confusion_svg).rfind("<svg", 0), 0u);
  const auto tcsv = slurp(files.tsne_csv);
  EXPECT_EQ(tcsv.substr(0, tcsv.find('\n')), "x,y,label");
  EXPECT_EQ(std::count(tcsv.begin(), tcsv.end(), '\n'), 9);
  EXPECT_NE(slurp(files.tsne_svg).find("</svg>"), std::string::npos);
}
