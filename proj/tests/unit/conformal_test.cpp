#include "probeguard/conformal.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "probeguard/error.hpp"
#include "support/guarantee.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

namespace probeguard {
namespace {

using Probs = std::vector<std::vector<double>>;

TEST(Quantile, Examples) {
  const std::vector<double> s = {0.4, 0.1, 0.3, 0.2};
  EXPECT_DOUBLE_EQ(conformal_quantile(s, 0.5), 0.3);
  EXPECT_DOUBLE_EQ(conformal_quantile(std::vector<double>{0.5}, 0.5), 0.5);
  EXPECT_TRUE(std::isinf(conformal_quantile(s, 0.1)));
  EXPECT_THROW(conformal_quantile(std::vector<double>{}, 0.5), ValidationError);
  EXPECT_THROW(conformal_quantile(s, 1.0), ValidationError);
}

TEST(Quantile, MatchesOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<double> s(n);
    for (auto& v : s) v = u(rng);
    const std::int64_t num = 1 + static_cast<std::int64_t>(rng() % 99);
    const double got = conformal_quantile(s, static_cast<double>(num) / 100.0);
    EXPECT_EQ(got, testing::quantile_oracle(s, num, 100));
  }
}

TEST(Quantile, NonDecreasingAsAlphaDecreases) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(60);
  for (auto& v : s) v = u(rng);
  double prev = -1;
  for (int a = 99; a >= 1; --a) {
    const double q = conformal_quantile(s, a / 100.0);
    EXPECT_GE(q, prev);
    prev = q;
  }
}

TEST(Quantile, InsertingLargerScoreNeverDecreases) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> s(1 + rng() % 30);
    for (auto& v : s) v = u(rng);
    const double alpha = 0.05 + 0.9 * u(rng);
    const double q = conformal_quantile(s, alpha);
    if (std::isinf(q)) continue;
    s.push_back(q + u(rng));
    EXPECT_GE(conformal_quantile(s, alpha), q);
  }
}

TEST(PredictionSet, Examples) {
  const std::vector<double> p = {0.9, 0.1};
  EXPECT_EQ(prediction_set(p, 0.5), (std::vector<std::uint32_t>{0}));
  EXPECT_EQ(prediction_set(p, 0.95), (std::vector<std::uint32_t>{0, 1}));
  EXPECT_TRUE(prediction_set(std::vector<double>{0.6, 0.4}, 0.05).empty());
  EXPECT_EQ(prediction_set(p, INFINITY).size(), 2u);
}

TEST(PredictionSet, AtMostOneClassBelowHalf) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> z(2 + rng() % 4);
    for (auto& v : z) v = 6 * u(rng) - 3;
    EXPECT_LE(prediction_set(softmax(z), 0.499 * u(rng)).size(), 1u);
  }
}

TEST(CalibrateThreshold, Examples) {
  const Probs probs = {{0.95, 0.05}, {0.90, 0.10}, {0.80, 0.20}};
  const std::vector<std::uint32_t> labels = {0, 0, 1};
  const auto prof = calibrate_threshold(probs, labels, 0.9);
  ASSERT_FALSE(prof.defer_all());
  EXPECT_DOUBLE_EQ(*prof.threshold, 0.90);
  EXPECT_EQ(prof.calibration_size, 3u);

  const std::vector<std::uint32_t> right = {0, 0, 0};
  EXPECT_DOUBLE_EQ(*calibrate_threshold(probs, right, 0.99).threshold, 0.80);

  const std::vector<std::uint32_t> wrong = {1, 1, 1};
  EXPECT_TRUE(calibrate_threshold(probs, wrong, 0.9).defer_all());
}

TEST(CalibrateThreshold, Errors) {
  const Probs probs = {{0.95, 0.05}};
  EXPECT_THROW(calibrate_threshold(probs, std::vector<std::uint32_t>{0, 1}, 0.9), ValidationError);
  EXPECT_THROW(calibrate_threshold(Probs{}, std::vector<std::uint32_t>{}, 0.9), ValidationError);
}

TEST(CalibrateThreshold, TiedMaximaMoveTogether) {
  // Three instances share 0.7; admitting one admits all of them.
  const Probs probs = {{0.9, 0.1}, {0.7, 0.3}, {0.7, 0.3}, {0.3, 0.7}};
  const std::vector<std::uint32_t> labels = {0, 0, 1, 1};
  const auto prof = calibrate_threshold(probs, labels, 0.75);
  EXPECT_DOUBLE_EQ(*prof.threshold, 0.7);
  EXPECT_EQ(testing::threshold_oracle(probs, labels, 0.75), prof.threshold);
}

TEST(CalibrateThreshold, MatchesOracle) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng() % 30;
    Probs probs;
    std::vector<std::uint32_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
      const double hi = 0.5 + std::round(u(rng) * 10) / 20;  // coarse grid forces ties
      probs.push_back({hi, 1 - hi});
      labels.push_back(u(rng) < 0.75 ? 0 : 1);
    }
    const double alpha = 0.5 + 0.45 * u(rng);
    EXPECT_EQ(calibrate_threshold(probs, labels, alpha).threshold,
              testing::threshold_oracle(probs, labels, alpha));
  }
}

TEST(CalibrateThreshold, ThresholdMonotoneInAlpha) {
  std::mt19937_64 rng(6);
  const auto train = testing::gaussian_clusters(1000, 8, 0.25, rng);
  const auto valid = testing::gaussian_clusters(1000, 8, 0.25, rng);
  const auto model = train_probe(train, TrainConfig{}, 0);
  double prev_q = 0;
  bool deferred = false;
  for (int a = 50; a <= 99; ++a) {
    const auto prof = calibrate(model, valid, a / 100.0);
    if (prof.defer_all()) {
      deferred = true;  // once nothing qualifies, higher alphas cannot qualify either
      continue;
    }
    EXPECT_FALSE(deferred);
    EXPECT_GE(*prof.threshold, prev_q);
    prev_q = *prof.threshold;
  }
}

TEST(Gate, Examples) {
  CalibrationProfile prof;
  prof.threshold = 0.9;
  EXPECT_EQ(gate_probs(prof, std::vector<double>{0.95, 0.05}), GateDecision::predict(0, 0.95));
  EXPECT_TRUE(gate_probs(prof, std::vector<double>{0.6, 0.4}).deferred());
  EXPECT_FALSE(gate_probs(prof, std::vector<double>{0.9, 0.1}).deferred());  // inclusive
  prof.threshold.reset();
  EXPECT_TRUE(gate_probs(prof, std::vector<double>{1.0, 0.0}).deferred());
}

TEST(Gate, QuantileKindNeedsSingletonSet) {
  CalibrationProfile prof;
  prof.score_kind = ScoreKind::kSoftmaxComplementQuantile;
  prof.threshold = 0.3;
  EXPECT_EQ(gate_probs(prof, std::vector<double>{0.8, 0.2}), GateDecision::predict(0, 0.8));
  EXPECT_TRUE(gate_probs(prof, std::vector<double>{0.6, 0.4}).deferred());  // empty set
  prof.threshold = INFINITY;
  EXPECT_TRUE(gate_probs(prof, std::vector<double>{0.8, 0.2}).deferred());  // both classes
}

TEST(Gate, AgreesWithArgmax) {
  std::mt19937_64 rng(7);
  const auto data = testing::gaussian_clusters(300, 4, 0.5, rng);
  const auto model = train_probe(data, TrainConfig{}, 0);
  CalibrationProfile prof;
  prof.threshold = 0.6;
  for (const auto& r : data.records) {
    const auto d = gate(model, prof, r.vector);
    if (!d.deferred()) EXPECT_EQ(d.prediction->cls, argmax(predict_proba(model, r.vector)));
  }
  const std::vector<float> wrong(3, 0.0f);
  EXPECT_THROW(gate(model, prof, wrong), ValidationError);
}

TEST(ScoreQuantile, MarginalCoverage) {
  // Split-conformal sets contain the true class with probability >= 1 - alpha.
  std::mt19937_64 rng(8);
  const auto train = testing::gaussian_clusters(1000, 8, 0.25, rng);
  const auto model = train_probe(train, TrainConfig{}, 0);
  const double alpha = 0.1;
  double hit_rate = 0;
  const int trials = 40;
  for (int t = 0; t < trials; ++t) {
    const auto valid = testing::gaussian_clusters(500, 8, 0.25, rng);
    const auto test = testing::gaussian_clusters(500, 8, 0.25, rng);
    const auto prof = calibrate(model, valid, alpha, CalibrationMethod::kScoreQuantile);
    std::size_t hits = 0;
    for (const auto& r : test.records) {
      const auto set = prediction_set(predict_proba(model, r.vector), *prof.threshold);
      if (std::find(set.begin(), set.end(), r.label) != set.end()) ++hits;
    }
    hit_rate += static_cast<double>(hits) / 500.0;
  }
  EXPECT_GE(hit_rate / trials, 1 - alpha - 0.01);
}

TEST(Guarantee, PrecisionHoldsOnFreshDraws) {
  const auto r = testing::simulate_guarantee(0.8, 30, 11);
  EXPECT_GT(r.scored_trials, 20u);
  EXPECT_GE(r.mean_precision, 0.8 - 0.03);
}

TEST(ProfileJson, RoundTrips) {
  CalibrationProfile a{0.9, 0.8125, ScoreKind::kSoftmaxComplement, 1000};
  EXPECT_EQ(profile_from_json(profile_to_json(a)), a);
  CalibrationProfile none{0.9, std::nullopt, ScoreKind::kSoftmaxComplement, 3};
  const auto text = profile_to_json(none);
  EXPECT_NE(text.find("\"DEFER_ALL\""), std::string::npos);
  EXPECT_EQ(profile_from_json(text), none);
  CalibrationProfile inf{0.1, INFINITY, ScoreKind::kSoftmaxComplementQuantile, 4};
  EXPECT_EQ(profile_from_json(profile_to_json(inf)), inf);
}

TEST(ProfileJson, Rejects) {
  EXPECT_THROW(profile_from_json(R"({"format":"other","alpha":0.9})"), FormatError);
  EXPECT_THROW(profile_from_json("not json"), FormatError);
}

}  // namespace
}  // namespace probeguard
