#pragma once

// Repeated calibrate-then-test draws from one exchangeable generator.

#include <random>

#include "probeguard/conformal.hpp"
#include "support/synthetic.hpp"

namespace probeguard::testing {

struct GuaranteeResult {
  double mean_precision = 0;
  // Trials where the gate covered at least one test instance.
  std::size_t scored_trials = 0;
  double mean_coverage = 0;
};

inline GuaranteeResult simulate_guarantee(double alpha, std::size_t trials, std::uint64_t seed,
                                          std::size_t n = 1000) {
  constexpr std::uint32_t kDim = 8;
  constexpr double kShift = 0.25;
  std::mt19937_64 rng(seed);
  const auto train = gaussian_clusters(2000, kDim, kShift, rng, "train");
  TrainConfig cfg;
  cfg.epochs = 50;
  const auto model = train_probe(train, cfg, seed);

  GuaranteeResult out;
  double precision_sum = 0;
  double coverage_sum = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto valid = gaussian_clusters(n, kDim, kShift, rng, "valid");
    const auto test = gaussian_clusters(n, kDim, kShift, rng, "test");
    const auto profile = calibrate(model, valid, alpha);
    std::size_t covered = 0;
    std::size_t correct = 0;
    for (const auto& r : test.records) {
      const auto d = gate(model, profile, r.vector);
      if (d.deferred()) continue;
      ++covered;
      if (d.prediction->cls == r.label) ++correct;
    }
    coverage_sum += static_cast<double>(covered) / static_cast<double>(n);
    if (covered == 0) continue;
    ++out.scored_trials;
    precision_sum += static_cast<double>(correct) / static_cast<double>(covered);
  }
  out.mean_precision = out.scored_trials ? precision_sum / static_cast<double>(out.scored_trials) : 0;
  out.mean_coverage = coverage_sum / static_cast<double>(trials);
  return out;
}

}  // namespace probeguard::testing
