#pragma once

// Deterministic synthetic activation sets shared by the unit and acceptance
// suites.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "probeguard/dataset_io.hpp"

namespace probeguard::testing {

inline ActivationRecord make_record(std::string id, std::vector<float> v, std::uint32_t label) {
  ActivationRecord r;
  r.record_id = std::move(id);
  r.dataset_name = "synthetic";
  r.vector = std::move(v);
  r.label = label;
  return r;
}

// label = [x0 > 0], points uniform in [-1, 1]^2 with |x0| >= margin.
inline LabeledDataset separable_2d(std::size_t n, double margin, std::uint64_t seed,
                                   const std::string& prefix = "sep") {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LabeledDataset ds{2, 2, {}};
  while (ds.size() < n) {
    const double x0 = u(rng);
    const double x1 = u(rng);
    if (std::abs(x0) < margin) continue;
    ds.records.push_back(make_record(prefix + "-" + std::to_string(ds.size()),
                                     {static_cast<float>(x0), static_cast<float>(x1)},
                                     x0 > 0 ? 1u : 0u));
  }
  return ds;
}

// Two unit-variance Gaussian clusters at -shift and +shift on every axis,
// label drawn uniformly.
inline LabeledDataset gaussian_clusters(std::size_t n, std::uint32_t d, double shift,
                                        std::mt19937_64& rng, const std::string& prefix = "g") {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  LabeledDataset ds{d, 2, {}};
  ds.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t y = coin(rng) ? 1 : 0;
    std::vector<float> v(d);
    for (auto& x : v) x = static_cast<float>((y ? shift : -shift) + noise(rng));
    ds.records.push_back(make_record(prefix + "-" + std::to_string(i), std::move(v), y));
  }
  return ds;
}

// Labels independent of the (standard normal) vectors.
inline LabeledDataset random_labels(std::size_t n, std::uint32_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  LabeledDataset ds{d, 2, {}};
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(d);
    for (auto& x : v) x = static_cast<float>(noise(rng));
    ds.records.push_back(make_record("r-" + std::to_string(i), std::move(v), coin(rng) ? 1 : 0));
  }
  return ds;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("probeguard-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace probeguard::testing
