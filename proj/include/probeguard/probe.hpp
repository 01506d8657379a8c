#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "probeguard/dataset_io.hpp"

namespace probeguard {

struct TrainConfig {
  double learning_rate = 0.1;
  std::uint32_t epochs = 200;
  double l2 = 1e-4;
  // 0 means full-batch gradient descent.
  std::uint32_t batch_size = 256;
  bool cosine_decay = true;
  bool standardize = true;

  bool operator==(const TrainConfig&) const = default;
};

// Linear softmax classifier over standardized activations. Row-major
// weights, one row of `dimension` entries per class.
struct ProbeModel {
  std::uint32_t dimension = 0;
  std::uint32_t num_classes = 0;
  std::uint32_t layer_index = 0;
  std::uint64_t seed = 0;
  TrainConfig config;
  std::vector<double> mean;
  std::vector<double> scale;
  std::vector<double> weights;
  std::vector<double> bias;

  void validate() const;
  double weight(std::size_t cls, std::size_t feature) const {
    return weights[cls * dimension + feature];
  }

  bool operator==(const ProbeModel&) const = default;
};

// Multinomial cross-entropy (mean over rows) plus 0.5 * l2 * ||W||^2, and its
// gradient. `features` is row-major n x d and already standardized.
struct LossGradient {
  double loss = 0;
  std::vector<double> weight_grad;
  std::vector<double> bias_grad;
};

LossGradient softmax_loss_gradient(std::span<const double> weights, std::span<const double> bias,
                                   std::span<const double> features,
                                   std::span<const std::uint32_t> labels, std::uint32_t dimension,
                                   std::uint32_t num_classes, double l2);

// Mini-batch gradient descent with a seeded shuffle per epoch. When
// `epoch_losses` is given it receives the full training objective after each
// epoch.
ProbeModel train_probe(const LabeledDataset& train, const TrainConfig& config, std::uint64_t seed,
                       std::vector<double>* epoch_losses = nullptr);

std::vector<double> probe_logits(const ProbeModel& model, std::span<const float> vector);
std::vector<double> predict_proba(const ProbeModel& model, std::span<const float> vector);

// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

// Lowest index among the maxima.
std::uint32_t argmax(std::span<const double> values);

double accuracy(const ProbeModel& model, const LabeledDataset& data);

std::string probe_to_json(const ProbeModel& model);
ProbeModel probe_from_json(const std::string& text);
void save_probe(const ProbeModel& model, const std::filesystem::path& path);
ProbeModel load_probe(const std::filesystem::path& path);

}  // namespace probeguard
