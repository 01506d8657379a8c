#include "probeguard/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "probeguard/error.hpp"
#include "probeguard/random.hpp"

namespace probeguard {
namespace {

using json = nlohmann::ordered_json;
constexpr const char* kModelFormat = "probeguard-model-v1";

// Adds the gradient contribution of the given rows to `grad` and returns the
// summed (not averaged) cross-entropy.
double accumulate_rows(std::span<const double> weights, std::span<const double> bias,
                       std::span<const double> features, std::span<const std::uint32_t> labels,
                       std::span<const std::size_t> rows, std::uint32_t d, std::uint32_t c,
                       LossGradient& grad, std::vector<double>& scratch) {
  double total = 0;
  scratch.resize(c);
  for (std::size_t row : rows) {
    const double* x = features.data() + row * d;
    for (std::uint32_t k = 0; k < c; ++k) {
      const double* w = weights.data() + static_cast<std::size_t>(k) * d;
      double z = bias[k];
      for (std::uint32_t j = 0; j < d; ++j) z += w[j] * x[j];
      scratch[k] = z;
    }
    const double zmax = *std::max_element(scratch.begin(), scratch.end());
    double denom = 0;
    for (auto& z : scratch) {
      z = std::exp(z - zmax);
      denom += z;
    }
    const std::uint32_t y = labels[row];
    total += std::log(denom) - std::log(scratch[y]);
    for (std::uint32_t k = 0; k < c; ++k) {
      const double delta = scratch[k] / denom - (k == y ? 1.0 : 0.0);
      double* g = grad.weight_grad.data() + static_cast<std::size_t>(k) * d;
      for (std::uint32_t j = 0; j < d; ++j) g[j] += delta * x[j];
      grad.bias_grad[k] += delta;
    }
  }
  return total;
}

LossGradient batch_loss_gradient(std::span<const double> weights, std::span<const double> bias,
                                 std::span<const double> features,
                                 std::span<const std::uint32_t> labels,
                                 std::span<const std::size_t> rows, std::uint32_t d,
                                 std::uint32_t c, double l2, std::vector<double>& scratch) {
  LossGradient out;
  out.weight_grad.assign(weights.size(), 0.0);
  out.bias_grad.assign(c, 0.0);
  const double total = accumulate_rows(weights, bias, features, labels, rows, d, c, out, scratch);
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  double sq = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.weight_grad[i] = out.weight_grad[i] * inv_n + l2 * weights[i];
    sq += weights[i] * weights[i];
  }
  for (auto& g : out.bias_grad) g *= inv_n;
  out.loss = total * inv_n + 0.5 * l2 * sq;
  return out;
}

}  // namespace

void ProbeModel::validate() const {
  const std::size_t d = dimension;
  if (num_classes < 2) throw ValidationError("probe needs at least 2 classes");
  if (weights.size() != d * num_classes || bias.size() != num_classes || mean.size() != d ||
      scale.size() != d) {
    throw ValidationError("probe parameter shapes do not match d=" + std::to_string(d) +
                          ", c=" + std::to_string(num_classes));
  }
}

LossGradient softmax_loss_gradient(std::span<const double> weights, std::span<const double> bias,
                                   std::span<const double> features,
                                   std::span<const std::uint32_t> labels, std::uint32_t dimension,
                                   std::uint32_t num_classes, double l2) {
  if (labels.empty() || features.size() != labels.size() * dimension ||
      weights.size() != static_cast<std::size_t>(dimension) * num_classes ||
      bias.size() != num_classes) {
    throw ValidationError("softmax_loss_gradient: inconsistent shapes");
  }
  std::vector<std::size_t> rows(labels.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  std::vector<double> scratch;
  return batch_loss_gradient(weights, bias, features, labels, rows, dimension, num_classes, l2,
                             scratch);
}

ProbeModel train_probe(const LabeledDataset& train, const TrainConfig& config, std::uint64_t seed,
                       std::vector<double>* epoch_losses) {
  train.validate();
  if (train.empty()) throw ValidationError("cannot train a probe on an empty dataset");
  if (train.num_classes < 2) throw ValidationError("a probe needs at least two classes");
  const auto counts = train.class_counts();
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) {
      throw ValidationError("class " + std::to_string(k) +
                            " is absent from the training data; the probe is undefined");
    }
  }
  if (!(config.learning_rate > 0) || config.epochs == 0 || config.l2 < 0) {
    throw ValidationError("invalid training configuration");
  }

  const std::uint32_t d = train.dimension;
  const std::uint32_t c = train.num_classes;
  const std::size_t n = train.size();

  ProbeModel model;
  model.dimension = d;
  model.num_classes = c;
  model.layer_index = train.records.front().layer_index;
  model.seed = seed;
  model.config = config;
  model.mean.assign(d, 0.0);
  model.scale.assign(d, 1.0);
  if (config.standardize) {
    for (const auto& r : train.records) {
      for (std::uint32_t j = 0; j < d; ++j) model.mean[j] += r.vector[j];
    }
    for (auto& m : model.mean) m /= static_cast<double>(n);
    std::vector<double> var(d, 0.0);
    for (const auto& r : train.records) {
      for (std::uint32_t j = 0; j < d; ++j) {
        const double diff = r.vector[j] - model.mean[j];
        var[j] += diff * diff;
      }
    }
    for (std::uint32_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(n));
      model.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
  }

  std::vector<double> features(n * d);
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = train.records[i];
    for (std::uint32_t j = 0; j < d; ++j) {
      features[i * d + j] = (r.vector[j] - model.mean[j]) / model.scale[j];
    }
    labels[i] = r.label;
  }

  model.weights.assign(static_cast<std::size_t>(c) * d, 0.0);
  model.bias.assign(c, 0.0);

  const std::size_t batch = config.batch_size == 0 ? n : std::min<std::size_t>(config.batch_size, n);
  Rng rng(seed);
  std::vector<std::size_t> all_rows(n);
  for (std::size_t i = 0; i < n; ++i) all_rows[i] = i;
  std::vector<double> scratch;
  if (epoch_losses) epoch_losses->clear();

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.learning_rate;
    if (config.cosine_decay) {
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / config.epochs));
    }
    const auto order = rng.permutation(n);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, n - start));
      const auto g = batch_loss_gradient(model.weights, model.bias, features, labels, rows, d, c,
                                         config.l2, scratch);
      for (std::size_t i = 0; i < model.weights.size(); ++i) model.weights[i] -= lr * g.weight_grad[i];
      for (std::uint32_t k = 0; k < c; ++k) model.bias[k] -= lr * g.bias_grad[k];
    }
    if (epoch_losses) {
      epoch_losses->push_back(batch_loss_gradient(model.weights, model.bias, features, labels,
                                                  all_rows, d, c, config.l2, scratch)
                                  .loss);
    }
  }
  return model;
}

std::vector<double> probe_logits(const ProbeModel& model, std::span<const float> vector) {
  if (vector.size() != model.dimension) {
    throw ValidationError("vector length " + std::to_string(vector.size()) +
                          " does not match probe dimension " + std::to_string(model.dimension));
  }
  const std::uint32_t d = model.dimension;
  std::vector<double> z(model.bias);
  std::vector<double> x(d);
  for (std::uint32_t j = 0; j < d; ++j) x[j] = (vector[j] - model.mean[j]) / model.scale[j];
  for (std::uint32_t k = 0; k < model.num_classes; ++k) {
    const double* w = model.weights.data() + static_cast<std::size_t>(k) * d;
    for (std::uint32_t j = 0; j < d; ++j) z[k] += w[j] * x[j];
  }
  return z;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double zmax = *std::max_element(p.begin(), p.end());
  double denom = 0;
  for (auto& v : p) {
    v = std::exp(v - zmax);
    denom += v;
  }
  for (auto& v : p) v /= denom;
  return p;
}

std::vector<double> predict_proba(const ProbeModel& model, std::span<const float> vector) {
  return softmax(probe_logits(model, vector));
}

std::uint32_t argmax(std::span<const double> values) {
  return static_cast<std::uint32_t>(std::max_element(values.begin(), values.end()) -
                                    values.begin());
}

double accuracy(const ProbeModel& model, const LabeledDataset& data) {
  if (data.empty()) throw ValidationError("accuracy of an empty dataset");
  std::size_t correct = 0;
  for (const auto& r : data.records) {
    if (argmax(probe_logits(model, r.vector)) == r.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string probe_to_json(const ProbeModel& model) {
  model.validate();
  json rows = json::array();
  for (std::uint32_t k = 0; k < model.num_classes; ++k) {
    const auto begin = model.weights.begin() + static_cast<std::ptrdiff_t>(k) * model.dimension;
    rows.push_back(std::vector<double>(begin, begin + model.dimension));
  }
  const json doc = {{"format", kModelFormat},
                    {"d", model.dimension},
                    {"c", model.num_classes},
                    {"layer_index", model.layer_index},
                    {"seed", model.seed},
                    {"training_config",
                     {{"learning_rate", model.config.learning_rate},
                      {"epochs", model.config.epochs},
                      {"l2", model.config.l2},
                      {"batch_size", model.config.batch_size},
                      {"cosine_decay", model.config.cosine_decay},
                      {"standardize", model.config.standardize}}},
                    {"mean", model.mean},
                    {"std", model.scale},
                    {"weights", rows},
                    {"bias", model.bias}};
  return doc.dump() + "\n";
}

ProbeModel probe_from_json(const std::string& text) {
  ProbeModel model;
  try {
    const json doc = json::parse(text);
    const auto format = doc.at("format").get<std::string>();
    if (format != kModelFormat) throw FormatError("unknown probe format '" + format + "'");
    model.dimension = doc.at("d").get<std::uint32_t>();
    model.num_classes = doc.at("c").get<std::uint32_t>();
    model.layer_index = doc.value("layer_index", 0u);
    model.seed = doc.value("seed", std::uint64_t{0});
    if (auto it = doc.find("training_config"); it != doc.end()) {
      const TrainConfig defaults;
      model.config.learning_rate = it->value("learning_rate", defaults.learning_rate);
      model.config.epochs = it->value("epochs", defaults.epochs);
      model.config.l2 = it->value("l2", defaults.l2);
      model.config.batch_size = it->value("batch_size", defaults.batch_size);
      model.config.cosine_decay = it->value("cosine_decay", defaults.cosine_decay);
      model.config.standardize = it->value("standardize", defaults.standardize);
    }
    model.mean = doc.at("mean").get<std::vector<double>>();
    model.scale = doc.at("std").get<std::vector<double>>();
    for (const auto& row : doc.at("weights")) {
      const auto values = row.get<std::vector<double>>();
      if (values.size() != model.dimension) throw FormatError("probe weight row has wrong length");
      model.weights.insert(model.weights.end(), values.begin(), values.end());
    }
    model.bias = doc.at("bias").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed probe model: ") + e.what());
  }
  model.validate();
  return model;
}

void save_probe(const ProbeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << probe_to_json(model);
}

ProbeModel load_probe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return probe_from_json(buffer.str());
}

}  // namespace probeguard
