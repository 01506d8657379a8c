#include "probeguard/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "probeguard/error.hpp"

namespace probeguard {
namespace {

using json = nlohmann::ordered_json;
constexpr const char* kProfileFormat = "probeguard-profile-v1";
constexpr const char* kDeferAll = "DEFER_ALL";
constexpr const char* kInfinity = "INF";

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ValidationError("alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

void check_validation_set(std::span<const std::vector<double>> probs,
                          std::span<const std::uint32_t> labels) {
  if (probs.size() != labels.size()) {
    throw ValidationError("validation probabilities and labels differ in length");
  }
  if (probs.empty()) throw ValidationError("calibration needs a non-empty validation set");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (labels[i] >= probs[i].size()) {
      throw ValidationError("validation label " + std::to_string(labels[i]) +
                            " outside the probability vector");
    }
  }
}

}  // namespace

std::string_view score_kind_name(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::kSoftmaxComplement: return "softmax-complement";
    case ScoreKind::kSoftmaxComplementQuantile: return "softmax-complement-quantile";
  }
  return "unknown";
}

ScoreKind parse_score_kind(std::string_view name) {
  if (name == "softmax-complement") return ScoreKind::kSoftmaxComplement;
  if (name == "softmax-complement-quantile") return ScoreKind::kSoftmaxComplementQuantile;
  throw FormatError("unknown score kind '" + std::string(name) + "'");
}

double softmax_score(std::span<const double> probs, std::uint32_t cls) {
  if (cls >= probs.size()) throw ValidationError("class index out of range");
  return 1.0 - probs[cls];
}

double conformal_quantile(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw ValidationError("conformal quantile of an empty score list");
  check_alpha(alpha);
  const std::size_t n = scores.size();
  // The epsilon absorbs rounding in (n + 1)(1 - alpha) when it is integral.
  const double level = static_cast<double>(n + 1) * (1.0 - alpha);
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(level - 1e-9)));
  if (k > n) return std::numeric_limits<double>::infinity();
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   sorted.end());
  return sorted[k - 1];
}

std::vector<std::uint32_t> prediction_set(std::span<const double> probs, double q) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t k = 0; k < probs.size(); ++k) {
    if (softmax_score(probs, k) <= q) out.push_back(k);
  }
  return out;
}

CalibrationProfile calibrate_threshold(std::span<const std::vector<double>> valid_probs,
                                       std::span<const std::uint32_t> valid_labels, double alpha) {
  check_alpha(alpha);
  check_validation_set(valid_probs, valid_labels);
  const std::size_t n = valid_probs.size();

  std::vector<double> maxima(n);
  std::vector<bool> correct(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = valid_probs[i];
    const auto k = argmax(p);
    maxima[i] = p[k];
    correct[i] = k == valid_labels[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return maxima[a] > maxima[b]; });

  // Walk candidate thresholds from the highest down; each distinct maximum
  // admits its whole tie group. The last satisfying candidate is the lowest.
  CalibrationProfile profile{alpha, std::nullopt, ScoreKind::kSoftmaxComplement, n};
  std::size_t covered = 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n;) {
    const double candidate = maxima[order[i]];
    for (; i < n && maxima[order[i]] == candidate; ++i) {
      ++covered;
      if (correct[order[i]]) ++hits;
    }
    if (static_cast<double>(hits) / static_cast<double>(covered) >= alpha) {
      profile.threshold = candidate;
    }
  }
  return profile;
}

CalibrationProfile calibrate_score_quantile(std::span<const std::vector<double>> valid_probs,
                                            std::span<const std::uint32_t> valid_labels,
                                            double alpha) {
  check_alpha(alpha);
  check_validation_set(valid_probs, valid_labels);
  std::vector<double> scores(valid_probs.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = softmax_score(valid_probs[i], valid_labels[i]);
  }
  return {alpha, conformal_quantile(scores, alpha), ScoreKind::kSoftmaxComplementQuantile,
          scores.size()};
}

CalibrationProfile calibrate(const ProbeModel& model, const LabeledDataset& valid, double alpha,
                             CalibrationMethod method) {
  std::vector<std::vector<double>> probs;
  std::vector<std::uint32_t> labels;
  probs.reserve(valid.size());
  labels.reserve(valid.size());
  for (const auto& r : valid.records) {
    probs.push_back(predict_proba(model, r.vector));
    labels.push_back(r.label);
  }
  if (method == CalibrationMethod::kScoreQuantile) {
    return calibrate_score_quantile(probs, labels, alpha);
  }
  return calibrate_threshold(probs, labels, alpha);
}

GateDecision gate_probs(const CalibrationProfile& profile, std::span<const double> probs) {
  if (profile.defer_all() || probs.empty()) return GateDecision::defer();
  const double q = *profile.threshold;
  if (profile.score_kind == ScoreKind::kSoftmaxComplementQuantile) {
    const auto set = prediction_set(probs, q);
    if (set.size() != 1) return GateDecision::defer();
    return GateDecision::predict(set.front(), probs[set.front()]);
  }
  const auto k = argmax(probs);
  if (probs[k] >= q) return GateDecision::predict(k, probs[k]);
  return GateDecision::defer();
}

GateDecision gate(const ProbeModel& model, const CalibrationProfile& profile,
                  std::span<const float> vector) {
  // Dimension is checked even when the profile defers everything.
  const auto probs = predict_proba(model, vector);
  return gate_probs(profile, probs);
}

std::string profile_to_json(const CalibrationProfile& profile) {
  json threshold;
  if (profile.defer_all()) {
    threshold = kDeferAll;
  } else if (std::isinf(*profile.threshold)) {
    threshold = kInfinity;
  } else {
    threshold = *profile.threshold;
  }
  const json doc = {{"format", kProfileFormat},
                    {"alpha", profile.alpha},
                    {"threshold_q", threshold},
                    {"score_kind", score_kind_name(profile.score_kind)},
                    {"calibration_size", profile.calibration_size}};
  return doc.dump() + "\n";
}

CalibrationProfile profile_from_json(const std::string& text) {
  CalibrationProfile profile;
  try {
    const json doc = json::parse(text);
    const auto format = doc.at("format").get<std::string>();
    if (format != kProfileFormat) throw FormatError("unknown profile format '" + format + "'");
    profile.alpha = doc.at("alpha").get<double>();
    profile.score_kind = parse_score_kind(doc.at("score_kind").get<std::string>());
    profile.calibration_size = doc.value("calibration_size", std::uint64_t{0});
    const auto& q = doc.at("threshold_q");
    if (q.is_string()) {
      const auto s = q.get<std::string>();
      if (s == kInfinity) {
        profile.threshold = std::numeric_limits<double>::infinity();
      } else if (s != kDeferAll) {
        throw FormatError("unknown threshold sentinel '" + s + "'");
      }
    } else {
      profile.threshold = q.get<double>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed calibration profile: ") + e.what());
  }
  check_alpha(profile.alpha);
  return profile;
}

void save_profile(const CalibrationProfile& profile, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << profile_to_json(profile);
}

CalibrationProfile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return profile_from_json(buffer.str());
}

}  // namespace probeguard
