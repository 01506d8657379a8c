#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probeguard/probe.hpp"

namespace probeguard {

// How a profile's threshold is interpreted by the gate.
enum class ScoreKind {
  // Threshold on max probability found by the lowest-threshold precision
  // search. Predict iff max(p) >= q.
  kSoftmaxComplement,
  // Split-conformal quantile of the softmax-complement score. Predict iff the
  // prediction set {k : 1 - p_k <= q} is exactly one class.
  kSoftmaxComplementQuantile,
};

std::string_view score_kind_name(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view name);

struct CalibrationProfile {
  double alpha = 0.9;
  // nullopt is DEFER_ALL: no threshold reached the target, defer everything.
  std::optional<double> threshold;
  ScoreKind score_kind = ScoreKind::kSoftmaxComplement;
  std::uint64_t calibration_size = 0;

  bool defer_all() const { return !threshold.has_value(); }
  bool operator==(const CalibrationProfile&) const = default;
};

struct Prediction {
  std::uint32_t cls = 0;
  double confidence = 0;
  bool operator==(const Prediction&) const = default;
};

// Either a prediction or a deferral to the language model.
struct GateDecision {
  std::optional<Prediction> prediction;

  static GateDecision defer() { return {}; }
  static GateDecision predict(std::uint32_t cls, double confidence) {
    return {Prediction{cls, confidence}};
  }
  bool deferred() const { return !prediction.has_value(); }
  bool operator==(const GateDecision&) const = default;
};

// 1 - probs[cls].
double softmax_score(std::span<const double> probs, std::uint32_t cls);

// k-th smallest score with k = ceil((n + 1)(1 - alpha)); +infinity when k > n.
double conformal_quantile(std::span<const double> scores, double alpha);

// Classes whose softmax score is <= q.
std::vector<std::uint32_t> prediction_set(std::span<const double> probs, double q);

// Smallest observed max-probability q whose covered validation instances
// (max >= q) reach precision >= alpha. DEFER_ALL when none does.
CalibrationProfile calibrate_threshold(std::span<const std::vector<double>> valid_probs,
                                       std::span<const std::uint32_t> valid_labels, double alpha);

// Split-conformal calibration of the softmax-complement score of the true
// class; the profile holds the quantile (possibly +infinity).
CalibrationProfile calibrate_score_quantile(std::span<const std::vector<double>> valid_probs,
                                            std::span<const std::uint32_t> valid_labels,
                                            double alpha);

enum class CalibrationMethod { kPrecisionThreshold, kScoreQuantile };

// Runs the probe over `valid` and calibrates with `method`.
CalibrationProfile calibrate(const ProbeModel& model, const LabeledDataset& valid, double alpha,
                             CalibrationMethod method = CalibrationMethod::kPrecisionThreshold);

GateDecision gate_probs(const CalibrationProfile& profile, std::span<const double> probs);
GateDecision gate(const ProbeModel& model, const CalibrationProfile& profile,
                  std::span<const float> vector);

std::string profile_to_json(const CalibrationProfile& profile);
CalibrationProfile profile_from_json(const std::string& text);
void save_profile(const CalibrationProfile& profile, const std::filesystem::path& path);
CalibrationProfile load_profile(const std::filesystem::path& path);

}  // namespace probeguard
