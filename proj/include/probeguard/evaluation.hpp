#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "probeguard/conformal.hpp"

namespace probeguard {

// Metrics of one gated evaluation. Optional metrics are undefined when their
// denominator is zero (shown as "—"). Half-widths are 2 sample standard
// deviations and are only non-zero on aggregated reports.
struct EvalReport {
  std::string dataset;
  std::string seed;
  std::optional<double> consistency;
  double coverage = 0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::size_t n_total = 0;
  std::size_t n_covered = 0;

  std::optional<double> consistency_half_width;
  double coverage_half_width = 0;
  std::optional<double> precision_half_width;
  std::optional<double> recall_half_width;
};

std::optional<double> estimation_consistency(std::span<const GateDecision> decisions,
                                             std::span<const std::uint32_t> labels);

double coverage(std::span<const GateDecision> decisions);

// Precision over covered predictions of `positive_class`; recall over every
// positive label, deferred ones included.
std::pair<std::optional<double>, std::optional<double>> precision_recall(
    std::span<const GateDecision> decisions, std::span<const std::uint32_t> labels,
    std::uint32_t positive_class);

double accuracy_loss(double cot_accuracy, double method_accuracy);

double inference_cost_reduction(std::uint64_t cot_passes, std::uint64_t method_passes);

std::optional<double> pearson_correlation(std::span<const double> a, std::span<const double> b);

// Mean of every metric across seeds with 2-sigma half-widths. Undefined
// per-seed values are skipped; counts are summed.
EvalReport aggregate_seeds(std::span<const EvalReport> per_seed_reports);

EvalReport evaluate_decisions(std::span<const GateDecision> decisions,
                              std::span<const std::uint32_t> labels, std::uint32_t positive_class);

// Gates every record of `data` and scores the decisions.
EvalReport evaluate_gate(const ProbeModel& model, const CalibrationProfile& profile,
                         const LabeledDataset& data, std::uint32_t positive_class = 1);

// "—" for undefined values, otherwise %.6f.
std::string format_metric(std::optional<double> value);

std::string reports_to_json(std::span<const EvalReport> per_seed, const EvalReport& aggregate);
std::string reports_to_csv(std::span<const EvalReport> per_seed, const EvalReport& aggregate);

}  // namespace probeguard
