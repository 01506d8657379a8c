#include "probeguard/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>

#include "json.hpp"
#include "probeguard/error.hpp"

namespace probeguard {
namespace {

using json = nlohmann::ordered_json;

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw ValidationError("decisions and labels differ in length");
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

struct Summary {
  std::optional<double> mean;
  std::optional<double> half_width;
};

Summary summarize(const std::vector<double>& values) {
  if (values.empty()) return {};
  double sum = 0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, 2.0 * std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

json optional_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

std::string csv_number(std::optional<double> v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

json report_json(const EvalReport& r) {
  return {{"dataset", r.dataset},
          {"seed", r.seed},
          {"consistency", optional_json(r.consistency)},
          {"coverage", r.coverage},
          {"precision", optional_json(r.precision)},
          {"recall", optional_json(r.recall)},
          {"n_total", r.n_total},
          {"n_covered", r.n_covered},
          {"consistency_2sigma", optional_json(r.consistency_half_width)},
          {"coverage_2sigma", r.coverage_half_width},
          {"precision_2sigma", optional_json(r.precision_half_width)},
          {"recall_2sigma", optional_json(r.recall_half_width)}};
}

std::string report_csv_row(const EvalReport& r) {
  return r.dataset + "," + r.seed + "," + csv_number(r.consistency) + "," +
         csv_number(r.coverage) + "," + csv_number(r.precision) + "," + csv_number(r.recall) +
         "," + std::to_string(r.n_total) + "," + std::to_string(r.n_covered) + "," +
         csv_number(r.consistency_half_width) + "," + csv_number(r.coverage_half_width) + "," +
         csv_number(r.precision_half_width) + "," + csv_number(r.recall_half_width) + "\n";
}

}  // namespace

std::optional<double> estimation_consistency(std::span<const GateDecision> decisions,
                                             std::span<const std::uint32_t> labels) {
  check_lengths(decisions.size(), labels.size());
  std::size_t covered = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i].deferred()) continue;
    ++covered;
    if (decisions[i].prediction->cls == labels[i]) ++correct;
  }
  return ratio(correct, covered);
}

double coverage(std::span<const GateDecision> decisions) {
  if (decisions.empty()) throw ValidationError("coverage of an empty decision list");
  std::size_t covered = 0;
  for (const auto& d : decisions) covered += d.deferred() ? 0 : 1;
  return static_cast<double>(covered) / static_cast<double>(decisions.size());
}

std::pair<std::optional<double>, std::optional<double>> precision_recall(
    std::span<const GateDecision> decisions, std::span<const std::uint32_t> labels,
    std::uint32_t positive_class) {
  check_lengths(decisions.size(), labels.size());
  std::size_t predicted_positive = 0;
  std::size_t true_positive = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const bool is_positive = labels[i] == positive_class;
    positives += is_positive ? 1 : 0;
    if (!decisions[i].deferred() && decisions[i].prediction->cls == positive_class) {
      ++predicted_positive;
      true_positive += is_positive ? 1 : 0;
    }
  }
  return {ratio(true_positive, predicted_positive), ratio(true_positive, positives)};
}

double accuracy_loss(double cot_accuracy, double method_accuracy) {
  if (!(cot_accuracy >= 0 && cot_accuracy <= 1 && method_accuracy >= 0 && method_accuracy <= 1)) {
    throw ValidationError("accuracies must lie in [0, 1]");
  }
  return cot_accuracy - method_accuracy;
}

double inference_cost_reduction(std::uint64_t cot_passes, std::uint64_t method_passes) {
  if (cot_passes == 0) throw ValidationError("CoT forward-pass count must be positive");
  if (method_passes > cot_passes) {
    throw ValidationError("method forward passes exceed the CoT forward passes");
  }
  return static_cast<double>(cot_passes - method_passes) / static_cast<double>(cot_passes);
}

std::optional<double> pearson_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("correlation series differ in length");
  if (a.size() < 2) throw ValidationError("correlation needs at least two points");
  const auto n = static_cast<double>(a.size());
  double mean_a = 0;
  double mean_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= n;
  mean_b /= n;
  double sab = 0;
  double saa = 0;
  double sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

EvalReport aggregate_seeds(std::span<const EvalReport> per_seed_reports) {
  if (per_seed_reports.empty()) throw ValidationError("no reports to aggregate");
  std::vector<double> consistency, cov, precision, recall;
  EvalReport out;
  out.dataset = per_seed_reports.front().dataset;
  out.seed = "aggregate";
  for (const auto& r : per_seed_reports) {
    if (r.consistency) consistency.push_back(*r.consistency);
    cov.push_back(r.coverage);
    if (r.precision) precision.push_back(*r.precision);
    if (r.recall) recall.push_back(*r.recall);
    out.n_total += r.n_total;
    out.n_covered += r.n_covered;
  }
  const auto c = summarize(consistency);
  const auto v = summarize(cov);
  const auto p = summarize(precision);
  const auto rc = summarize(recall);
  out.consistency = c.mean;
  out.consistency_half_width = c.half_width;
  out.coverage = *v.mean;
  out.coverage_half_width = *v.half_width;
  out.precision = p.mean;
  out.precision_half_width = p.half_width;
  out.recall = rc.mean;
  out.recall_half_width = rc.half_width;
  return out;
}

EvalReport evaluate_decisions(std::span<const GateDecision> decisions,
                              std::span<const std::uint32_t> labels,
                              std::uint32_t positive_class) {
  check_lengths(decisions.size(), labels.size());
  EvalReport r;
  r.n_total = decisions.size();
  for (const auto& d : decisions) r.n_covered += d.deferred() ? 0 : 1;
  r.consistency = estimation_consistency(decisions, labels);
  r.coverage = decisions.empty() ? 0.0 : coverage(decisions);
  std::tie(r.precision, r.recall) = precision_recall(decisions, labels, positive_class);
  return r;
}

EvalReport evaluate_gate(const ProbeModel& model, const CalibrationProfile& profile,
                         const LabeledDataset& data, std::uint32_t positive_class) {
  if (data.empty()) throw ValidationError("cannot evaluate on an empty dataset");
  std::vector<GateDecision> decisions;
  std::vector<std::uint32_t> labels;
  decisions.reserve(data.size());
  labels.reserve(data.size());
  for (const auto& rec : data.records) {
    decisions.push_back(gate(model, profile, rec.vector));
    labels.push_back(rec.label);
  }
  auto report = evaluate_decisions(decisions, labels, positive_class);
  report.dataset = data.records.front().dataset_name;
  report.seed = std::to_string(model.seed);
  return report;
}

std::string format_metric(std::optional<double> value) {
  if (!value) return "\xe2\x80\x94";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", *value);
  return buf;
}

std::string reports_to_json(std::span<const EvalReport> per_seed, const EvalReport& aggregate) {
  json rows = json::array();
  for (const auto& r : per_seed) rows.push_back(report_json(r));
  return json{{"per_seed", rows}, {"aggregate", report_json(aggregate)}}.dump(2) + "\n";
}

std::string reports_to_csv(std::span<const EvalReport> per_seed, const EvalReport& aggregate) {
  std::string out =
      "dataset,seed,consistency,coverage,precision,recall,n_total,n_covered,"
      "consistency_2sigma,coverage_2sigma,precision_2sigma,recall_2sigma\n";
  for (const auto& r : per_seed) out += report_csv_row(r);
  out += report_csv_row(aggregate);
  return out;
}

}  // namespace probeguard
