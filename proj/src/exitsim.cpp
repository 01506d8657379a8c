#include "probeguard/exitsim.hpp"

#include <cstdio>
#include <unordered_map>

#include "json.hpp"
#include "probeguard/error.hpp"
#include "probeguard/evaluation.hpp"
#include "probeguard/labelers.hpp"

namespace probeguard {
namespace {

using json = nlohmann::ordered_json;

json optional_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::vector<PairedRecord> pair_records(const LabeledDataset& activations,
                                       std::span<const TranscriptRecord> transcripts) {
  std::unordered_map<std::string, const TranscriptRecord*> by_id;
  for (const auto& t : transcripts) {
    if (!by_id.emplace(t.record_id, &t).second) {
      throw ValidationError("duplicate transcript id '" + t.record_id + "'");
    }
  }
  if (by_id.size() != activations.size()) {
    throw ValidationError("misaligned inputs: " + std::to_string(activations.size()) +
                          " activations vs " + std::to_string(by_id.size()) + " transcripts");
  }
  std::vector<PairedRecord> out;
  out.reserve(activations.size());
  for (const auto& a : activations.records) {
    auto it = by_id.find(a.record_id);
    if (it == by_id.end()) {
      throw ValidationError("misaligned inputs: no transcript for record '" + a.record_id + "'");
    }
    out.push_back({a, *it->second});
    by_id.erase(it);
  }
  return out;
}

ExitReport simulate_early_exit(std::span<const PairedRecord> records, const ProbeModel& model,
                               const CalibrationProfile& profile) {
  if (records.empty()) throw ValidationError("early-exit simulation needs at least one instance");
  ExitReport report;
  report.n_instances = records.size();
  std::size_t cot_correct = 0;
  std::size_t method_correct = 0;
  std::uint64_t saved = 0;
  for (const auto& rec : records) {
    const auto& t = rec.transcript;
    if (t.record_id != rec.activation.record_id) {
      throw ValidationError("misaligned pair: '" + rec.activation.record_id + "' vs '" +
                            t.record_id + "'");
    }
    if (!t.gold_label) throw ValidationError("transcript '" + t.record_id + "' lacks gold_label");
    if (!t.options) throw ValidationError("transcript '" + t.record_id + "' lacks options");

    ExitInstance inst;
    inst.record_id = t.record_id;
    inst.gold = *t.gold_label;
    inst.cot_class = parse_cot_answer(t.output_text, *t.options);
    inst.decision = gate(model, profile, rec.activation.vector);

    const bool cot_right = inst.cot_class && *inst.cot_class == inst.gold;
    cot_correct += cot_right ? 1 : 0;
    report.cot_passes += rec.activation.output_token_count;
    if (inst.decision.deferred()) {
      method_correct += cot_right ? 1 : 0;
    } else {
      ++report.n_exited;
      method_correct += inst.decision.prediction->cls == inst.gold ? 1 : 0;
      inst.tokens_saved = rec.activation.output_token_count;
      saved += inst.tokens_saved;
    }
    report.instances.push_back(std::move(inst));
  }
  const auto n = static_cast<double>(records.size());
  report.cot_accuracy = static_cast<double>(cot_correct) / n;
  report.method_accuracy = static_cast<double>(method_correct) / n;
  report.method_passes = report.cot_passes - saved;
  report.accuracy_loss = accuracy_loss(report.cot_accuracy, report.method_accuracy);
  report.cost_reduction = inference_cost_reduction(report.cot_passes, report.method_passes);
  return report;
}

OverrideReport simulate_abstention_override(std::span<const PairedRecord> records,
                                            const ProbeModel& model,
                                            const CalibrationProfile& profile,
                                            std::uint32_t failure_class) {
  OverrideReport report;
  report.n_instances = records.size();
  std::size_t correct_overrides = 0;
  for (const auto& rec : records) {
    const auto& t = rec.transcript;
    if (!t.should_abstain) {
      throw ValidationError("transcript '" + t.record_id + "' lacks should_abstain");
    }
    const bool should_abstain = *t.should_abstain;
    const bool failed = should_abstain && !is_abstention(t.output_text);
    const auto decision = gate(model, profile, rec.activation.vector);
    const bool overridden = !decision.deferred() && decision.prediction->cls == failure_class;

    report.n_should_abstain += should_abstain ? 1 : 0;
    report.n_failures += failed ? 1 : 0;
    if (overridden) {
      ++report.n_overrides;
      correct_overrides += should_abstain ? 1 : 0;
      report.n_failures_caught += failed ? 1 : 0;
    }
  }
  if (report.n_should_abstain == 0) {
    throw ValidationError("no instance should abstain; failure rates are undefined");
  }
  const auto denom = static_cast<double>(report.n_should_abstain);
  report.baseline_failure_rate = static_cast<double>(report.n_failures) / denom;
  report.post_override_failure_rate =
      static_cast<double>(report.n_failures - report.n_failures_caught) / denom;
  if (report.n_overrides > 0) {
    report.override_precision =
        static_cast<double>(correct_overrides) / static_cast<double>(report.n_overrides);
  }
  return report;
}

std::string exit_report_to_json(const ExitReport& r) {
  const json doc = {{"n_instances", r.n_instances},
                    {"n_exited", r.n_exited},
                    {"cot_accuracy", r.cot_accuracy},
                    {"method_accuracy", r.method_accuracy},
                    {"cot_passes", r.cot_passes},
                    {"method_passes", r.method_passes},
                    {"accuracy_loss", r.accuracy_loss},
                    {"cost_reduction", r.cost_reduction}};
  return doc.dump(2) + "\n";
}

std::string exit_instances_to_csv(const ExitReport& report) {
  std::string out = "record_id,decision,probe_class,cot_class,gold,tokens_saved\n";
  for (const auto& inst : report.instances) {
    out += inst.record_id;
    out += inst.decision.deferred() ? ",defer," : ",predict," + std::to_string(inst.decision.prediction->cls);
    out += ",";
    out += inst.cot_class ? std::to_string(*inst.cot_class) : "unparseable";
    out += "," + std::to_string(inst.gold) + "," + std::to_string(inst.tokens_saved) + "\n";
  }
  return out;
}

std::string override_report_to_json(const OverrideReport& r) {
  const json doc = {{"n_instances", r.n_instances},
                    {"n_should_abstain", r.n_should_abstain},
                    {"n_failures", r.n_failures},
                    {"n_overrides", r.n_overrides},
                    {"n_failures_caught", r.n_failures_caught},
                    {"baseline_failure_rate", r.baseline_failure_rate},
                    {"post_override_failure_rate", r.post_override_failure_rate},
                    {"override_precision", optional_json(r.override_precision)}};
  return doc.dump(2) + "\n";
}

}  // namespace probeguard
