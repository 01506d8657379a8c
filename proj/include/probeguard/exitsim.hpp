#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probeguard/conformal.hpp"
#include "probeguard/dataset_io.hpp"

namespace probeguard {

// An activation and its transcript, matched by record_id.
struct PairedRecord {
  ActivationRecord activation;
  TranscriptRecord transcript;
};

// Joins activations and transcripts by record_id in activation order. Every
// id must appear exactly once on both sides.
std::vector<PairedRecord> pair_records(const LabeledDataset& activations,
                                       std::span<const TranscriptRecord> transcripts);

struct ExitInstance {
  std::string record_id;
  GateDecision decision;
  std::optional<std::uint32_t> cot_class;
  std::uint32_t gold = 0;
  std::uint64_t tokens_saved = 0;
};

struct ExitReport {
  std::size_t n_instances = 0;
  std::size_t n_exited = 0;
  double cot_accuracy = 0;
  double method_accuracy = 0;
  std::uint64_t cot_passes = 0;
  std::uint64_t method_passes = 0;
  double accuracy_loss = 0;
  double cost_reduction = 0;
  std::vector<ExitInstance> instances;
};

// Gated instances answer with the probe class at zero decode cost; deferred
// ones keep the parsed CoT answer and pay output_token_count decode passes.
// Unparseable CoT answers count as wrong in both arms.
ExitReport simulate_early_exit(std::span<const PairedRecord> records, const ProbeModel& model,
                               const CalibrationProfile& profile);

struct OverrideReport {
  std::size_t n_instances = 0;
  std::size_t n_should_abstain = 0;
  std::size_t n_failures = 0;
  std::size_t n_overrides = 0;
  std::size_t n_failures_caught = 0;
  double baseline_failure_rate = 0;
  double post_override_failure_rate = 0;
  std::optional<double> override_precision;
};

// A gate prediction of `failure_class` replaces the model's output with an
// abstention. Failure = should_abstain and the model complied.
OverrideReport simulate_abstention_override(std::span<const PairedRecord> records,
                                            const ProbeModel& model,
                                            const CalibrationProfile& profile,
                                            std::uint32_t failure_class = 1);

std::string exit_report_to_json(const ExitReport& report);
std::string exit_instances_to_csv(const ExitReport& report);
std::string override_report_to_json(const OverrideReport& report);

}  // namespace probeguard
