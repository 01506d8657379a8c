#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "probeguard/conformal.hpp"
#include "probeguard/dataset_io.hpp"
#include "probeguard/evaluation.hpp"
#include "probeguard/probe.hpp"

namespace probeguard {

// Settings shared by every cell of the balance -> split -> train -> calibrate
// -> evaluate pipeline.
struct PipelineConfig {
  double alpha = 0.9;
  SplitFractions fractions;
  TrainConfig train;
  bool balance = true;
  std::uint32_t positive_class = 1;
  CalibrationMethod method = CalibrationMethod::kPrecisionThreshold;
};

struct PipelineResult {
  DatasetSplits splits;
  ProbeModel model;
  CalibrationProfile profile;
  EvalReport report;
};

// One seed of the pipeline. When `train_limit` is set the train split is
// subsampled to that many records first.
PipelineResult run_pipeline(const LabeledDataset& data, const PipelineConfig& config,
                            std::uint64_t seed, std::optional<std::size_t> train_limit = {});

enum class SweepAxis { kNDatapoints, kLayer, kAlpha, kTokenPosition, kModelScale };

SweepAxis parse_sweep_axis(std::string_view name);
std::string_view sweep_axis_name(SweepAxis axis);

struct SweepSpec {
  SweepAxis axis = SweepAxis::kAlpha;
  // Axis values as written; "full" is accepted for n_datapoints.
  std::vector<std::string> values;
  PipelineConfig base;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  unsigned jobs = 1;

  // Throws ValidationError unless values are non-empty and strictly ordered.
  void validate() const;
};

// Datasets feeding a sweep. Layer, token-position and model-scale values are
// looked up in `by_value` first; layer and token-position values fall back to
// filtering `base` on the record metadata.
struct SweepData {
  std::optional<LabeledDataset> base;
  std::map<std::string, LabeledDataset> by_value;
};

struct SweepRow {
  std::string axis;
  std::string value;
  std::string seed;  // seed number, or "aggregate"
  EvalReport report;
};

// One row per (value, seed) followed by each value's aggregate row, ordered
// by value then seed. The alpha axis trains one probe per seed and only
// recalibrates.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const SweepData& data);

std::string sweep_to_csv(const std::vector<SweepRow>& rows);
std::string sweep_to_json(const std::vector<SweepRow>& rows);

}  // namespace probeguard
