#include "probeguard/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <span>
#include <thread>

#include "json.hpp"
#include "probeguard/error.hpp"

namespace probeguard {
namespace {

using json = nlohmann::ordered_json;

double parse_number(const std::string& text, SweepAxis axis) {
  std::size_t used = 0;
  double value = 0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) {
    throw ValidationError("sweep value '" + text + "' is not a number for axis " +
                          std::string(sweep_axis_name(axis)));
  }
  return value;
}

std::uint32_t parse_count(const std::string& text, SweepAxis axis) {
  const double v = parse_number(text, axis);
  if (v < 0 || v != std::floor(v) || v > std::numeric_limits<std::uint32_t>::max()) {
    throw ValidationError("sweep value '" + text + "' is not a non-negative integer");
  }
  return static_cast<std::uint32_t>(v);
}

// Sort key for ordering checks; "full" sorts after every count.
double order_key(const std::string& value, SweepAxis axis) {
  if (axis == SweepAxis::kNDatapoints && value == "full") {
    return std::numeric_limits<double>::infinity();
  }
  if (axis == SweepAxis::kAlpha) return parse_number(value, axis);
  return parse_count(value, axis);
}

LabeledDataset filter_by(const LabeledDataset& base,
                         const std::function<bool(const ActivationRecord&)>& keep) {
  LabeledDataset out{base.dimension, base.num_classes, {}};
  for (const auto& r : base.records) {
    if (keep(r)) out.records.push_back(r);
  }
  return out;
}

const LabeledDataset& require_base(const SweepData& data) {
  if (!data.base) throw ValidationError("this sweep axis needs a base dataset");
  return *data.base;
}

// Dataset that feeds the cells of one axis value.
LabeledDataset dataset_for(const SweepSpec& spec, const SweepData& data, const std::string& value) {
  if (auto it = data.by_value.find(value); it != data.by_value.end()) return it->second;
  const auto axis_name = std::string(sweep_axis_name(spec.axis));
  switch (spec.axis) {
    case SweepAxis::kAlpha:
    case SweepAxis::kNDatapoints:
      return require_base(data);
    case SweepAxis::kLayer:
    case SweepAxis::kTokenPosition: {
      if (!data.base) break;
      const std::uint32_t wanted = parse_count(value, spec.axis);
      const bool by_layer = spec.axis == SweepAxis::kLayer;
      auto subset = filter_by(*data.base, [&](const ActivationRecord& r) {
        return (by_layer ? r.layer_index : r.token_index) == wanted;
      });
      if (!subset.empty()) return subset;
      break;
    }
    case SweepAxis::kModelScale:
      break;
  }
  throw ValidationError("no activations available for " + axis_name + " = " + value);
}

EvalReport evaluate_cell(const ProbeModel& model, const CalibrationProfile& profile,
                         const LabeledDataset& test, const PipelineConfig& config,
                         std::uint64_t seed) {
  auto report = evaluate_gate(model, profile, test, config.positive_class);
  report.seed = std::to_string(seed);
  return report;
}

void run_parallel(std::size_t count, unsigned jobs, const std::function<void(std::size_t)>& task) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> workers;
  for (unsigned w = 0; w < std::min<std::size_t>(jobs, count); ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  workers.clear();
  if (failure) std::rethrow_exception(failure);
}

std::string csv_number(std::optional<double> v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

json optional_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

}  // namespace

PipelineResult run_pipeline(const LabeledDataset& data, const PipelineConfig& config,
                            std::uint64_t seed, std::optional<std::size_t> train_limit) {
  const LabeledDataset source = config.balance ? balance_classes(data, seed) : data;
  PipelineResult result;
  result.splits = split(source, config.fractions, seed);
  if (train_limit) {
    if (*train_limit > result.splits.train.size()) {
      throw ValidationError("requested " + std::to_string(*train_limit) +
                            " training datapoints but the train split has " +
                            std::to_string(result.splits.train.size()));
    }
    result.splits.train = subsample(result.splits.train, *train_limit, seed);
  }
  if (result.splits.valid.empty()) throw ValidationError("validation split is empty");
  if (result.splits.test.empty()) throw ValidationError("test split is empty");
  result.model = train_probe(result.splits.train, config.train, seed);
  result.profile = calibrate(result.model, result.splits.valid, config.alpha, config.method);
  result.report = evaluate_cell(result.model, result.profile, result.splits.test, config, seed);
  return result;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "n_datapoints") return SweepAxis::kNDatapoints;
  if (name == "layer") return SweepAxis::kLayer;
  if (name == "alpha") return SweepAxis::kAlpha;
  if (name == "token_position") return SweepAxis::kTokenPosition;
  if (name == "model_scale") return SweepAxis::kModelScale;
  throw ValidationError("unknown sweep axis '" + std::string(name) + "'");
}

std::string_view sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kNDatapoints: return "n_datapoints";
    case SweepAxis::kLayer: return "layer";
    case SweepAxis::kAlpha: return "alpha";
    case SweepAxis::kTokenPosition: return "token_position";
    case SweepAxis::kModelScale: return "model_scale";
  }
  return "unknown";
}

void SweepSpec::validate() const {
  if (values.empty()) throw ValidationError("sweep needs at least one axis value");
  if (seeds.empty()) throw ValidationError("sweep needs at least one seed");
  if (axis == SweepAxis::kModelScale) {
    if (std::set<std::string>(values.begin(), values.end()).size() != values.size()) {
      throw ValidationError("model_scale values must be distinct");
    }
    return;
  }
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (!(order_key(values[i - 1], axis) < order_key(values[i], axis))) {
      throw ValidationError("sweep values must be strictly increasing");
    }
  }
  if (axis == SweepAxis::kAlpha) {
    for (const auto& v : values) {
      const double a = parse_number(v, axis);
      if (!(a > 0 && a < 1)) throw ValidationError("alpha values must lie in (0, 1)");
    }
  }
  order_key(values.front(), axis);
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const SweepData& data) {
  spec.validate();
  const std::string axis_name(sweep_axis_name(spec.axis));
  const std::size_t n_values = spec.values.size();
  const std::size_t n_seeds = spec.seeds.size();

  // Resolve every value's data before any training starts.
  std::vector<LabeledDataset> sources;
  if (spec.axis != SweepAxis::kAlpha) {
    for (const auto& v : spec.values) sources.push_back(dataset_for(spec, data, v));
  }

  std::vector<EvalReport> cells(n_values * n_seeds);
  if (spec.axis == SweepAxis::kAlpha) {
    const LabeledDataset& base = require_base(data);
    run_parallel(n_seeds, spec.jobs, [&](std::size_t s) {
      const auto seed = spec.seeds[s];
      const auto trained = run_pipeline(base, spec.base, seed);
      for (std::size_t v = 0; v < n_values; ++v) {
        const double alpha = parse_number(spec.values[v], spec.axis);
        const auto profile =
            calibrate(trained.model, trained.splits.valid, alpha, spec.base.method);
        cells[v * n_seeds + s] =
            evaluate_cell(trained.model, profile, trained.splits.test, spec.base, seed);
      }
    });
  } else {
    run_parallel(cells.size(), spec.jobs, [&](std::size_t cell) {
      const std::size_t v = cell / n_seeds;
      const auto seed = spec.seeds[cell % n_seeds];
      std::optional<std::size_t> limit;
      if (spec.axis == SweepAxis::kNDatapoints && spec.values[v] != "full") {
        limit = parse_count(spec.values[v], spec.axis);
      }
      cells[cell] = run_pipeline(sources[v], spec.base, seed, limit).report;
    });
  }

  std::vector<SweepRow> rows;
  rows.reserve(cells.size() + n_values);
  for (std::size_t v = 0; v < n_values; ++v) {
    const std::span<const EvalReport> per_seed(cells.data() + v * n_seeds, n_seeds);
    for (const auto& r : per_seed) rows.push_back({axis_name, spec.values[v], r.seed, r});
    rows.push_back({axis_name, spec.values[v], "aggregate", aggregate_seeds(per_seed)});
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::string out = "axis,value,seed,consistency,coverage,precision,recall\n";
  for (const auto& row : rows) {
    out += row.axis + "," + row.value + "," + row.seed + "," + csv_number(row.report.consistency) +
           "," + csv_number(row.report.coverage) + "," + csv_number(row.report.precision) + "," +
           csv_number(row.report.recall) + "\n";
  }
  return out;
}

std::string sweep_to_json(const std::vector<SweepRow>& rows) {
  json out = json::array();
  for (const auto& row : rows) {
    json obj = {{"axis", row.axis},
                {"value", row.value},
                {"seed", row.seed},
                {"consistency", optional_json(row.report.consistency)},
                {"coverage", row.report.coverage},
                {"precision", optional_json(row.report.precision)},
                {"recall", optional_json(row.report.recall)},
                {"n_total", row.report.n_total},
                {"n_covered", row.report.n_covered}};
    if (row.seed == "aggregate") {
      obj["consistency_2sigma"] = optional_json(row.report.consistency_half_width);
      obj["coverage_2sigma"] = row.report.coverage_half_width;
      obj["precision_2sigma"] = optional_json(row.report.precision_half_width);
      obj["recall_2sigma"] = optional_json(row.report.recall_half_width);
    }
    out.push_back(std::move(obj));
  }
  return out.dump(2) + "\n";
}

}  // namespace probeguard
