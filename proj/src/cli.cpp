#include "probeguard/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "probeguard/ablation.hpp"
#include "probeguard/conformal.hpp"
#include "probeguard/dataset_io.hpp"
#include "probeguard/error.hpp"
#include "probeguard/evaluation.hpp"
#include "probeguard/exitsim.hpp"
#include "probeguard/labelers.hpp"
#include "probeguard/probe.hpp"

namespace probeguard::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct CommonOptions {
  std::string out_dir;
  bool out_dir_flag = false;
};

struct TrainOptions {
  TrainConfig config;
  bool no_standardize = false;
  bool no_cosine = false;

  TrainConfig resolved() const {
    TrainConfig c = config;
    c.standardize = !no_standardize;
    c.cosine_decay = !no_cosine;
    return c;
  }
};

void add_train_flags(CLI::App& cmd, TrainOptions& t) {
  cmd.add_option("--lr", t.config.learning_rate, "Learning rate")->capture_default_str();
  cmd.add_option("--epochs", t.config.epochs, "Training epochs")->capture_default_str();
  cmd.add_option("--l2", t.config.l2, "L2 regularization strength")->capture_default_str();
  cmd.add_option("--batch-size", t.config.batch_size, "Mini-batch size, 0 for full batch")
      ->capture_default_str();
  cmd.add_flag("--no-standardize", t.no_standardize, "Skip per-feature standardization");
  cmd.add_flag("--no-cosine", t.no_cosine, "Constant learning rate");
}

SplitFractions to_fractions(const std::vector<double>& v) {
  if (v.size() != 3) throw ValidationError("--split needs exactly three fractions");
  return {v[0], v[1], v[2]};
}

// Relative artifact paths land in the output directory; absolute ones are
// used as given.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  fs::path resolve(const std::string& name) const {
    const fs::path p(name);
    return p.is_absolute() ? p : root_ / p;
  }

  void write(const std::string& name, const std::string& text) const {
    const auto path = resolve(name);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error("write failed for " + path.string());
  }

  void prepare() const {
    if (!root_.empty()) fs::create_directories(root_);
  }

 private:
  fs::path root_;
};

std::string twin_json_name(const std::string& csv_name) {
  fs::path p(csv_name);
  p.replace_extension(".json");
  return p.string();
}

std::string decisions_to_jsonl(const LabeledDataset& data, const std::vector<GateDecision>& ds) {
  std::string text;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    json obj = {{"record_id", data.records[i].record_id}};
    if (ds[i].deferred()) {
      obj["decision"] = "defer";
    } else {
      obj["decision"] = "predict";
      obj["class"] = ds[i].prediction->cls;
      obj["confidence"] = ds[i].prediction->confidence;
    }
    text += obj.dump() + "\n";
  }
  return text;
}

std::string describe_threshold(const CalibrationProfile& p) {
  if (p.defer_all()) return "DEFER_ALL";
  return format_metric(*p.threshold);
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conformal hidden-state probes: label, train, calibrate, gate and evaluate",
               "probeguard"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOptions common;
  app.add_option("--out-dir", common.out_dir,
                 "Directory for relative artifact paths (default: $PROBEGUARD_OUT or .)");
  std::uint64_t seed = 0;
  double alpha = 0.9;

  // label
  auto* label_cmd = app.add_subcommand("label", "Turn transcripts into behavior labels");
  std::string task_name, transcripts_path, labels_out = "labels.jsonl";
  std::string activations_path, dataset_out = "labeled.cpad";
  bool no_balance = false;
  label_cmd->add_option("--task", task_name, "bullets|json|abstention|cot|perplexity|verbal")
      ->required()
      ->check(CLI::IsMember({"bullets", "json", "abstention", "cot", "perplexity", "verbal"}));
  label_cmd->add_option("--transcripts", transcripts_path, "Transcript JSONL")->required();
  label_cmd->add_option("--out", labels_out, "Labels JSONL")->capture_default_str();
  label_cmd->add_option("--activations", activations_path,
                        "Activation file to attach the labels to");
  label_cmd->add_option("--dataset-out", dataset_out, "Labeled activation file")
      ->capture_default_str();
  label_cmd->add_flag("--no-balance", no_balance, "Keep the class imbalance");
  label_cmd->add_option("--seed", seed, "Balancing seed")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a linear probe");
  std::string data_path, model_out = "model.json", split_prefix = "split";
  std::vector<double> split_fractions;
  bool balance = false;
  TrainOptions train_opts;
  train_cmd->add_option("--data", data_path, "Labeled activations (.cpad or .jsonl)")
      ->required();
  train_cmd->add_option("--seed", seed, "Training seed")->capture_default_str();
  train_cmd->add_option("--out", model_out, "Model JSON")->capture_default_str();
  train_cmd->add_option("--split", split_fractions,
                        "train,valid,test fractions; writes the splits and trains on train")
      ->delimiter(',')
      ->expected(3);
  train_cmd->add_option("--split-prefix", split_prefix, "File prefix for written splits")
      ->capture_default_str();
  train_cmd->add_flag("--balance", balance, "Balance classes before splitting");
  add_train_flags(*train_cmd, train_opts);

  // calibrate
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Calibrate a conformal threshold");
  std::string model_path, valid_path, profile_out = "profile.json", method_name = "threshold";
  calibrate_cmd->add_option("--model", model_path, "Model JSON")->required();
  calibrate_cmd->add_option("--valid", valid_path, "Validation activations")->required();
  calibrate_cmd->add_option("--alpha", alpha, "Target precision / confidence level")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  calibrate_cmd->add_option("--method", method_name, "threshold|quantile")
      ->check(CLI::IsMember({"threshold", "quantile"}))
      ->capture_default_str();
  calibrate_cmd->add_option("--out", profile_out, "Profile JSON")->capture_default_str();

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score gated predictions");
  std::vector<std::string> model_paths, profile_paths, data_paths;
  std::uint32_t positive_class = 1;
  std::string report_out = "report.json", csv_out = "report.csv";
  evaluate_cmd->add_option("--model", model_paths, "Model JSON (repeat once per seed)")
      ->required();
  evaluate_cmd->add_option("--profile", profile_paths, "Profile JSON matching each --model")
      ->required();
  evaluate_cmd->add_option("--data", data_paths, "Test activations (repeatable)")->required();
  evaluate_cmd->add_option("--positive-class", positive_class)->capture_default_str();
  evaluate_cmd->add_option("--out", report_out, "Report JSON")->capture_default_str();
  evaluate_cmd->add_option("--csv", csv_out, "Report CSV")->capture_default_str();

  // gate
  auto* gate_cmd = app.add_subcommand("gate", "Emit per-record predict/defer decisions");
  std::string profile_path, decisions_out = "decisions.jsonl";
  gate_cmd->add_option("--model", model_path)->required();
  gate_cmd->add_option("--profile", profile_path)->required();
  gate_cmd->add_option("--data", data_path)->required();
  gate_cmd->add_option("--out", decisions_out)->capture_default_str();

  // simulate-exit
  auto* exit_cmd = app.add_subcommand("simulate-exit", "Replay CoT transcripts with early exit");
  std::string exit_out = "exit.json", rows_out = "exit_rows.csv";
  exit_cmd->add_option("--model", model_path)->required();
  exit_cmd->add_option("--profile", profile_path)->required();
  exit_cmd->add_option("--activations", activations_path)->required();
  exit_cmd->add_option("--transcripts", transcripts_path)->required();
  exit_cmd->add_option("--out", exit_out)->capture_default_str();
  exit_cmd->add_option("--rows", rows_out)->capture_default_str();

  // simulate-override
  auto* override_cmd =
      app.add_subcommand("simulate-override", "Replay abstention transcripts with overrides");
  std::string override_out = "override.json";
  std::uint32_t failure_class = 1;
  override_cmd->add_option("--model", model_path)->required();
  override_cmd->add_option("--profile", profile_path)->required();
  override_cmd->add_option("--activations", activations_path)->required();
  override_cmd->add_option("--transcripts", transcripts_path)->required();
  override_cmd->add_option("--failure-class", failure_class)->capture_default_str();
  override_cmd->add_option("--out", override_out)->capture_default_str();

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Run an ablation sweep");
  std::string axis_name, sweep_out = "sweep.csv";
  std::vector<std::string> axis_values, sources;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<double> ablate_split;
  unsigned jobs = 1;
  TrainOptions ablate_train;
  ablate_cmd->add_option("--axis", axis_name, "n_datapoints|layer|alpha|token_position|model_scale")
      ->required()
      ->check(CLI::IsMember({"n_datapoints", "layer", "alpha", "token_position", "model_scale"}));
  ablate_cmd->add_option("--values", axis_values, "Comma-separated axis values")
      ->required()
      ->delimiter(',');
  ablate_cmd->add_option("--data", data_path, "Base labeled activations");
  ablate_cmd->add_option("--source", sources, "VALUE=PATH dataset for one axis value");
  ablate_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
  ablate_cmd->add_option("--alpha", alpha)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  ablate_cmd->add_option("--split", ablate_split, "train,valid,test fractions")
      ->delimiter(',')
      ->expected(3);
  ablate_cmd->add_flag("--no-balance", no_balance, "Skip class balancing");
  ablate_cmd->add_option("--positive-class", positive_class)->capture_default_str();
  ablate_cmd->add_option("--jobs", jobs, "Parallel sweep cells")->capture_default_str();
  ablate_cmd->add_option("--out", sweep_out, "Sweep CSV; a .json twin is written beside it")
      ->capture_default_str();
  add_train_flags(*ablate_cmd, ablate_train);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsageError;
  }

  std::string root = ".";
  if (const char* env = std::getenv("PROBEGUARD_OUT"); env && *env) root = env;
  if (app.get_option("--out-dir")->count() > 0) root = common.out_dir;
  const OutputDir output(root);

  try {
    output.prepare();

    if (label_cmd->parsed()) {
      const auto task = parse_label_task(task_name);
      const auto transcripts = read_transcripts(transcripts_path);
      const auto labels = label_transcripts(task, transcripts);
      output.write(labels_out, labels_to_jsonl(labels));
      std::size_t excluded = 0;
      for (const auto& l : labels) excluded += l.excluded ? 1 : 0;
      out << "labeled " << labels.size() << " transcripts (" << excluded << " excluded)\n";
      if (!activations_path.empty()) {
        auto dataset = apply_labels(load_dataset(activations_path), labels,
                                    label_task_classes(task, transcripts));
        if (!no_balance) dataset = balance_classes(dataset, seed);
        save_dataset(dataset, output.resolve(dataset_out));
        out << "wrote " << dataset.size() << " labeled activations\n";
      }
    } else if (train_cmd->parsed()) {
      LabeledDataset data = load_dataset(data_path);
      if (balance) data = balance_classes(data, seed);
      if (!split_fractions.empty()) {
        auto parts = split(data, to_fractions(split_fractions), seed);
        save_dataset(parts.train, output.resolve(split_prefix + ".train.cpad"));
        save_dataset(parts.valid, output.resolve(split_prefix + ".valid.cpad"));
        save_dataset(parts.test, output.resolve(split_prefix + ".test.cpad"));
        data = std::move(parts.train);
      }
      const auto model = train_probe(data, train_opts.resolved(), seed);
      output.write(model_out, probe_to_json(model));
      out << "trained probe d=" << model.dimension << " c=" << model.num_classes
          << " train accuracy " << format_metric(accuracy(model, data)) << "\n";
    } else if (calibrate_cmd->parsed()) {
      const auto model = load_probe(model_path);
      const auto valid = load_dataset(valid_path);
      const auto method = method_name == "quantile" ? CalibrationMethod::kScoreQuantile
                                                    : CalibrationMethod::kPrecisionThreshold;
      const auto profile = calibrate(model, valid, alpha, method);
      output.write(profile_out, profile_to_json(profile));
      if (profile.defer_all()) {
        err << "warning: no threshold reaches precision " << alpha
            << " on the validation set; the profile defers on all instances\n";
      }
      out << "threshold " << describe_threshold(profile) << " from " << profile.calibration_size
          << " validation records\n";
    } else if (evaluate_cmd->parsed()) {
      if (model_paths.size() != profile_paths.size()) {
        throw ValidationError("--model and --profile must be given the same number of times");
      }
      std::vector<EvalReport> reports;
      for (const auto& dp : data_paths) {
        const auto data = load_dataset(dp);
        for (std::size_t i = 0; i < model_paths.size(); ++i) {
          auto report = evaluate_gate(load_probe(model_paths[i]), load_profile(profile_paths[i]),
                                      data, positive_class);
          if (report.dataset.empty()) report.dataset = fs::path(dp).stem().string();
          reports.push_back(std::move(report));
        }
      }
      const auto aggregate = aggregate_seeds(reports);
      output.write(report_out, reports_to_json(reports, aggregate));
      output.write(csv_out, reports_to_csv(reports, aggregate));
      out << "consistency " << format_metric(aggregate.consistency) << " coverage "
          << format_metric(aggregate.coverage) << " precision "
          << format_metric(aggregate.precision) << " recall " << format_metric(aggregate.recall)
          << "\n";
    } else if (gate_cmd->parsed()) {
      const auto model = load_probe(model_path);
      const auto profile = load_profile(profile_path);
      const auto data = load_dataset(data_path);
      std::vector<GateDecision> decisions;
      decisions.reserve(data.size());
      for (const auto& r : data.records) decisions.push_back(gate(model, profile, r.vector));
      output.write(decisions_out, decisions_to_jsonl(data, decisions));
      out << "coverage " << format_metric(decisions.empty() ? 0.0 : coverage(decisions)) << "\n";
    } else if (exit_cmd->parsed()) {
      const auto paired =
          pair_records(load_dataset(activations_path), read_transcripts(transcripts_path));
      const auto report =
          simulate_early_exit(paired, load_probe(model_path), load_profile(profile_path));
      output.write(exit_out, exit_report_to_json(report));
      output.write(rows_out, exit_instances_to_csv(report));
      out << "accuracy loss " << format_metric(report.accuracy_loss) << " cost reduction "
          << format_metric(report.cost_reduction) << "\n";
    } else if (override_cmd->parsed()) {
      const auto paired =
          pair_records(load_dataset(activations_path), read_transcripts(transcripts_path));
      const auto report = simulate_abstention_override(paired, load_probe(model_path),
                                                       load_profile(profile_path), failure_class);
      output.write(override_out, override_report_to_json(report));
      out << "failure-to-abstain rate " << format_metric(report.baseline_failure_rate) << " -> "
          << format_metric(report.post_override_failure_rate) << "\n";
    } else if (ablate_cmd->parsed()) {
      SweepSpec spec;
      spec.axis = parse_sweep_axis(axis_name);
      spec.values = axis_values;
      spec.seeds = seeds;
      spec.jobs = jobs;
      spec.base.alpha = alpha;
      spec.base.balance = !no_balance;
      spec.base.positive_class = positive_class;
      spec.base.train = ablate_train.resolved();
      if (!ablate_split.empty()) spec.base.fractions = to_fractions(ablate_split);
      SweepData data;
      if (!data_path.empty()) data.base = load_dataset(data_path);
      for (const auto& s : sources) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) {
          throw ValidationError("--source expects VALUE=PATH, got '" + s + "'");
        }
        data.by_value.emplace(s.substr(0, eq), load_dataset(s.substr(eq + 1)));
      }
      const auto rows = run_sweep(spec, data);
      output.write(sweep_out, sweep_to_csv(rows));
      output.write(twin_json_name(sweep_out), sweep_to_json(rows));
      out << "wrote " << rows.size() << " sweep rows\n";
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitDataError;
  }
  return kExitOk;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace probeguard::cli
