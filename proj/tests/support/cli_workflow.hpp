#pragma once

// Drives every CLI subcommand over a small generated corpus. Inputs go to
// <root>/in, artifacts to the given output directory.

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "probeguard/cli.hpp"
#include "probeguard/dataset_io.hpp"
#include "support/synthetic.hpp"

namespace probeguard::testing {

struct CliCall {
  std::string name;
  std::vector<std::string> args;
};

struct CliOutcome {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliOutcome run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

// Unlabeled activations plus bullet, CoT and abstention transcripts keyed by
// the same ids. The sign of the first feature decides every behavior.
inline void write_cli_inputs(const std::filesystem::path& in) {
  std::filesystem::create_directories(in);
  auto acts = separable_2d(400, 0.1, 17, "rec");
  std::vector<TranscriptRecord> bullets, cot, abstain;
  for (auto& r : acts.records) {
    const bool positive = r.vector[0] > 0;
    r.output_token_count = 40 + static_cast<std::uint32_t>(r.record_id.size());
    TranscriptRecord t;
    t.record_id = r.record_id;
    t.dataset_name = "synthetic";
    t.output_text = positive ? "1. one 2. two" : "1. one 2. two 3. three";
    bullets.push_back(t);

    TranscriptRecord c = t;
    c.output_text = positive ? "Reasoning. Answer: B" : "Reasoning. Answer: A";
    c.gold_label = positive ? 1u : 0u;
    c.options = std::vector<std::string>{"A", "B"};
    cot.push_back(c);

    TranscriptRecord a = t;
    a.should_abstain = true;
    a.output_text = positive ? "Sure, here it is." : "ABSTAIN";
    abstain.push_back(a);
    r.label = 0;
  }
  write_activation_file(acts, in / "acts.cpad");
  write_transcripts(bullets, in / "bullets.jsonl");
  write_transcripts(cot, in / "cot.jsonl");
  write_transcripts(abstain, in / "abstain.jsonl");
}

inline std::vector<CliCall> cli_workflow(const std::filesystem::path& in,
                                         const std::filesystem::path& out) {
  const auto o = out.string();
  const auto I = [&](const char* name) { return (in / name).string(); };
  const auto O = [&](const char* name) { return (out / name).string(); };
  return {
      {"label",
       {"label", "--out-dir", o, "--task", "bullets", "--transcripts", I("bullets.jsonl"),
        "--activations", I("acts.cpad"), "--seed", "3"}},
      {"train",
       {"train", "--out-dir", o, "--data", O("labeled.cpad"), "--seed", "1", "--split",
        "0.6,0.2,0.2", "--epochs", "60"}},
      {"calibrate",
       {"calibrate", "--out-dir", o, "--model", O("model.json"), "--valid", O("split.valid.cpad")}},
      {"evaluate",
       {"evaluate", "--out-dir", o, "--model", O("model.json"), "--profile", O("profile.json"),
        "--data", O("split.test.cpad")}},
      {"gate",
       {"gate", "--out-dir", o, "--model", O("model.json"), "--profile", O("profile.json"),
        "--data", O("split.test.cpad")}},
      {"simulate-exit",
       {"simulate-exit", "--out-dir", o, "--model", O("model.json"), "--profile",
        O("profile.json"), "--activations", I("acts.cpad"), "--transcripts", I("cot.jsonl")}},
      {"simulate-override",
       {"simulate-override", "--out-dir", o, "--model", O("model.json"), "--profile",
        O("profile.json"), "--activations", I("acts.cpad"), "--transcripts",
        I("abstain.jsonl")}},
      {"ablate",
       {"ablate", "--out-dir", o, "--axis", "n_datapoints", "--values", "50,full", "--data",
        O("labeled.cpad"), "--seeds", "0,1", "--epochs", "30", "--jobs", "2"}},
  };
}

inline std::map<std::string, std::string> read_tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream f(entry.path(), std::ios::binary);
    std::ostringstream buf;
    buf << f.rdbuf();
    files[std::filesystem::relative(entry.path(), dir).string()] = buf.str();
  }
  return files;
}

}  // namespace probeguard::testing
