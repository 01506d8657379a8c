#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace probeguard {

// One probed input-token hidden state and the behaviour label attached to it.
struct ActivationRecord {
  std::vector<float> vector;
  std::uint32_t label = 0;
  std::string record_id;
  std::string dataset_name;
  std::uint32_t layer_index = 0;
  std::uint32_t token_index = 0;
  // Generated length of the eventual output; drives forward-pass accounting.
  std::uint32_t output_token_count = 0;

  bool operator==(const ActivationRecord&) const = default;
};

struct LabeledDataset {
  std::uint32_t dimension = 0;
  std::uint32_t num_classes = 0;
  std::vector<ActivationRecord> records;

  // Throws ValidationError if any record breaks the header invariants or a
  // field does not fit its on-disk width.
  void validate() const;

  // Records per class, indexed by label.
  std::vector<std::size_t> class_counts() const;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  bool operator==(const LabeledDataset&) const = default;
};

// One prompt/generation pair as emitted by the extractor.
struct TranscriptRecord {
  std::string record_id;
  std::string dataset_name;
  std::string prompt_text;
  std::string output_text;
  std::vector<double> output_token_logprobs;
  std::optional<std::uint32_t> gold_label;
  std::optional<bool> should_abstain;
  std::optional<std::vector<std::string>> options;

  void validate() const;

  bool operator==(const TranscriptRecord&) const = default;
};

// CPAD binary activation files.
void write_activation_file(const LabeledDataset& dataset, const std::filesystem::path& path);
LabeledDataset read_activation_file(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_activation_file(const LabeledDataset& dataset);
LabeledDataset decode_activation_file(const std::vector<std::uint8_t>& bytes);

// Plain-text JSONL activation variant, intended for small fixtures. Each line
// is {"record_id","label","vector",...}; an optional first line
// {"dimension":d,"num_classes":c} pins the header, otherwise d comes from the
// first vector and c from the largest label (at least 2).
inline constexpr std::size_t kMaxJsonlActivationRecords = 10000;
LabeledDataset read_activation_jsonl(const std::filesystem::path& path);
void write_activation_jsonl(const LabeledDataset& dataset, const std::filesystem::path& path);

// Dispatches on extension: ".jsonl" reads the text variant, anything else CPAD.
LabeledDataset load_dataset(const std::filesystem::path& path);
void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path);

std::vector<TranscriptRecord> read_transcripts(const std::filesystem::path& path);
void write_transcripts(const std::vector<TranscriptRecord>& transcripts,
                       const std::filesystem::path& path);

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct DatasetSplits {
  LabeledDataset train;
  LabeledDataset valid;
  LabeledDataset test;
};

// Seeded random partition. Valid and test get floor(n * fraction) records,
// train gets the rest. Each partition keeps the input's record order.
DatasetSplits split(const LabeledDataset& dataset, const SplitFractions& fractions,
                    std::uint64_t seed);

// Subsamples every class down to the smallest class count, preserving order.
LabeledDataset balance_classes(const LabeledDataset& dataset, std::uint64_t seed);

// Keeps `count` records chosen uniformly under `seed`, in input order.
LabeledDataset subsample(const LabeledDataset& dataset, std::size_t count, std::uint64_t seed);

}  // namespace probeguard
