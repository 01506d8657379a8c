#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probeguard/dataset_io.hpp"

namespace probeguard {

// Output of a labeler. When `excluded` is set the record is dropped from
// probe training and `label` carries no meaning.
struct BehaviorLabel {
  std::string record_id;
  std::uint32_t label = 0;
  bool excluded = false;
  std::string reason;

  bool operator==(const BehaviorLabel&) const = default;
};

// Label 0 when the text holds exactly the bullets 1., 2., 3. in that order.
BehaviorLabel label_bullet_format(std::string_view output_text);

// Label 0 when the first decodable JSON object has exactly the keys
// short_answer (string), entities (string list) and references (string list).
BehaviorLabel label_json_format(std::string_view output_text);

// Refusals are excluded. A compliant answer is label 1 (failure to abstain)
// when the request should have been refused, label 0 otherwise.
BehaviorLabel label_abstention(std::string_view output_text, bool should_abstain);

// True when the text contains the "ABSTAIN" marker or a known refusal phrase.
bool is_abstention(std::string_view output_text);

// Index of the option named after the last case-insensitive "Answer:"
// marker, or nullopt when the marker is missing or names no option.
std::optional<std::uint32_t> parse_cot_answer(std::string_view output_text,
                                              std::span<const std::string> options);

// exp(-mean(logprobs)).
double token_normalized_perplexity(std::span<const double> logprobs);

// Lowest quarter by perplexity -> 0 (high confidence), highest quarter -> 1,
// the middle half is excluded. Ties keep input order. Result is in input order.
std::vector<BehaviorLabel> label_perplexity_confidence(
    std::span<const TranscriptRecord> transcripts);

// Label from the last whole-word "confident" (0) or "unsure" (1).
BehaviorLabel label_verbal_confidence(std::string_view output_text);

enum class LabelTask { kBullets, kJson, kAbstention, kCot, kPerplexity, kVerbal };

LabelTask parse_label_task(std::string_view name);
std::string_view label_task_name(LabelTask task);

// Applies the labeler for `task` to every transcript, filling in record ids.
// For kCot the label is the parsed answer class; unparseable answers are
// excluded.
std::vector<BehaviorLabel> label_transcripts(LabelTask task,
                                             std::span<const TranscriptRecord> transcripts);

// Class cardinality of the labels a task produces.
std::uint32_t label_task_classes(LabelTask task, std::span<const TranscriptRecord> transcripts);

// Joins labels onto activations by record_id, dropping excluded records and
// activations without a label. The result has `num_classes` classes.
LabeledDataset apply_labels(const LabeledDataset& activations,
                            std::span<const BehaviorLabel> labels, std::uint32_t num_classes);

std::string labels_to_jsonl(std::span<const BehaviorLabel> labels);
std::vector<BehaviorLabel> read_labels(const std::filesystem::path& path);

}  // namespace probeguard
