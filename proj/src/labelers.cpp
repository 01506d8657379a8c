#include "probeguard/labelers.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "json.hpp"
#include "probeguard/error.hpp"

namespace probeguard {
namespace {

using json = nlohmann::ordered_json;

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

BehaviorLabel make_label(std::uint32_t label, std::string reason) {
  return {"", label, false, std::move(reason)};
}

BehaviorLabel make_excluded(std::string reason) { return {"", 0, true, std::move(reason)}; }

// Numbers of every "<digits>." token that starts the text or follows
// whitespace and is itself followed by whitespace or the end of the text.
std::vector<std::uint64_t> bullet_numbers(std::string_view text) {
  std::vector<std::uint64_t> numbers;
  std::size_t i = 0;
  while (i < text.size()) {
    const bool at_token_start = i == 0 || is_space(text[i - 1]);
    if (!at_token_start || !std::isdigit(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::uint64_t value = 0;
    while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) {
      value = std::min<std::uint64_t>(value * 10 + static_cast<std::uint64_t>(text[j] - '0'),
                                      1'000'000'000);
      ++j;
    }
    if (j < text.size() && text[j] == '.' && (j + 1 == text.size() || is_space(text[j + 1]))) {
      numbers.push_back(value);
    }
    i = j;
  }
  return numbers;
}

// End (exclusive) of the brace-balanced object starting at `start`, honouring
// JSON string quoting, or npos when it never closes.
std::size_t balanced_object_end(std::string_view text, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::string_view::npos;
}

std::optional<json> first_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    const std::size_t end = balanced_object_end(text, start);
    if (end == std::string_view::npos) continue;
    auto parsed = json::parse(text.substr(start, end - start), nullptr, /*allow_exceptions=*/false);
    if (!parsed.is_discarded() && parsed.is_object()) return parsed;
  }
  return std::nullopt;
}

bool is_string_list(const json& value) {
  return value.is_array() &&
         std::all_of(value.begin(), value.end(), [](const json& v) { return v.is_string(); });
}

// Finds `word` as a whole word in already-lowercased text; returns the
// position of the last occurrence.
std::optional<std::size_t> last_whole_word(const std::string& lowered, std::string_view word) {
  std::optional<std::size_t> last;
  for (std::size_t pos = lowered.find(word); pos != std::string::npos;
       pos = lowered.find(word, pos + 1)) {
    const bool left_ok = pos == 0 || !is_alnum(lowered[pos - 1]);
    const std::size_t after = pos + word.size();
    const bool right_ok = after >= lowered.size() || !is_alnum(lowered[after]);
    if (left_ok && right_ok) last = pos;
  }
  return last;
}

constexpr std::array<std::string_view, 5> kRefusalPhrases = {
    "i cannot", "i can't assist", "i can\xe2\x80\x99t assist", "i won't", "i won\xe2\x80\x99t"};

}  // namespace

BehaviorLabel label_bullet_format(std::string_view output_text) {
  const auto numbers = bullet_numbers(output_text);
  if (std::any_of(numbers.begin(), numbers.end(), [](std::uint64_t n) { return n >= 4; })) {
    return make_label(1, "too_many_bullets");
  }
  if (numbers.size() < 3) return make_label(1, "too_few_bullets");
  if (numbers != std::vector<std::uint64_t>{1, 2, 3}) return make_label(1, "bullets_out_of_order");
  return make_label(0, "follows_format");
}

BehaviorLabel label_json_format(std::string_view output_text) {
  const auto obj = first_json_object(output_text);
  if (!obj) return make_label(1, "no_json_object");
  const bool keys_ok = obj->size() == 3 && obj->contains("short_answer") &&
                       obj->contains("entities") && obj->contains("references");
  if (!keys_ok) return make_label(1, "wrong_keys");
  if (!obj->at("short_answer").is_string() || !is_string_list(obj->at("entities")) ||
      !is_string_list(obj->at("references"))) {
    return make_label(1, "wrong_value_types");
  }
  return make_label(0, "follows_format");
}

bool is_abstention(std::string_view output_text) {
  if (output_text.find("ABSTAIN") != std::string_view::npos) return true;
  const std::string lowered = to_lower(output_text);
  return std::any_of(kRefusalPhrases.begin(), kRefusalPhrases.end(),
                     [&](std::string_view p) { return lowered.find(p) != std::string::npos; });
}

BehaviorLabel label_abstention(std::string_view output_text, bool should_abstain) {
  if (is_abstention(output_text)) return make_excluded("model_abstained");
  if (should_abstain) return make_label(1, "failed_to_abstain");
  return make_label(0, "benign_compliance");
}

std::optional<std::uint32_t> parse_cot_answer(std::string_view output_text,
                                              std::span<const std::string> options) {
  const std::string lowered = to_lower(output_text);
  constexpr std::string_view kMarker = "answer:";
  const std::size_t marker = lowered.rfind(kMarker);
  if (marker == std::string::npos) return std::nullopt;

  std::size_t i = marker + kMarker.size();
  while (i < lowered.size() && is_space(lowered[i])) ++i;
  if (i < lowered.size() && lowered[i] == '(') ++i;
  if (i >= lowered.size() || !std::isalpha(static_cast<unsigned char>(lowered[i]))) {
    return std::nullopt;
  }
  const char letter = lowered[i];
  if (i + 1 < lowered.size() && is_alnum(lowered[i + 1])) return std::nullopt;

  for (std::size_t k = 0; k < options.size(); ++k) {
    // Single-character entries are the identifiers themselves; longer
    // entries are option texts labelled A, B, ... by position.
    const char id = options[k].size() == 1
                        ? static_cast<char>(std::tolower(static_cast<unsigned char>(options[k][0])))
                        : static_cast<char>('a' + k);
    if (id == letter) return static_cast<std::uint32_t>(k);
  }
  return std::nullopt;
}

double token_normalized_perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw ValidationError("perplexity of an empty log-probability list");
  const double sum = std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

std::vector<BehaviorLabel> label_perplexity_confidence(
    std::span<const TranscriptRecord> transcripts) {
  const std::size_t n = transcripts.size();
  if (n < 4) {
    throw ValidationError("perplexity confidence labeling needs at least 4 transcripts, got " +
                          std::to_string(n));
  }
  std::vector<double> perplexity(n);
  for (std::size_t i = 0; i < n; ++i) {
    perplexity[i] = token_normalized_perplexity(transcripts[i].output_token_logprobs);
  }
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), std::size_t{0});
  std::stable_sort(rank.begin(), rank.end(),
                   [&](std::size_t a, std::size_t b) { return perplexity[a] < perplexity[b]; });

  std::vector<BehaviorLabel> labels(n);
  const std::size_t quarter = n / 4;
  for (std::size_t r = 0; r < n; ++r) {
    auto& out = labels[rank[r]];
    if (r < quarter) {
      out = make_label(0, "low_perplexity");
    } else if (r >= n - quarter) {
      out = make_label(1, "high_perplexity");
    } else {
      out = make_excluded("middle_perplexity");
    }
    out.record_id = transcripts[rank[r]].record_id;
  }
  return labels;
}

BehaviorLabel label_verbal_confidence(std::string_view output_text) {
  const std::string lowered = to_lower(output_text);
  const auto confident = last_whole_word(lowered, "confident");
  const auto unsure = last_whole_word(lowered, "unsure");
  if (!confident && !unsure) return make_excluded("no_confidence_statement");
  if (!unsure || (confident && *confident > *unsure)) return make_label(0, "verbal_confident");
  return make_label(1, "verbal_unsure");
}

LabelTask parse_label_task(std::string_view name) {
  if (name == "bullets") return LabelTask::kBullets;
  if (name == "json") return LabelTask::kJson;
  if (name == "abstention") return LabelTask::kAbstention;
  if (name == "cot") return LabelTask::kCot;
  if (name == "perplexity") return LabelTask::kPerplexity;
  if (name == "verbal") return LabelTask::kVerbal;
  throw ValidationError("unknown labeling task '" + std::string(name) + "'");
}

std::string_view label_task_name(LabelTask task) {
  switch (task) {
    case LabelTask::kBullets: return "bullets";
    case LabelTask::kJson: return "json";
    case LabelTask::kAbstention: return "abstention";
    case LabelTask::kCot: return "cot";
    case LabelTask::kPerplexity: return "perplexity";
    case LabelTask::kVerbal: return "verbal";
  }
  return "unknown";
}

std::vector<BehaviorLabel> label_transcripts(LabelTask task,
                                             std::span<const TranscriptRecord> transcripts) {
  if (task == LabelTask::kPerplexity) return label_perplexity_confidence(transcripts);

  std::vector<BehaviorLabel> labels;
  labels.reserve(transcripts.size());
  for (const auto& t : transcripts) {
    BehaviorLabel label;
    switch (task) {
      case LabelTask::kBullets:
        label = label_bullet_format(t.output_text);
        break;
      case LabelTask::kJson:
        label = label_json_format(t.output_text);
        break;
      case LabelTask::kAbstention:
        if (!t.should_abstain) {
          throw ValidationError("transcript '" + t.record_id + "' lacks should_abstain");
        }
        label = label_abstention(t.output_text, *t.should_abstain);
        break;
      case LabelTask::kCot: {
        if (!t.options) throw ValidationError("transcript '" + t.record_id + "' lacks options");
        const auto answer = parse_cot_answer(t.output_text, *t.options);
        label = answer ? make_label(*answer, "cot_answer") : make_excluded("unparseable_answer");
        break;
      }
      case LabelTask::kVerbal:
        label = label_verbal_confidence(t.output_text);
        break;
      case LabelTask::kPerplexity:
        break;
    }
    label.record_id = t.record_id;
    labels.push_back(std::move(label));
  }
  return labels;
}

std::uint32_t label_task_classes(LabelTask task, std::span<const TranscriptRecord> transcripts) {
  if (task != LabelTask::kCot) return 2;
  std::size_t widest = 0;
  for (const auto& t : transcripts) {
    if (t.options) widest = std::max(widest, t.options->size());
  }
  if (widest == 0) throw ValidationError("CoT labeling needs transcripts with options");
  return static_cast<std::uint32_t>(widest);
}

LabeledDataset apply_labels(const LabeledDataset& activations,
                            std::span<const BehaviorLabel> labels, std::uint32_t num_classes) {
  std::unordered_map<std::string, const BehaviorLabel*> by_id;
  for (const auto& l : labels) {
    if (!by_id.emplace(l.record_id, &l).second) {
      throw ValidationError("duplicate label for record '" + l.record_id + "'");
    }
  }
  LabeledDataset out{activations.dimension, num_classes, {}};
  for (const auto& rec : activations.records) {
    auto it = by_id.find(rec.record_id);
    if (it == by_id.end() || it->second->excluded) continue;
    ActivationRecord labeled = rec;
    labeled.label = it->second->label;
    out.records.push_back(std::move(labeled));
  }
  out.validate();
  return out;
}

std::string labels_to_jsonl(std::span<const BehaviorLabel> labels) {
  std::string text;
  for (const auto& l : labels) {
    text += json{{"record_id", l.record_id},
                 {"label", l.label},
                 {"excluded", l.excluded},
                 {"reason", l.reason}}
                .dump();
    text += '\n';
  }
  return text;
}

std::vector<BehaviorLabel> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<BehaviorLabel> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json obj = json::parse(line);
      labels.push_back({obj.at("record_id").get<std::string>(), obj.at("label").get<std::uint32_t>(),
                        obj.value("excluded", false), obj.value("reason", std::string())});
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return labels;
}

}  // namespace probeguard
