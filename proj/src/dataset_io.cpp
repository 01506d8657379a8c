#include "probeguard/dataset_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>

#include "json.hpp"
#include "probeguard/error.hpp"
#include "probeguard/random.hpp"

namespace probeguard {
namespace {

using json = nlohmann::ordered_json;

constexpr std::array<std::uint8_t, 4> kMagic = {0x43, 0x50, 0x41, 0x44};  // "CPAD"
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 2 + 2 + 4 + 2 + 8;
constexpr std::uint32_t kU16Max = std::numeric_limits<std::uint16_t>::max();

class ByteWriter {
 public:
  void put_u16(std::uint32_t v) { put_le(v, 2); }
  void put_u32(std::uint32_t v) { put_le(v, 4); }
  void put_u64(std::uint64_t v) { put_le(v, 8); }
  void put_f32(float v) { put_le(std::bit_cast<std::uint32_t>(v), 4); }
  void put_bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  void put_string(const std::string& s) {
    put_u16(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put_le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get_le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get_le(4, what)); }
  std::uint64_t u64(const char* what) { return get_le(8, what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(const char* what) {
    const std::size_t len = u16(what);
    require(len, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void require(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw CorruptionError(std::string("truncated CPAD data while reading ") + what, pos_);
    }
  }
  std::uint64_t get_le(int width, const char* what) {
    require(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

std::string record_context(std::size_t index, const ActivationRecord& r) {
  return "record " + std::to_string(index) + " ('" + r.record_id + "')";
}

LabeledDataset select(const LabeledDataset& dataset, std::vector<std::size_t> indices) {
  std::sort(indices.begin(), indices.end());
  LabeledDataset out{dataset.dimension, dataset.num_classes, {}};
  out.records.reserve(indices.size());
  for (std::size_t i : indices) out.records.push_back(dataset.records[i]);
  return out;
}

template <typename T>
T field_or(const json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  return it->get<T>();
}

}  // namespace

void LabeledDataset::validate() const {
  if (num_classes == 0 || num_classes > kU16Max) {
    throw ValidationError("class cardinality must be in [1, 65535], got " +
                          std::to_string(num_classes));
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.vector.size() != dimension) {
      throw ValidationError(record_context(i, r) + " has vector length " +
                            std::to_string(r.vector.size()) + ", dataset dimension is " +
                            std::to_string(dimension));
    }
    if (r.label >= num_classes) {
      throw ValidationError(record_context(i, r) + " has label " + std::to_string(r.label) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
    if (r.layer_index > kU16Max) {
      throw ValidationError(record_context(i, r) + " layer_index does not fit in 16 bits");
    }
    if (r.record_id.size() > kU16Max || r.dataset_name.size() > kU16Max) {
      throw ValidationError(record_context(i, r) + " has a string longer than 65535 bytes");
    }
  }
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& r : records) {
    if (r.label < num_classes) ++counts[r.label];
  }
  return counts;
}

void TranscriptRecord::validate() const {
  for (double lp : output_token_logprobs) {
    if (!(lp <= 0.0)) {
      throw ValidationError("transcript '" + record_id + "' has a log-probability above 0");
    }
  }
  if (options && options->empty()) {
    throw ValidationError("transcript '" + record_id + "' has an empty options list");
  }
}

std::vector<std::uint8_t> encode_activation_file(const LabeledDataset& dataset) {
  dataset.validate();
  ByteWriter w;
  w.put_bytes(kMagic);
  w.put_u16(kVersion);
  w.put_u16(0);
  w.put_u32(dataset.dimension);
  w.put_u16(dataset.num_classes);
  w.put_u64(dataset.records.size());
  for (const auto& r : dataset.records) {
    w.put_string(r.record_id);
    w.put_string(r.dataset_name);
    w.put_u16(r.label);
    w.put_u16(r.layer_index);
    w.put_u32(r.token_index);
    w.put_u32(r.output_token_count);
    for (float v : r.vector) w.put_f32(v);
  }
  return w.take();
}

LabeledDataset decode_activation_file(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError("not a CPAD file (bad magic bytes)");
  }
  ByteReader r(bytes);
  r.u32("magic");
  const std::uint16_t version = r.u16("version");
  if (version != kVersion) {
    throw FormatError("unsupported CPAD version " + std::to_string(version));
  }
  r.u16("reserved");
  LabeledDataset ds;
  ds.dimension = r.u32("dimension");
  ds.num_classes = r.u16("class count");
  const std::uint64_t n = r.u64("record count");
  // Every record needs at least 16 fixed bytes, so a bogus count fails fast
  // instead of attempting a huge allocation.
  if (n > r.remaining() / 16 + 1) {
    throw CorruptionError("header declares " + std::to_string(n) +
                              " records but the body is too short",
                          r.position());
  }
  ds.records.reserve(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    ActivationRecord rec;
    rec.record_id = r.str("record_id");
    rec.dataset_name = r.str("dataset_name");
    rec.label = r.u16("label");
    rec.layer_index = r.u16("layer_index");
    rec.token_index = r.u32("token_index");
    rec.output_token_count = r.u32("output_token_count");
    rec.vector.resize(ds.dimension);
    for (auto& v : rec.vector) v = r.f32("vector");
    ds.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw CorruptionError("trailing bytes after " + std::to_string(n) + " records", r.position());
  }
  if (ds.num_classes == 0) throw FormatError("CPAD header declares zero classes");
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    if (ds.records[i].label >= ds.num_classes) {
      throw CorruptionError(record_context(i, ds.records[i]) + " has an out-of-range label", 0);
    }
  }
  return ds;
}

void write_activation_file(const LabeledDataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_activation_file(dataset);
  write_all(path, bytes);
}

LabeledDataset read_activation_file(const std::filesystem::path& path) {
  return decode_activation_file(read_all(path));
}

LabeledDataset read_activation_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  LabeledDataset ds;
  std::optional<std::uint32_t> dimension;
  std::optional<std::uint32_t> num_classes;
  std::uint32_t max_label = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!obj.contains("vector")) {
        if (!ds.records.empty() || !obj.contains("dimension")) {
          throw FormatError(path.string() + ":" + std::to_string(line_no) +
                            ": record without a vector");
        }
        dimension = obj.at("dimension").get<std::uint32_t>();
        num_classes = field_or<std::uint32_t>(obj, "num_classes", 0);
        if (*num_classes == 0) num_classes.reset();
        continue;
      }
      ActivationRecord rec;
      rec.record_id = obj.at("record_id").get<std::string>();
      rec.label = obj.at("label").get<std::uint32_t>();
      rec.vector = obj.at("vector").get<std::vector<float>>();
      rec.dataset_name = field_or<std::string>(obj, "dataset_name", "");
      rec.layer_index = field_or<std::uint32_t>(obj, "layer_index", 0);
      rec.token_index = field_or<std::uint32_t>(obj, "token_index", 0);
      rec.output_token_count = field_or<std::uint32_t>(obj, "output_token_count", 0);
      max_label = std::max(max_label, rec.label);
      if (!dimension) dimension = static_cast<std::uint32_t>(rec.vector.size());
      ds.records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (ds.records.size() > kMaxJsonlActivationRecords) {
      throw FormatError(path.string() + ": JSONL activation files are limited to " +
                        std::to_string(kMaxJsonlActivationRecords) + " records; use CPAD");
    }
  }
  ds.dimension = dimension.value_or(0);
  ds.num_classes = num_classes.value_or(std::max<std::uint32_t>(2, max_label + 1));
  ds.validate();
  return ds;
}

void write_activation_jsonl(const LabeledDataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::string text;
  text += json{{"dimension", dataset.dimension}, {"num_classes", dataset.num_classes}}.dump();
  text += '\n';
  for (const auto& r : dataset.records) {
    json obj = {{"record_id", r.record_id},
                {"dataset_name", r.dataset_name},
                {"label", r.label},
                {"layer_index", r.layer_index},
                {"token_index", r.token_index},
                {"output_token_count", r.output_token_count},
                {"vector", r.vector}};
    text += obj.dump();
    text += '\n';
  }
  write_all(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  if (path.extension() == ".jsonl") return read_activation_jsonl(path);
  return read_activation_file(path);
}

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path) {
  if (path.extension() == ".jsonl") {
    write_activation_jsonl(dataset, path);
  } else {
    write_activation_file(dataset, path);
  }
}

std::vector<TranscriptRecord> read_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<TranscriptRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json obj = json::parse(line);
      TranscriptRecord t;
      t.record_id = obj.at("record_id").get<std::string>();
      t.dataset_name = field_or<std::string>(obj, "dataset_name", "");
      t.prompt_text = field_or<std::string>(obj, "prompt_text", "");
      t.output_text = obj.at("output_text").get<std::string>();
      t.output_token_logprobs =
          field_or<std::vector<double>>(obj, "output_token_logprobs", {});
      if (auto it = obj.find("gold_label"); it != obj.end() && !it->is_null()) {
        t.gold_label = it->get<std::uint32_t>();
      }
      if (auto it = obj.find("should_abstain"); it != obj.end() && !it->is_null()) {
        t.should_abstain = it->get<bool>();
      }
      if (auto it = obj.find("options"); it != obj.end() && !it->is_null()) {
        t.options = it->get<std::vector<std::string>>();
      }
      t.validate();
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_transcripts(const std::vector<TranscriptRecord>& transcripts,
                       const std::filesystem::path& path) {
  std::string text;
  for (const auto& t : transcripts) {
    t.validate();
    json obj = {{"record_id", t.record_id},
                {"dataset_name", t.dataset_name},
                {"prompt_text", t.prompt_text},
                {"output_text", t.output_text},
                {"output_token_logprobs", t.output_token_logprobs}};
    if (t.gold_label) obj["gold_label"] = *t.gold_label;
    if (t.should_abstain) obj["should_abstain"] = *t.should_abstain;
    if (t.options) obj["options"] = *t.options;
    text += obj.dump();
    text += '\n';
  }
  write_all(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DatasetSplits split(const LabeledDataset& dataset, const SplitFractions& fractions,
                    std::uint64_t seed) {
  if (!(fractions.train > 0 && fractions.valid > 0 && fractions.test > 0)) {
    throw ValidationError("split fractions must all be positive");
  }
  if (std::abs(fractions.train + fractions.valid + fractions.test - 1.0) > 1e-9) {
    throw ValidationError("split fractions must sum to 1");
  }
  const std::size_t n = dataset.size();
  // The epsilon keeps products like 100 * 0.29 from flooring one short.
  auto part = [n](double f) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9));
  };
  const std::size_t n_valid = part(fractions.valid);
  const std::size_t n_test = part(fractions.test);
  const std::size_t n_train = n - n_valid - n_test;

  Rng rng(seed);
  const auto order = rng.permutation(n);
  auto take = [&](std::size_t begin, std::size_t count) {
    return select(dataset, {order.begin() + static_cast<std::ptrdiff_t>(begin),
                            order.begin() + static_cast<std::ptrdiff_t>(begin + count)});
  };
  return {take(0, n_train), take(n_train, n_valid), take(n_train + n_valid, n_test)};
}

LabeledDataset balance_classes(const LabeledDataset& dataset, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto label = dataset.records[i].label;
    if (label >= dataset.num_classes) throw ValidationError("label out of range while balancing");
    by_class[label].push_back(i);
  }
  std::size_t m = std::numeric_limits<std::size_t>::max();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) {
      throw ValidationError("cannot balance: class " + std::to_string(c) + " has no records");
    }
    m = std::min(m, by_class[c].size());
  }
  Rng rng(seed);
  std::vector<std::size_t> keep;
  keep.reserve(m * by_class.size());
  for (auto& members : by_class) {
    // Partial Fisher-Yates: the first m slots become a uniform m-subset.
    for (std::size_t i = 0; i < m && members.size() > m; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.uniform_index(members.size() - i));
      std::swap(members[i], members[j]);
    }
    keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(m));
  }
  return select(dataset, std::move(keep));
}

LabeledDataset subsample(const LabeledDataset& dataset, std::size_t count, std::uint64_t seed) {
  if (count > dataset.size()) {
    throw ValidationError("cannot subsample " + std::to_string(count) + " records from " +
                          std::to_string(dataset.size()));
  }
  Rng rng(seed);
  auto order = rng.permutation(dataset.size());
  order.resize(count);
  return select(dataset, std::move(order));
}

}  // namespace probeguard
