// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef PCEE_TRACE_HPP_
#define PCEE_TRACE_HPP_

// Layerwise logit traces of multi-exit classifiers: data model, NDJSON and
// binary (EETR) formats, validation, and deterministic validation/test split.
//
// NDJSON:  line 1 {"version":1,"n_layers":L,"n_classes":K,"layer_costs":[...]}
//          then one {"id":u64,"label":u32,"logits":[[K floats] x L]} per line.
// Binary:  "EETR", u32 version, u32 L, u32 K, L x f64 costs, u64 count, then
//          per record u64 id, u32 label, L*K x f32 logits (row-major by layer).
//          All little-endian.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pcee/io.hpp"
#include "pcee/rng.hpp"

namespace pcee {

struct TraceHeader {
  std::uint32_t version = 1;
  std::uint32_t n_layers = 0;
  std::uint32_t n_classes = 0;
  /// Cumulative cost (e.g. FLOPs) up to and including each exit head.
  std::vector<double> layer_costs;

  std::size_t values_per_record() const noexcept {
    return static_cast<std::size_t>(n_layers) * n_classes;
  }

  void validate() const {
    if (version != 1) throw TraceError("unsupported version " + std::to_string(version));
    if (n_layers < 1) throw TraceError("n_layers must be >= 1");
    if (n_classes < 2) throw TraceError("n_classes must be >= 2");
    if (layer_costs.size() != n_layers) {
      throw TraceError("layer_costs has " + std::to_string(layer_costs.size()) + " entries, expected " +
                       std::to_string(n_layers));
    }
    for (std::size_t i = 0; i < layer_costs.size(); ++i) {
      const double c = layer_costs[i];
      if (!std::isfinite(c) || c < 0) throw TraceError("layer_costs[" + std::to_string(i) + "] is not a finite nonnegative value");
      if (i > 0 && !(c > layer_costs[i - 1])) throw TraceError("layer_costs must be strictly increasing");
    }
  }

  bool operator==(const TraceHeader&) const = default;
};

struct TraceRecord {
  std::uint64_t id = 0;
  std::uint32_t label = 0;
  /// n_layers x n_classes logits, row-major by layer.
  std::vector<float> logits;

  std::span<const float> layer_logits(std::size_t layer, std::size_t n_classes) const {
    return std::span<const float>(logits).subspan(layer * n_classes, n_classes);
  }

  bool operator==(const TraceRecord&) const = default;
};

struct TraceDataset {
  TraceHeader header;
  std::vector<TraceRecord> records;

  std::size_t size() const noexcept { return records.size(); }

  std::span<const float> logits(std::size_t record, std::size_t layer) const {
    return records[record].layer_logits(layer, header.n_classes);
  }

  /// Checks every header and record invariant; throws TraceError naming the
  /// first offending record.
  void validate() const {
    header.validate();
    if (records.empty()) throw TraceError("dataset has no records");
    std::unordered_set<std::uint64_t> ids;
    ids.reserve(records.size());
    for (std::size_t r = 0; r < records.size(); ++r) validate_record(records[r], r, ids);
  }

  void validate_record(const TraceRecord& rec, std::size_t index, std::unordered_set<std::uint64_t>& ids) const {
    if (rec.logits.size() != header.values_per_record()) {
      throw TraceError("expected " + std::to_string(header.values_per_record()) + " logits, found " +
                           std::to_string(rec.logits.size()),
                       index);
    }
    if (rec.label >= header.n_classes) throw TraceError("label " + std::to_string(rec.label) + " out of range", index);
    for (float v : rec.logits) {
      if (!std::isfinite(v)) throw TraceError("non-finite logit", index);
    }
    if (!ids.insert(rec.id).second) throw TraceError("duplicate id " + std::to_string(rec.id), index);
  }

  bool operator==(const TraceDataset&) const = default;
};

enum class TraceFormat { ndjson, binary };

inline TraceFormat parse_trace_format(std::string_view name) {
  if (name == "ndjson" || name == "json" || name == "jsonl") return TraceFormat::ndjson;
  if (name == "binary" || name == "bin" || name == "eetr") return TraceFormat::binary;
  throw std::invalid_argument("unknown trace format '" + std::string(name) + "'");
}

/// Format implied by the file extension: .ndjson/.jsonl/.json are NDJSON,
/// everything else is binary.
inline TraceFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ndjson" || ext == ".jsonl" || ext == ".json") return TraceFormat::ndjson;
  return TraceFormat::binary;
}

inline constexpr char kTraceMagic[4] = {'E', 'E', 'T', 'R'};

namespace detail {

// nlohmann::json with binary32 floats: parses logits with strtof so decimal
// literals round once, straight to the nearest float.
using FloatJson = nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t, std::uint64_t, float>;

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  auto bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>(bits & 0xFF));
    bits >>= 8;
  }
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  template <typename T>
  T get(std::optional<std::size_t> record = std::nullopt) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    if (data_.size() - pos_ < sizeof(U)) throw TraceError("unexpected end of file", record);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }

  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline void parse_header_json(const nlohmann::json& j, TraceHeader& h) {
  if (!j.is_object()) throw TraceError("header line is not a JSON object");
  for (const char* key : {"version", "n_layers", "n_classes", "layer_costs"}) {
    if (!j.contains(key)) throw TraceError(std::string("header is missing \"") + key + "\"");
  }
  for (const char* key : {"version", "n_layers", "n_classes"}) {
    if (!j[key].is_number_unsigned() || j[key].get<std::uint64_t>() > 0xFFFFFFFFu) {
      throw TraceError(std::string("header field \"") + key + "\" must be an unsigned 32-bit integer");
    }
  }
  h.version = j["version"].get<std::uint32_t>();
  h.n_layers = j["n_layers"].get<std::uint32_t>();
  h.n_classes = j["n_classes"].get<std::uint32_t>();
  const auto& costs = j["layer_costs"];
  if (!costs.is_array()) throw TraceError("header field \"layer_costs\" must be an array");
  h.layer_costs.clear();
  for (const auto& c : costs) {
    if (!c.is_number()) throw TraceError("layer_costs entries must be numbers");
    h.layer_costs.push_back(c.get<double>());
  }
  h.validate();
}

inline TraceRecord parse_record_json(std::string_view line, const TraceHeader& h, std::size_t index) {
  FloatJson j;
  try {
    j = FloatJson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(std::string("malformed JSON: ") + e.what(), index);
  }
  if (!j.is_object() || !j.contains("id") || !j.contains("label") || !j.contains("logits")) {
    throw TraceError("record must be an object with id, label and logits", index);
  }
  if (!j["id"].is_number_unsigned()) throw TraceError("id must be an unsigned integer", index);
  if (!j["label"].is_number_unsigned() || j["label"].get<std::uint64_t>() > 0xFFFFFFFFu) {
    throw TraceError("label must be an unsigned 32-bit integer", index);
  }
  TraceRecord rec;
  rec.id = j["id"].get<std::uint64_t>();
  rec.label = j["label"].get<std::uint32_t>();
  const auto& layers = j["logits"];
  if (!layers.is_array() || layers.size() != h.n_layers) {
    throw TraceError("logits must hold " + std::to_string(h.n_layers) + " layers", index);
  }
  rec.logits.reserve(h.values_per_record());
  for (const auto& row : layers) {
    if (!row.is_array() || row.size() != h.n_classes) {
      throw TraceError("each logits row must hold " + std::to_string(h.n_classes) + " values, found " +
                           std::to_string(row.is_array() ? row.size() : 0),
                       index);
    }
    for (const auto& v : row) {
      if (!v.is_number()) throw TraceError("logit is not a number", index);
      rec.logits.push_back(v.get<float>());
    }
  }
  return rec;
}

}  // namespace detail

/// Parses an NDJSON trace from memory.
inline TraceDataset parse_ndjson(std::string_view text) {
  TraceDataset ds;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    line = text.substr(pos, end - pos);
    pos = end + 1;
    return true;
  };
  std::string_view line;
  if (!next_line(line)) throw TraceError("empty file: missing header line");
  try {
    detail::parse_header_json(nlohmann::json::parse(line), ds.header);
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(std::string("malformed header: ") + e.what());
  }
  std::unordered_set<std::uint64_t> ids;
  while (next_line(line)) {
    const std::size_t index = ds.records.size();
    if (line.empty()) throw TraceError("empty line", index);
    ds.records.push_back(detail::parse_record_json(line, ds.header, index));
    ds.validate_record(ds.records.back(), index, ids);
  }
  if (ds.records.empty()) throw TraceError("dataset has no records");
  return ds;
}

inline std::string to_ndjson(const TraceDataset& ds) {
  ds.validate();
  const auto& h = ds.header;
  std::string out = "{\"version\":" + std::to_string(h.version) + ",\"n_layers\":" + std::to_string(h.n_layers) +
                    ",\"n_classes\":" + std::to_string(h.n_classes) + ",\"layer_costs\":[";
  for (std::size_t i = 0; i < h.layer_costs.size(); ++i) {
    if (i) out += ',';
    out += format_shortest(h.layer_costs[i]);
  }
  out += "]}\n";
  for (const auto& rec : ds.records) {
    out += "{\"id\":" + std::to_string(rec.id) + ",\"label\":" + std::to_string(rec.label) + ",\"logits\":[";
    for (std::size_t l = 0; l < h.n_layers; ++l) {
      out += l ? ",[" : "[";
      for (std::size_t k = 0; k < h.n_classes; ++k) {
        if (k) out += ',';
        out += format_shortest(rec.logits[l * h.n_classes + k]);
      }
      out += ']';
    }
    out += "]}\n";
  }
  return out;
}

/// Parses a binary (EETR) trace from memory.
inline TraceDataset parse_binary(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTraceMagic, 4) != 0) throw TraceError("bad magic, expected EETR");
  detail::ByteReader in(bytes.substr(4));
  TraceDataset ds;
  auto& h = ds.header;
  h.version = in.get<std::uint32_t>();
  h.n_layers = in.get<std::uint32_t>();
  h.n_classes = in.get<std::uint32_t>();
  if (h.version != 1) throw TraceError("unsupported version " + std::to_string(h.version));
  if (h.n_layers == 0 || h.n_classes == 0 || h.n_layers > in.remaining() / 8) throw TraceError("malformed header");
  h.layer_costs.resize(h.n_layers);
  for (auto& c : h.layer_costs) c = in.get<double>();
  h.validate();
  const auto count = in.get<std::uint64_t>();
  const std::uint64_t record_bytes = 12 + 4 * static_cast<std::uint64_t>(h.values_per_record());
  if (count == 0) throw TraceError("dataset has no records");
  if (count > in.remaining() / record_bytes) {
    throw TraceError("file truncated: header declares " + std::to_string(count) + " records", in.remaining() / record_bytes);
  }
  if (count * record_bytes != in.remaining()) throw TraceError("trailing bytes after last record");
  ds.records.resize(count);
  std::unordered_set<std::uint64_t> ids;
  ids.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    auto& rec = ds.records[r];
    rec.id = in.get<std::uint64_t>(r);
    rec.label = in.get<std::uint32_t>(r);
    rec.logits.resize(h.values_per_record());
    for (auto& v : rec.logits) v = in.get<float>(r);
    ds.validate_record(rec, r, ids);
  }
  return ds;
}

inline std::string to_binary(const TraceDataset& ds) {
  ds.validate();
  const auto& h = ds.header;
  std::string out(kTraceMagic, 4);
  out.reserve(4 + 12 + 8 * h.n_layers + 8 + ds.size() * (12 + 4 * h.values_per_record()));
  detail::put_le(out, h.version);
  detail::put_le(out, h.n_layers);
  detail::put_le(out, h.n_classes);
  for (double c : h.layer_costs) detail::put_le(out, c);
  detail::put_le(out, static_cast<std::uint64_t>(ds.size()));
  for (const auto& rec : ds.records) {
    detail::put_le(out, rec.id);
    detail::put_le(out, rec.label);
    for (float v : rec.logits) detail::put_le(out, v);
  }
  return out;
}

inline TraceDataset read_trace(const std::filesystem::path& path, TraceFormat format) {
  const std::string data = read_file(path);
  return format == TraceFormat::ndjson ? parse_ndjson(data) : parse_binary(data);
}

inline TraceDataset read_trace(const std::filesystem::path& path) { return read_trace(path, format_from_path(path)); }

inline void write_trace(const TraceDataset& ds, const std::filesystem::path& path, TraceFormat format) {
  write_file_atomic(path, format == TraceFormat::ndjson ? to_ndjson(ds) : to_binary(ds));
}

inline void write_trace(const TraceDataset& ds, const std::filesystem::path& path) {
  write_trace(ds, path, format_from_path(path));
}

struct SplitSpec {
  double validation_fraction = 0.10;
  std::uint64_t seed = 0;
};

struct SplitResult {
  TraceDataset validation;
  TraceDataset test;
};

/// Deterministic partition: Fisher-Yates shuffle of record positions with
/// Xoshiro256(seed), the first floor(f*N) positions go to validation. Both
/// halves keep the original record order.
inline SplitResult split(const TraceDataset& ds, const SplitSpec& spec) {
  if (!(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0)) {
    throw std::invalid_argument("validation_fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.size();
  const auto n_val = static_cast<std::size_t>(std::floor(spec.validation_fraction * static_cast<double>(n)));
  if (n_val < 1 || n_val > n - 1) {
    throw std::invalid_argument("split of " + std::to_string(n) + " records at fraction " +
                                std::to_string(spec.validation_fraction) + " leaves an empty side");
  }
  Xoshiro256 rng(spec.seed);
  auto order = shuffled_indices(n, rng);
  std::vector<char> in_val(n, 0);
  for (std::size_t i = 0; i < n_val; ++i) in_val[order[i]] = 1;

  SplitResult out{{ds.header, {}}, {ds.header, {}}};
  out.validation.records.reserve(n_val);
  out.test.records.reserve(n - n_val);
  for (std::size_t r = 0; r < n; ++r) (in_val[r] ? out.validation : out.test).records.push_back(ds.records[r]);
  return out;
}

}  // namespace pcee

#endif  // PCEE_TRACE_HPP_
