// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef PCEE_CALIB_HPP_
#define PCEE_CALIB_HPP_

// Confidence scores, reliability diagrams (raw and neighbor-smoothed),
// expected calibration error and per-layer temperature scaling.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pcee/trace.hpp"

namespace pcee {

inline constexpr int kDefaultBins = 50;
inline constexpr std::size_t kDefaultSmoothingH = 150;
inline constexpr double kMinTemperature = 0.05;
inline constexpr double kMaxTemperature = 10.0;

enum class ConfidenceMeasure { max_softmax, normalized_negentropy };

inline std::string_view to_string(ConfidenceMeasure m) {
  return m == ConfidenceMeasure::max_softmax ? "max_softmax" : "normalized_negentropy";
}

inline ConfidenceMeasure parse_measure(std::string_view name) {
  if (name == "max_softmax" || name == "max") return ConfidenceMeasure::max_softmax;
  if (name == "normalized_negentropy" || name == "entropy") return ConfidenceMeasure::normalized_negentropy;
  throw std::invalid_argument("unknown confidence measure '" + std::string(name) + "'");
}

/// Neumaier-compensated running sum; keeps aggregates order-independent to
/// well below 1e-9 for the sample counts used here.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Index of the largest value; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// softmax(logits / T), stabilized by subtracting the max.
template <std::floating_point F>
std::vector<double> softmax(std::span<const F> logits, double temperature = 1.0) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("softmax: temperature must be positive");
  if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
  for (F z : logits) {
    if (!std::isfinite(z)) throw std::invalid_argument("softmax: non-finite logit");
  }
  const double top = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - top) / temperature);
    total += p[i];
  }
  for (auto& x : p) x /= total;
  return p;
}

template <std::floating_point F>
std::vector<double> softmax(const std::vector<F>& logits, double temperature = 1.0) {
  return softmax(std::span<const F>(logits), temperature);
}

/// max_softmax: max(p). normalized_negentropy: 1 - H(p)/ln K (nats).
inline double confidence(std::span<const double> p, ConfidenceMeasure m) {
  if (p.size() < 2) throw std::invalid_argument("confidence: need at least two classes");
  if (m == ConfidenceMeasure::max_softmax) return std::clamp(*std::max_element(p.begin(), p.end()), 0.0, 1.0);
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::clamp(1.0 - h / std::log(static_cast<double>(p.size())), 0.0, 1.0);
}

/// Equal-width bin of c in [0,1]: floor(c*M), with c == 1 in the last bin.
inline int bin_index(double c, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("bin_index: n_bins must be positive");
  if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("bin_index: confidence outside [0, 1]");
  return std::min(static_cast<int>(std::floor(c * n_bins)), n_bins - 1);
}

/// Replaces each sample's 0/1 correctness by the mean correctness of its H
/// nearest samples in confidence. The sample itself is always included; the
/// other H-1 are the smallest by (|c_j - c_i|, j), so equal distances go to the
/// lower sample index.
///
/// Runs in O(N log N + N H) by walking outward from each sample's position in
/// confidence order.
inline std::vector<double> smooth_correctness(std::span<const double> conf, std::span<const std::uint8_t> correct,
                                              std::size_t h) {
  const std::size_t n = conf.size();
  if (correct.size() != n) throw std::invalid_argument("smooth_correctness: size mismatch");
  if (h < 1) throw std::invalid_argument("smooth_correctness: H must be >= 1");
  if (h > n) throw std::invalid_argument("smooth_correctness: H exceeds sample count");

  // Positions sorted by (confidence, index); within a run of equal
  // confidences indices ascend.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return conf[a] != conf[b] ? conf[a] < conf[b] : a < b;
  });
  std::vector<std::size_t> prefix(n + 1, 0);  // correct count over order[0..p)
  for (std::size_t p = 0; p < n; ++p) prefix[p + 1] = prefix[p] + (correct[order[p]] ? 1 : 0);
  auto range_correct = [&](std::size_t lo, std::size_t hi) { return prefix[hi] - prefix[lo]; };  // [lo, hi)

  std::vector<double> out(n);
  std::vector<std::size_t> ties;
  const std::size_t k = h - 1;
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t self = order[pos];
    if (k == 0) {
      out[self] = correct[self] ? 1.0 : 0.0;
      continue;
    }
    const double c = conf[self];
    auto dist = [&](std::size_t p) { return std::abs(conf[order[p]] - c); };

    // Distance of the k-th nearest other sample.
    std::size_t left = pos, right = pos + 1;  // candidates: left-1 and right
    double kth = 0.0;
    for (std::size_t taken = 0; taken < k; ++taken) {
      const bool has_left = left > 0, has_right = right < n;
      if (has_left && (!has_right || dist(left - 1) <= dist(right))) {
        kth = dist(--left);
      } else {
        kth = dist(right++);
      }
    }

    // Distance is monotone on each side of pos, so {d < kth} and {d == kth}
    // are contiguous ranges on both sides.
    auto lt_lo = static_cast<std::size_t>(
        std::partition_point(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pos),
                             [&](std::size_t j) { return std::abs(conf[j] - c) >= kth; }) - order.begin());
    auto eq_lo = static_cast<std::size_t>(
        std::partition_point(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(lt_lo),
                             [&](std::size_t j) { return std::abs(conf[j] - c) > kth; }) - order.begin());
    auto lt_hi = static_cast<std::size_t>(
        std::partition_point(order.begin() + static_cast<std::ptrdiff_t>(pos) + 1, order.end(),
                             [&](std::size_t j) { return std::abs(conf[j] - c) < kth; }) - order.begin());
    auto eq_hi = static_cast<std::size_t>(
        std::partition_point(order.begin() + static_cast<std::ptrdiff_t>(lt_hi), order.end(),
                             [&](std::size_t j) { return std::abs(conf[j] - c) <= kth; }) - order.begin());

    std::size_t total = (correct[self] ? 1 : 0) + range_correct(lt_lo, pos) + range_correct(pos + 1, lt_hi);
    const std::size_t strictly_closer = (pos - lt_lo) + (lt_hi - pos - 1);
    const std::size_t need = k - strictly_closer;

    // Lowest indices among the equal-distance runs [eq_lo, lt_lo) and
    // [lt_hi, eq_hi). A run of one confidence value is already index-sorted.
    ties.clear();
    ties.insert(ties.end(), order.begin() + static_cast<std::ptrdiff_t>(eq_lo),
                order.begin() + static_cast<std::ptrdiff_t>(lt_lo));
    ties.insert(ties.end(), order.begin() + static_cast<std::ptrdiff_t>(lt_hi),
                order.begin() + static_cast<std::ptrdiff_t>(eq_hi));
    if (need < ties.size()) {
      std::nth_element(ties.begin(), ties.begin() + static_cast<std::ptrdiff_t>(need), ties.end());
    }
    for (std::size_t t = 0; t < need; ++t) total += correct[ties[t]] ? 1 : 0;
    out[self] = static_cast<double>(total) / static_cast<double>(h);
  }
  return out;
}

struct SmoothingSpec {
  std::size_t h = kDefaultSmoothingH;
  bool operator==(const SmoothingSpec&) const = default;
};

/// Per-layer confidence -> accuracy table over equal-width bins of [0,1].
struct ReliabilityDiagram {
  int layer = 0;
  int n_bins = kDefaultBins;
  std::vector<double> edges;                  // n_bins + 1
  std::vector<std::uint64_t> count;           // |B_m|
  std::vector<double> conf_mean;              // conf(B_m); 0 for empty bins
  std::vector<std::optional<double>> accuracy;  // acc(B_m); nullopt for empty bins
  std::optional<SmoothingSpec> smoothing;
  ConfidenceMeasure measure = ConfidenceMeasure::max_softmax;
  double temperature = 1.0;

  std::uint64_t total() const noexcept { return std::accumulate(count.begin(), count.end(), std::uint64_t{0}); }

  bool operator==(const ReliabilityDiagram&) const = default;
};

/// Per-sample scores of one exit head.
struct LayerScores {
  std::vector<double> confidence;
  std::vector<std::uint8_t> correct;
  std::vector<std::uint32_t> prediction;
};

inline LayerScores score_layer(const TraceDataset& ds, std::size_t layer, ConfidenceMeasure measure,
                               double temperature = 1.0) {
  if (layer >= ds.header.n_layers) throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  LayerScores s;
  const std::size_t n = ds.size();
  s.confidence.resize(n);
  s.correct.resize(n);
  s.prediction.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto p = softmax(ds.logits(r, layer), temperature);
    const auto pred = static_cast<std::uint32_t>(argmax(std::span<const double>(p)));
    s.confidence[r] = confidence(p, measure);
    s.prediction[r] = pred;
    s.correct[r] = pred == ds.records[r].label ? 1 : 0;
  }
  return s;
}

/// Bins (confidence, correctness-value) pairs. `correctness` may be 0/1 or
/// smoothed values in [0,1].
inline ReliabilityDiagram bin_scores(std::span<const double> conf, std::span<const double> correctness, int n_bins,
                                     int layer = 0) {
  if (conf.size() != correctness.size()) throw std::invalid_argument("bin_scores: size mismatch");
  if (conf.empty()) throw std::invalid_argument("bin_scores: no samples");
  if (n_bins < 1) throw std::invalid_argument("bin_scores: n_bins must be positive");
  ReliabilityDiagram d;
  d.layer = layer;
  d.n_bins = n_bins;
  d.edges.resize(static_cast<std::size_t>(n_bins) + 1);
  for (int m = 0; m <= n_bins; ++m) d.edges[static_cast<std::size_t>(m)] = static_cast<double>(m) / n_bins;
  d.count.assign(static_cast<std::size_t>(n_bins), 0);
  std::vector<CompensatedSum> conf_sum(static_cast<std::size_t>(n_bins)), acc_sum(static_cast<std::size_t>(n_bins));
  for (std::size_t i = 0; i < conf.size(); ++i) {
    const auto m = static_cast<std::size_t>(bin_index(conf[i], n_bins));
    ++d.count[m];
    conf_sum[m].add(conf[i]);
    acc_sum[m].add(correctness[i]);
  }
  d.conf_mean.assign(static_cast<std::size_t>(n_bins), 0.0);
  d.accuracy.assign(static_cast<std::size_t>(n_bins), std::nullopt);
  for (std::size_t m = 0; m < d.count.size(); ++m) {
    if (d.count[m] == 0) continue;
    const auto n = static_cast<double>(d.count[m]);
    d.conf_mean[m] = std::clamp(conf_sum[m].value() / n, d.edges[m], d.edges[m + 1]);
    d.accuracy[m] = std::clamp(acc_sum[m].value() / n, 0.0, 1.0);
  }
  return d;
}

/// Reliability diagram of `layer` over the validation set. With smoothing,
/// per-sample correctness is replaced by its H-neighbor mean before binning
/// and each bin's accuracy is the plain mean of the smoothed values.
inline ReliabilityDiagram build_diagram(const TraceDataset& val, std::size_t layer, int n_bins = kDefaultBins,
                                        ConfidenceMeasure measure = ConfidenceMeasure::max_softmax,
                                        double temperature = 1.0, std::optional<SmoothingSpec> smoothing = std::nullopt) {
  if (val.records.empty()) throw std::invalid_argument("build_diagram: empty validation set");
  const auto scores = score_layer(val, layer, measure, temperature);
  std::vector<double> correctness;
  if (smoothing) {
    correctness = smooth_correctness(scores.confidence, scores.correct, smoothing->h);
  } else {
    correctness.assign(scores.correct.begin(), scores.correct.end());
  }
  auto d = bin_scores(scores.confidence, correctness, n_bins, static_cast<int>(layer));
  d.smoothing = smoothing;
  d.measure = measure;
  d.temperature = temperature;
  return d;
}

/// Expected calibration error: sum_m |B_m|/n * |acc(B_m) - conf(B_m)|.
/// Only defined for unsmoothed diagrams.
inline double ece(const ReliabilityDiagram& d) {
  if (d.smoothing) throw std::invalid_argument("ece: diagram was built from smoothed correctness");
  const auto n = d.total();
  if (n == 0) throw std::invalid_argument("ece: empty diagram");
  CompensatedSum sum;
  for (std::size_t m = 0; m < d.count.size(); ++m) {
    if (d.count[m] == 0 || !d.accuracy[m]) continue;
    sum.add(static_cast<double>(d.count[m]) / static_cast<double>(n) * std::abs(*d.accuracy[m] - d.conf_mean[m]));
  }
  return sum.value();
}

/// Mean negative log-likelihood of the labels under softmax(logits / T).
inline double nll(const TraceDataset& val, std::size_t layer, double temperature) {
  if (layer >= val.header.n_layers) throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  CompensatedSum sum;
  for (std::size_t r = 0; r < val.size(); ++r) {
    const auto z = val.logits(r, layer);
    const double top = static_cast<double>(*std::max_element(z.begin(), z.end()));
    double s = 0.0;
    for (float v : z) s += std::exp((static_cast<double>(v) - top) / temperature);
    const double log_norm = std::log(s) + top / temperature;
    sum.add(log_norm - static_cast<double>(z[val.records[r].label]) / temperature);
  }
  return sum.value() / static_cast<double>(val.size());
}

struct TemperatureTable {
  std::vector<double> temperatures;

  void validate(std::size_t n_layers) const {
    if (temperatures.size() != n_layers) {
      throw DataError("temperature table has " + std::to_string(temperatures.size()) + " entries, expected " +
                      std::to_string(n_layers));
    }
    for (double t : temperatures) {
      if (!(t >= kMinTemperature && t <= kMaxTemperature)) throw DataError("temperature outside [0.05, 10]");
    }
  }

  bool operator==(const TemperatureTable&) const = default;
};

/// Temperature minimizing validation NLL: golden-section search on ln T over
/// [ln 0.05, ln 10] to 1e-4, then the best of {search result, both bounds,
/// T = 1}. T = 1 wins exact ties, so the result never has higher NLL than T = 1.
inline double fit_temperature(const TraceDataset& val, std::size_t layer) {
  if (val.records.empty()) throw std::invalid_argument("fit_temperature: empty validation set");
  if (layer >= val.header.n_layers) throw std::out_of_range("layer " + std::to_string(layer) + " out of range");
  auto f = [&](double log_t) { return nll(val, layer, std::exp(log_t)); };

  constexpr double kInvPhi = 0.6180339887498949;  // (sqrt(5) - 1) / 2
  constexpr double kTol = 1e-4;
  double a = std::log(kMinTemperature), b = std::log(kMaxTemperature);
  double x1 = b - kInvPhi * (b - a), x2 = a + kInvPhi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > kTol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = f(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = f(x2);
    }
  }

  double best_t = 1.0, best_nll = nll(val, layer, 1.0);
  for (double t : {std::exp(0.5 * (a + b)), kMinTemperature, kMaxTemperature}) {
    t = std::clamp(t, kMinTemperature, kMaxTemperature);
    const double v = nll(val, layer, t);
    if (v < best_nll) {
      best_nll = v;
      best_t = t;
    }
  }
  return best_t;
}

inline TemperatureTable fit_temperatures(const TraceDataset& val) {
  TemperatureTable table;
  for (std::size_t l = 0; l < val.header.n_layers; ++l) table.temperatures.push_back(fit_temperature(val, l));
  return table;
}

// JSON export. Keys are emitted in a fixed order.

inline nlohmann::ordered_json to_json(const ReliabilityDiagram& d) {
  nlohmann::ordered_json j;
  j["layer"] = d.layer;
  j["n_bins"] = d.n_bins;
  j["measure"] = to_string(d.measure);
  j["temperature"] = d.temperature;
  j["smoothing_H"] = d.smoothing ? nlohmann::ordered_json(d.smoothing->h) : nlohmann::ordered_json(nullptr);
  j["edges"] = d.edges;
  j["count"] = d.count;
  j["conf_mean"] = d.conf_mean;
  auto acc = nlohmann::ordered_json::array();
  for (const auto& a : d.accuracy) acc.push_back(a ? nlohmann::ordered_json(*a) : nlohmann::ordered_json(nullptr));
  j["accuracy"] = std::move(acc);
  return j;
}

template <typename Json>
ReliabilityDiagram diagram_from_json(const Json& j) {
  try {
    ReliabilityDiagram d;
    d.layer = j.at("layer").template get<int>();
    d.n_bins = j.at("n_bins").template get<int>();
    if (d.layer < 0 || d.n_bins < 1) throw DataError("diagram: bad layer or n_bins");
    if (j.contains("measure")) d.measure = parse_measure(j["measure"].template get<std::string>());
    if (j.contains("temperature")) d.temperature = j["temperature"].template get<double>();
    if (j.contains("smoothing_H") && !j["smoothing_H"].is_null()) {
      d.smoothing = SmoothingSpec{j["smoothing_H"].template get<std::size_t>()};
    }
    d.edges = j.at("edges").template get<std::vector<double>>();
    d.count = j.at("count").template get<std::vector<std::uint64_t>>();
    d.conf_mean = j.at("conf_mean").template get<std::vector<double>>();
    for (const auto& a : j.at("accuracy")) {
      d.accuracy.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.template get<double>()));
    }
    const auto m = static_cast<std::size_t>(d.n_bins);
    if (d.edges.size() != m + 1 || d.count.size() != m || d.conf_mean.size() != m || d.accuracy.size() != m) {
      throw DataError("diagram for layer " + std::to_string(d.layer) + ": array lengths disagree with n_bins");
    }
    for (std::size_t b = 0; b < m; ++b) {
      if ((d.count[b] == 0) != !d.accuracy[b]) {
        throw DataError("diagram for layer " + std::to_string(d.layer) + ": accuracy must be null exactly for empty bins");
      }
      if (d.accuracy[b] && !(*d.accuracy[b] >= 0.0 && *d.accuracy[b] <= 1.0)) {
        throw DataError("diagram for layer " + std::to_string(d.layer) + ": accuracy outside [0, 1]");
      }
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed diagram JSON: ") + e.what());
  }
}

/// Diagram file: {"diagrams":[...]}, or a single diagram object.
inline nlohmann::ordered_json diagrams_to_json(std::span<const ReliabilityDiagram> diagrams) {
  nlohmann::ordered_json j;
  j["diagrams"] = nlohmann::ordered_json::array();
  for (const auto& d : diagrams) j["diagrams"].push_back(to_json(d));
  return j;
}

inline std::vector<ReliabilityDiagram> diagrams_from_json(const nlohmann::json& j) {
  std::vector<ReliabilityDiagram> out;
  if (j.is_object() && j.contains("diagrams")) {
    if (!j["diagrams"].is_array()) throw DataError("\"diagrams\" must be an array");
    for (const auto& d : j["diagrams"]) out.push_back(diagram_from_json(d));
  } else if (j.is_array()) {
    for (const auto& d : j) out.push_back(diagram_from_json(d));
  } else {
    out.push_back(diagram_from_json(j));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const TemperatureTable& t) {
  nlohmann::ordered_json j;
  j["temperatures"] = t.temperatures;
  return j;
}

inline TemperatureTable temperatures_from_json(const nlohmann::json& j) {
  try {
    return TemperatureTable{j.at("temperatures").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed temperature JSON: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace pcee

#endif  // PCEE_CALIB_HPP_
