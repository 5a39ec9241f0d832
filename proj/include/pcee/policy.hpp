// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef PCEE_POLICY_HPP_
#define PCEE_POLICY_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pcee/calib.hpp"
#include "pcee/trace.hpp"

namespace pcee {

enum class PolicyKind { confidence, pcee, pcee_ws, oracle };

inline std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::confidence: return "confidence";
    case PolicyKind::pcee: return "pcee";
    case PolicyKind::pcee_ws: return "pcee_ws";
    case PolicyKind::oracle: return "oracle";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(std::string_view name) {
  if (name == "confidence") return PolicyKind::confidence;
  if (name == "pcee") return PolicyKind::pcee;
  if (name == "pcee_ws" || name == "pcee-ws") return PolicyKind::pcee_ws;
  if (name == "oracle") return PolicyKind::oracle;
  throw std::invalid_argument("unknown policy kind '" + std::string(name) + "'");
}

inline bool uses_diagrams(PolicyKind k) { return k == PolicyKind::pcee || k == PolicyKind::pcee_ws; }

/// One exit strategy with a single threshold shared by every layer.
///
/// `diagrams[i]` serves exit i for i < n_layers - 1; the last exit never
/// consults a diagram. Optional temperatures rescale each layer's logits
/// before the confidence is computed.
struct ExitPolicy {
  PolicyKind kind = PolicyKind::confidence;
  double delta = 0.0;
  ConfidenceMeasure measure = ConfidenceMeasure::max_softmax;
  std::vector<ReliabilityDiagram> diagrams;
  std::optional<TemperatureTable> temperatures;

  double temperature(std::size_t layer) const { return temperatures ? temperatures->temperatures[layer] : 1.0; }

  /// Checks the policy against a trace header; throws DataError on mismatch
  /// and std::invalid_argument on a malformed policy.
  void validate(const TraceHeader& header) const {
    if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in [0, 1]");
    if (temperatures) temperatures->validate(header.n_layers);
    if (!uses_diagrams(kind)) {
      if (!diagrams.empty()) throw std::invalid_argument(std::string(to_string(kind)) + " policy takes no diagrams");
      return;
    }
    const std::size_t needed = header.n_layers - 1;
    if (diagrams.size() < needed) {
      throw DataError(std::string(to_string(kind)) + " policy needs " + std::to_string(needed) + " diagrams, has " +
                      std::to_string(diagrams.size()));
    }
    for (std::size_t i = 0; i < needed; ++i) {
      const auto& d = diagrams[i];
      if (d.layer != static_cast<int>(i)) throw DataError("diagram " + std::to_string(i) + " is for layer " + std::to_string(d.layer));
      if (d.total() == 0) throw DataError("diagram for layer " + std::to_string(i) + " is empty");
      if (kind == PolicyKind::pcee_ws && !d.smoothing) throw DataError("pcee_ws needs smoothed diagrams (layer " + std::to_string(i) + ")");
      if (kind == PolicyKind::pcee && d.smoothing) throw DataError("pcee needs unsmoothed diagrams (layer " + std::to_string(i) + ")");
      if (d.measure != measure) throw DataError("diagram for layer " + std::to_string(i) + " uses a different confidence measure");
      if (std::abs(d.temperature - temperature(i)) > 1e-12) {
        throw DataError("diagram for layer " + std::to_string(i) + " was built at a different temperature");
      }
    }
  }

  std::string description() const {
    std::ostringstream os;
    if (temperatures) os << "ts+";
    os << to_string(kind);
    if (kind != PolicyKind::oracle) os << "(delta=" << delta << ", " << to_string(measure) << ")";
    return os.str();
  }
};

/// Estimated accuracy for confidence c: the accuracy of c's bin, or of the
/// nearest non-empty bin by bin-center distance (ties to the lower bin).
inline double lookup_accuracy(const ReliabilityDiagram& d, double c) {
  const int b = bin_index(c, d.n_bins);
  if (d.accuracy[static_cast<std::size_t>(b)]) return *d.accuracy[static_cast<std::size_t>(b)];
  for (int off = 1; off < d.n_bins; ++off) {
    if (b - off >= 0 && d.accuracy[static_cast<std::size_t>(b - off)]) return *d.accuracy[static_cast<std::size_t>(b - off)];
    if (b + off < d.n_bins && d.accuracy[static_cast<std::size_t>(b + off)]) return *d.accuracy[static_cast<std::size_t>(b + off)];
  }
  throw DataError("lookup_accuracy: diagram for layer " + std::to_string(d.layer) + " has no samples");
}

struct ExitDecision {
  std::uint32_t exit_layer = 0;
  std::uint32_t prediction = 0;
  double confidence_at_exit = 0.0;
  double cost = 0.0;

  bool operator==(const ExitDecision&) const = default;
};

/// Walks the exits in order and stops at the first one whose criterion holds
/// (>= delta); the last exit always answers. Call policy.validate(header)
/// once before deciding a batch.
inline ExitDecision decide_exit(const TraceRecord& record, const ExitPolicy& policy, const TraceHeader& header) {
  const std::size_t n = header.n_layers, k = header.n_classes;
  if (record.logits.size() != header.values_per_record()) throw DataError("record does not match trace header");
  if (uses_diagrams(policy.kind) && policy.diagrams.size() + 1 < n) throw DataError("policy is missing diagrams");

  std::optional<std::size_t> final_pred;
  if (policy.kind == PolicyKind::oracle) {
    final_pred = argmax(record.layer_logits(n - 1, k));  // argmax is temperature-invariant
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = softmax(record.layer_logits(i, k), policy.temperature(i));
    const auto pred = argmax(std::span<const double>(p));
    const double c = confidence(p, policy.measure);
    bool exit = i + 1 == n;
    if (!exit) {
      switch (policy.kind) {
        case PolicyKind::confidence: exit = c >= policy.delta; break;
        case PolicyKind::pcee:
        case PolicyKind::pcee_ws: exit = lookup_accuracy(policy.diagrams[i], c) >= policy.delta; break;
        case PolicyKind::oracle: exit = pred == *final_pred; break;
      }
    }
    if (exit) {
      return ExitDecision{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(pred), c, header.layer_costs[i]};
    }
  }
  throw std::logic_error("decide_exit: unreachable");
}

/// Builds a ready-to-use policy. For pcee/pcee_ws the diagrams for exits
/// 0..n-2 come from `validation` (at the policy's temperatures); pcee_ws bins
/// smoothed correctness with `smoothing_h` neighbors.
inline ExitPolicy make_policy(PolicyKind kind, double delta, const TraceDataset* validation = nullptr,
                              ConfidenceMeasure measure = ConfidenceMeasure::max_softmax, int n_bins = kDefaultBins,
                              std::size_t smoothing_h = kDefaultSmoothingH,
                              std::optional<TemperatureTable> temperatures = std::nullopt) {
  ExitPolicy p{kind, delta, measure, {}, std::move(temperatures)};
  if (uses_diagrams(kind)) {
    if (!validation) throw std::invalid_argument(std::string(to_string(kind)) + " policy needs a validation set");
    std::optional<SmoothingSpec> smoothing;
    if (kind == PolicyKind::pcee_ws) smoothing = SmoothingSpec{smoothing_h};
    for (std::size_t i = 0; i + 1 < validation->header.n_layers; ++i) {
      p.diagrams.push_back(build_diagram(*validation, i, n_bins, measure, p.temperature(i), smoothing));
    }
  }
  return p;
}

/// Policy configuration file:
/// {"kind":"pcee_ws","delta":0.73,"measure":"max_softmax","n_bins":50,"H":150,"temperature_file":"t.json"}
struct PolicyConfig {
  PolicyKind kind = PolicyKind::pcee;
  double delta = 0.0;
  ConfidenceMeasure measure = ConfidenceMeasure::max_softmax;
  int n_bins = kDefaultBins;
  std::size_t h = kDefaultSmoothingH;
  std::optional<std::string> temperature_file;
};

inline PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  try {
    PolicyConfig c;
    c.kind = parse_policy_kind(j.at("kind").get<std::string>());
    c.delta = j.value("delta", 0.0);
    if (j.contains("measure")) c.measure = parse_measure(j["measure"].get<std::string>());
    c.n_bins = j.value("n_bins", kDefaultBins);
    c.h = j.value("H", kDefaultSmoothingH);
    if (j.contains("temperature_file") && !j["temperature_file"].is_null()) {
      c.temperature_file = j["temperature_file"].get<std::string>();
    }
    if (!(c.delta >= 0.0 && c.delta <= 1.0)) throw std::invalid_argument("policy config: delta must lie in [0, 1]");
    if (c.n_bins < 1 || c.h < 1) throw std::invalid_argument("policy config: n_bins and H must be positive");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed policy config: ") + e.what());
  }
}

}  // namespace pcee

#endif  // PCEE_POLICY_HPP_
