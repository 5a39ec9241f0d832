// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef PCEE_EVAL_HPP_
#define PCEE_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "pcee/calib.hpp"
#include "pcee/policy.hpp"
#include "pcee/trace.hpp"

namespace pcee {

struct EvaluationReport {
  std::string policy;
  PolicyKind kind = PolicyKind::confidence;
  double delta = 0.0;
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  double avg_layers = 0.0;  // mean of exit_layer + 1
  double avg_cost = 0.0;    // mean layer_costs[exit_layer]
  std::vector<std::uint64_t> exit_histogram;
  std::vector<double> per_layer_accuracy;  // forced exit at each layer
  std::vector<double> per_layer_ece;       // test split, unsmoothed

  double prediction_error() const { return 1.0 - accuracy; }
};

struct EvalOptions {
  /// 0 means std::thread::hardware_concurrency().
  unsigned threads = 1;
  /// Bins for per-layer ECE when the policy has no diagrams.
  int ece_bins = kDefaultBins;
};

namespace detail {

inline unsigned resolve_threads(unsigned threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  return threads;
}

/// Calls fn(i) for i in [0, n) across `threads` contiguous chunks.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  threads = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(n, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct LayerDiagnostics {
  std::vector<double> accuracy;
  std::vector<double> ece;
};

inline LayerDiagnostics layer_diagnostics(const TraceDataset& test, const ExitPolicy& policy, int n_bins) {
  LayerDiagnostics out;
  for (std::size_t l = 0; l < test.header.n_layers; ++l) {
    const auto s = score_layer(test, l, policy.measure, policy.temperature(l));
    std::uint64_t hits = 0;
    for (auto c : s.correct) hits += c;
    out.accuracy.push_back(static_cast<double>(hits) / static_cast<double>(test.size()));
    std::vector<double> correctness(s.correct.begin(), s.correct.end());
    out.ece.push_back(ece(bin_scores(s.confidence, correctness, n_bins, static_cast<int>(l))));
  }
  return out;
}

inline EvaluationReport summarize(const TraceDataset& test, const ExitPolicy& policy, const std::vector<ExitDecision>& decisions,
                                  const LayerDiagnostics& diag) {
  EvaluationReport r;
  r.policy = policy.description();
  r.kind = policy.kind;
  r.delta = policy.delta;
  r.n_samples = test.size();
  r.exit_histogram.assign(test.header.n_layers, 0);
  std::uint64_t hits = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    ++r.exit_histogram[decisions[i].exit_layer];
    if (decisions[i].prediction == test.records[i].label) ++hits;
  }
  const auto n = static_cast<double>(test.size());
  r.accuracy = static_cast<double>(hits) / n;
  CompensatedSum layers, cost;
  for (std::size_t l = 0; l < r.exit_histogram.size(); ++l) {
    layers.add(static_cast<double>(r.exit_histogram[l]) * static_cast<double>(l + 1));
    cost.add(static_cast<double>(r.exit_histogram[l]) * test.header.layer_costs[l]);
  }
  r.avg_layers = layers.value() / n;
  r.avg_cost = cost.value() / n;
  r.per_layer_accuracy = diag.accuracy;
  r.per_layer_ece = diag.ece;
  return r;
}

inline int ece_bins_for(const ExitPolicy& policy, const EvalOptions& opts) {
  return policy.diagrams.empty() ? opts.ece_bins : policy.diagrams.front().n_bins;
}

}  // namespace detail

/// Decisions for every test record, in record order.
inline std::vector<ExitDecision> decide_all(const TraceDataset& test, const ExitPolicy& policy, unsigned threads = 1) {
  policy.validate(test.header);
  std::vector<ExitDecision> out(test.size());
  detail::parallel_for(test.size(), threads, [&](std::size_t i) { out[i] = decide_exit(test.records[i], policy, test.header); });
  return out;
}

inline EvaluationReport evaluate(const TraceDataset& test, const ExitPolicy& policy, const EvalOptions& opts = {}) {
  const auto decisions = decide_all(test, policy, opts.threads);
  const auto diag = detail::layer_diagnostics(test, policy, detail::ece_bins_for(policy, opts));
  return detail::summarize(test, policy, decisions, diag);
}

struct SweepResult {
  PolicyKind kind = PolicyKind::confidence;
  std::vector<double> deltas;
  std::vector<EvaluationReport> reports;
};

/// Evaluates `base` at each delta (strictly increasing, within [0,1]).
inline SweepResult sweep(const TraceDataset& test, const ExitPolicy& base, const std::vector<double>& deltas,
                         const EvalOptions& opts = {}) {
  if (deltas.empty()) throw std::invalid_argument("sweep: empty delta list");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] >= 0.0 && deltas[i] <= 1.0)) throw std::invalid_argument("sweep: delta outside [0, 1]");
    if (i > 0 && !(deltas[i] > deltas[i - 1])) throw std::invalid_argument("sweep: deltas must be strictly increasing");
  }
  base.validate(test.header);
  const auto diag = detail::layer_diagnostics(test, base, detail::ece_bins_for(base, opts));
  SweepResult out{base.kind, deltas, {}};
  ExitPolicy p = base;
  for (double d : deltas) {
    p.delta = d;
    out.reports.push_back(detail::summarize(test, p, decide_all(test, p, opts.threads), diag));
  }
  return out;
}

struct ParetoPoint {
  double avg_cost = 0.0;
  double prediction_error = 0.0;
  std::string policy;
  double delta = 0.0;

  bool operator==(const ParetoPoint&) const = default;
};

inline std::vector<ParetoPoint> pareto_points(const SweepResult& s) {
  std::vector<ParetoPoint> pts;
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    pts.push_back({s.reports[i].avg_cost, s.reports[i].prediction_error(), std::string(to_string(s.kind)), s.deltas[i]});
  }
  return pts;
}

/// Non-dominated subset under (avg_cost, prediction_error), both minimized,
/// sorted by cost. Of several points at identical coordinates the first in
/// (cost, error, policy, delta) order is kept.
inline std::vector<ParetoPoint> pareto(std::vector<ParetoPoint> points) {
  if (points.empty()) throw std::invalid_argument("pareto: no points");
  std::sort(points.begin(), points.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    return std::tie(a.avg_cost, a.prediction_error, a.policy, a.delta) <
           std::tie(b.avg_cost, b.prediction_error, b.policy, b.delta);
  });
  std::vector<ParetoPoint> front;
  for (const auto& p : points) {
    if (front.empty() || p.prediction_error < front.back().prediction_error) front.push_back(p);
  }
  return front;
}

inline double error_percent_2dp(double accuracy) { return std::round((1.0 - accuracy) * 10000.0) / 100.0; }

inline nlohmann::ordered_json to_json(const EvaluationReport& r) {
  nlohmann::ordered_json j;
  j["policy"] = r.policy;
  j["kind"] = to_string(r.kind);
  j["delta"] = r.delta;
  j["n_samples"] = r.n_samples;
  j["accuracy"] = r.accuracy;
  j["prediction_error_pct"] = error_percent_2dp(r.accuracy);
  j["avg_layers"] = r.avg_layers;
  j["avg_flops"] = r.avg_cost;
  j["exit_histogram"] = r.exit_histogram;
  j["per_layer_accuracy"] = r.per_layer_accuracy;
  j["per_layer_ece"] = r.per_layer_ece;
  return j;
}

inline nlohmann::ordered_json to_json(const SweepResult& s) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(s.kind);
  j["reports"] = nlohmann::ordered_json::array();
  for (const auto& r : s.reports) j["reports"].push_back(to_json(r));
  return j;
}

/// CSV columns: kind, delta, accuracy, avg_layers, avg_flops,
/// exit_hist_0..exit_hist_{L-1}; sweeps append prediction_error_pct.
inline std::string report_csv_header(std::size_t n_layers, bool with_error = false) {
  std::string h = "kind,delta,accuracy,avg_layers,avg_flops";
  for (std::size_t l = 0; l < n_layers; ++l) h += ",exit_hist_" + std::to_string(l);
  if (with_error) h += ",prediction_error_pct";
  return h + "\n";
}

inline std::string report_csv_row(const EvaluationReport& r, bool with_error = false) {
  std::ostringstream os;
  os << to_string(r.kind) << ',' << format_shortest(r.delta) << ',' << format_shortest(r.accuracy) << ','
     << format_shortest(r.avg_layers) << ',' << format_shortest(r.avg_cost);
  for (auto c : r.exit_histogram) os << ',' << c;
  if (with_error) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", error_percent_2dp(r.accuracy));
    os << ',' << buf;
  }
  os << '\n';
  return os.str();
}

inline std::string to_csv(const EvaluationReport& r) {
  return report_csv_header(r.exit_histogram.size()) + report_csv_row(r);
}

inline std::string to_csv(const SweepResult& s) {
  std::string out = report_csv_header(s.reports.empty() ? 0 : s.reports.front().exit_histogram.size(), true);
  for (const auto& r : s.reports) out += report_csv_row(r, true);
  return out;
}

/// Plot-ready error-vs-FLOPs CSV.
inline std::string pareto_csv(const std::vector<ParetoPoint>& points) {
  std::string out = "policy,delta,avg_flops,prediction_error_pct\n";
  for (const auto& p : points) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", std::round(p.prediction_error * 10000.0) / 100.0);
    out += p.policy + "," + format_shortest(p.delta) + "," + format_shortest(p.avg_cost) + "," + buf + "\n";
  }
  return out;
}

}  // namespace pcee

#endif  // PCEE_EVAL_HPP_
