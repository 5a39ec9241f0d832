// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef PCEE_SYNTH_HPP_
#define PCEE_SYNTH_HPP_

// Synthetic multi-exit traces with known ground truth.
//
// Each sample draws a difficulty d ~ U(0,1). Exit i is correct with
// probability p_i = sigmoid(a (s_i - d)) and reports confidence
// c_i = clamp(p_i^(1/gamma), 1/K + eps, 1 - eps). Correctness is drawn with
// probability c_i^gamma (equal to p_i outside the clamp), so
// E[correct | c] = c^gamma holds exactly: gamma = 1 is calibrated, gamma > 1
// overconfident, gamma < 1 underconfident. Logits are ln of the probability
// vector with c_i on the predicted class and (1 - c_i)/(K - 1) elsewhere.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcee/rng.hpp"
#include "pcee/trace.hpp"

namespace pcee {

struct GeneratorConfig {
  std::size_t n_samples = 10000;
  std::uint32_t n_layers = 4;
  std::uint32_t n_classes = 10;
  std::uint64_t seed = 0;
  std::vector<double> layer_skills;  // empty: evenly spaced on [0.3, 0.9]
  double steepness = 8.0;
  double gamma = 1.0;
  std::vector<double> layer_costs;  // empty: 6.5e6 per layer, cumulative
  double confidence_floor_eps = 1e-3;

  /// Fills empty skills/costs with defaults for n_layers and validates.
  GeneratorConfig resolved() const {
    GeneratorConfig c = *this;
    if (c.n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
    if (c.layer_skills.empty()) c.layer_skills = evenly_spaced(0.3, 0.9, c.n_layers);
    if (c.layer_costs.empty()) {
      for (std::uint32_t i = 0; i < c.n_layers; ++i) c.layer_costs.push_back(6.5e6 * (i + 1));
    }
    c.validate();
    return c;
  }

  void validate() const {
    if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
    if (n_classes < 2) throw std::invalid_argument("n_classes must be >= 2");
    if (layer_skills.size() != n_layers) throw std::invalid_argument("layer_skills needs one entry per layer");
    for (std::size_t i = 0; i < layer_skills.size(); ++i) {
      if (!std::isfinite(layer_skills[i])) throw std::invalid_argument("layer_skills must be finite");
      if (i > 0 && !(layer_skills[i] > layer_skills[i - 1])) throw std::invalid_argument("layer_skills must be strictly increasing");
    }
    if (!(steepness > 0.0) || !std::isfinite(steepness)) throw std::invalid_argument("steepness must be positive");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be positive");
    if (!(confidence_floor_eps > 0.0) || !(1.0 / n_classes + confidence_floor_eps < 1.0 - confidence_floor_eps)) {
      throw std::invalid_argument("confidence_floor_eps leaves an empty confidence range");
    }
    TraceHeader h{1, n_layers, n_classes, layer_costs};
    try {
      h.validate();
    } catch (const TraceError& e) {
      throw std::invalid_argument(e.what());
    }
  }

  static std::vector<double> evenly_spaced(double lo, double hi, std::uint32_t n) {
    if (n == 1) return {hi};
    std::vector<double> v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = lo + (hi - lo) * i / (n - 1);
    return v;
  }
};

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Reported confidence for a true-correctness probability p.
inline double synth_confidence(double p, double gamma, std::uint32_t n_classes, double eps) {
  return std::clamp(std::pow(p, 1.0 / gamma), 1.0 / n_classes + eps, 1.0 - eps);
}

/// Deterministic in config.seed. Sample r uses its own stream
/// Xoshiro256::for_stream(seed, r); draw order: label, difficulty, then per
/// layer a correctness uniform and, if wrong, the wrong-class index.
inline TraceDataset generate(const GeneratorConfig& config) {
  const auto cfg = config.resolved();
  const std::uint32_t n = cfg.n_layers, k = cfg.n_classes;
  TraceDataset ds{{1, n, k, cfg.layer_costs}, {}};
  ds.records.resize(cfg.n_samples);
  for (std::size_t r = 0; r < cfg.n_samples; ++r) {
    auto rng = Xoshiro256::for_stream(cfg.seed, r);
    auto& rec = ds.records[r];
    rec.id = r;
    rec.label = static_cast<std::uint32_t>(rng.uniform_below(k));
    const double difficulty = rng.uniform01();
    rec.logits.resize(static_cast<std::size_t>(n) * k);
    for (std::uint32_t i = 0; i < n; ++i) {
      const double p = logistic(cfg.steepness * (cfg.layer_skills[i] - difficulty));
      const double c = synth_confidence(p, cfg.gamma, k, cfg.confidence_floor_eps);
      const bool correct = rng.uniform01() < std::pow(c, cfg.gamma);
      std::uint32_t pred = rec.label;
      if (!correct) {
        pred = static_cast<std::uint32_t>(rng.uniform_below(k - 1));
        if (pred >= rec.label) ++pred;
      }
      const auto hit = static_cast<float>(std::log(c));
      const auto miss = static_cast<float>(std::log((1.0 - c) / (k - 1)));
      for (std::uint32_t j = 0; j < k; ++j) rec.logits[static_cast<std::size_t>(i) * k + j] = j == pred ? hit : miss;
    }
  }
  return ds;
}

}  // namespace pcee

#endif  // PCEE_SYNTH_HPP_
