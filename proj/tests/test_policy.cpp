// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "pcee/policy.hpp"
#include "pcee/synth.hpp"

using namespace pcee;

namespace {

ReliabilityDiagram diagram_with(int layer, int n_bins, std::vector<std::pair<int, double>> filled) {
  ReliabilityDiagram d;
  d.layer = layer;
  d.n_bins = n_bins;
  for (int m = 0; m <= n_bins; ++m) d.edges.push_back(static_cast<double>(m) / n_bins);
  d.count.assign(static_cast<std::size_t>(n_bins), 0);
  d.conf_mean.assign(static_cast<std::size_t>(n_bins), 0.0);
  d.accuracy.assign(static_cast<std::size_t>(n_bins), std::nullopt);
  for (auto [m, acc] : filled) {
    d.count[static_cast<std::size_t>(m)] = 10;
    d.conf_mean[static_cast<std::size_t>(m)] = (m + 0.5) / n_bins;
    d.accuracy[static_cast<std::size_t>(m)] = acc;
  }
  return d;
}

// Two-class record whose layer-0 max-softmax confidence is `c0`.
TraceRecord two_layer_record(double c0, std::uint32_t label = 0) {
  const auto z = static_cast<float>(std::log(c0 / (1 - c0)));
  return TraceRecord{0, label, {z, 0.0f, 3.0f, 0.0f}};
}

const TraceHeader kTwoLayers{1, 2, 2, {10.0, 20.0}};

}  // namespace

TEST(Lookup, DirectBin) {
  const auto d = diagram_with(0, 50, {{35, 0.73}});
  EXPECT_DOUBLE_EQ(lookup_accuracy(d, 0.71), 0.73);
}

TEST(Lookup, EmptyBinTieGoesToLowerBin) {
  const auto d = diagram_with(0, 50, {{8, 0.4}, {12, 0.9}});
  EXPECT_DOUBLE_EQ(lookup_accuracy(d, 10.5 / 50), 0.4);
  EXPECT_DOUBLE_EQ(lookup_accuracy(d, 11.5 / 50), 0.9);
  EXPECT_DOUBLE_EQ(lookup_accuracy(d, 0.0), 0.4);
  EXPECT_DOUBLE_EQ(lookup_accuracy(d, 1.0), 0.9);
}

TEST(Lookup, AllEmptyIsError) {
  const auto d = diagram_with(0, 10, {});
  EXPECT_THROW(lookup_accuracy(d, 0.5), DataError);
  EXPECT_THROW(lookup_accuracy(diagram_with(0, 10, {{1, 0.5}}), 1.5), std::invalid_argument);
}

TEST(Lookup, MatchesLinearScanOracle) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 1000; ++t) {
    const int bins = 1 + static_cast<int>(gen() % 60);
    const auto d = oracle::random_diagram(gen, 0, bins, 0.8);
    const double c = t % 10 == 0 ? 1.0 : u(gen);
    EXPECT_EQ(lookup_accuracy(d, c), oracle::linear_lookup(d, c));
  }
}

TEST(DecideExit, PceeContinuesPastOverconfidentHead) {
  ExitPolicy p{PolicyKind::pcee, 0.7, ConfidenceMeasure::max_softmax, {diagram_with(0, 50, {{45, 0.6}})}, {}};
  p.validate(kTwoLayers);
  const auto d = decide_exit(two_layer_record(0.9), p, kTwoLayers);
  EXPECT_EQ(d.exit_layer, 1u);
  EXPECT_EQ(d.cost, 20.0);
}

TEST(DecideExit, ConfidenceExitsPrematurely) {
  ExitPolicy p{PolicyKind::confidence, 0.7, ConfidenceMeasure::max_softmax, {}, {}};
  const auto d = decide_exit(two_layer_record(0.9), p, kTwoLayers);
  EXPECT_EQ(d.exit_layer, 0u);
  EXPECT_EQ(d.prediction, 0u);
  EXPECT_NEAR(d.confidence_at_exit, 0.9, 1e-6);
  EXPECT_EQ(d.cost, 10.0);
}

TEST(DecideExit, OracleStopsAtFirstAgreement) {
  const TraceHeader h{1, 3, 4, {1, 2, 3}};
  const TraceRecord r{0, 3, {0, 0, 5, 0, /**/ 0, 0, 0, 5, /**/ 0, 0, 0, 5}};
  ExitPolicy p{PolicyKind::oracle, 0.0, ConfidenceMeasure::max_softmax, {}, {}};
  const auto d = decide_exit(r, p, h);
  EXPECT_EQ(d.exit_layer, 1u);
  EXPECT_EQ(d.prediction, 3u);
}

TEST(DecideExit, ZeroDeltaExitsImmediately) {
  ExitPolicy p{PolicyKind::pcee, 0.0, ConfidenceMeasure::max_softmax, {diagram_with(0, 50, {{45, 0.0}})}, {}};
  for (double c : {0.51, 0.7, 0.99}) EXPECT_EQ(decide_exit(two_layer_record(c), p, kTwoLayers).exit_layer, 0u);
}

TEST(DecideExit, ThresholdIsInclusive) {
  ExitPolicy p{PolicyKind::pcee, 0.6, ConfidenceMeasure::max_softmax, {diagram_with(0, 50, {{45, 0.6}})}, {}};
  EXPECT_EQ(decide_exit(two_layer_record(0.9), p, kTwoLayers).exit_layer, 0u);
  ExitPolicy c{PolicyKind::confidence, 0.5, ConfidenceMeasure::max_softmax, {}, {}};
  const TraceRecord tie{0, 0, {0.0f, 0.0f, 1.0f, 0.0f}};
  EXPECT_EQ(decide_exit(tie, c, kTwoLayers).exit_layer, 0u);
}

TEST(DecideExit, ArgmaxTiesPickLowestClass) {
  const TraceHeader h{1, 1, 3, {1}};
  ExitPolicy p{PolicyKind::confidence, 1.0, ConfidenceMeasure::max_softmax, {}, {}};
  EXPECT_EQ(decide_exit(TraceRecord{0, 0, {1.0f, 2.0f, 2.0f}}, p, h).prediction, 1u);
}

TEST(DecideExit, SingleLayerAlwaysExitsThere) {
  const TraceHeader h{1, 1, 2, {5}};
  for (auto kind : {PolicyKind::confidence, PolicyKind::pcee, PolicyKind::oracle}) {
    ExitPolicy p{kind, 1.0, ConfidenceMeasure::max_softmax, {}, {}};
    p.validate(h);
    EXPECT_EQ(decide_exit(TraceRecord{0, 0, {0.0f, 1.0f}}, p, h).exit_layer, 0u);
  }
}

TEST(Policy, ValidationErrors) {
  ExitPolicy p{PolicyKind::pcee, 0.5, ConfidenceMeasure::max_softmax, {}, {}};
  EXPECT_THROW(p.validate(kTwoLayers), DataError);
  EXPECT_THROW(decide_exit(two_layer_record(0.8), p, kTwoLayers), DataError);
  p.diagrams = {diagram_with(0, 10, {{1, 0.5}})};
  EXPECT_NO_THROW(p.validate(kTwoLayers));
  p.kind = PolicyKind::pcee_ws;  // unsmoothed diagrams
  EXPECT_THROW(p.validate(kTwoLayers), DataError);
  p.diagrams[0].smoothing = SmoothingSpec{3};
  EXPECT_NO_THROW(p.validate(kTwoLayers));
  p.measure = ConfidenceMeasure::normalized_negentropy;
  EXPECT_THROW(p.validate(kTwoLayers), DataError);
  p.measure = ConfidenceMeasure::max_softmax;
  p.temperatures = TemperatureTable{{2.0, 1.0}};
  EXPECT_THROW(p.validate(kTwoLayers), DataError);  // diagram built at T = 1
  p.delta = 1.5;
  EXPECT_THROW(p.validate(kTwoLayers), std::invalid_argument);
  ExitPolicy c{PolicyKind::confidence, 0.5, ConfidenceMeasure::max_softmax, {diagram_with(0, 10, {{1, 0.5}})}, {}};
  EXPECT_THROW(c.validate(kTwoLayers), std::invalid_argument);
  TraceRecord short_rec{0, 0, {1.0f}};
  EXPECT_THROW(decide_exit(short_rec, ExitPolicy{}, kTwoLayers), DataError);
}

TEST(Policy, KindNamesAndConfig) {
  for (auto k : {PolicyKind::confidence, PolicyKind::pcee, PolicyKind::pcee_ws, PolicyKind::oracle}) {
    EXPECT_EQ(parse_policy_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_policy_kind("laplace"), std::invalid_argument);
  const auto c = policy_config_from_json(nlohmann::json::parse(R"({"kind":"pcee_ws","delta":0.73,"measure":"max_softmax"})"));
  EXPECT_EQ(c.kind, PolicyKind::pcee_ws);
  EXPECT_EQ(c.delta, 0.73);
  EXPECT_EQ(c.n_bins, 50);
  EXPECT_EQ(c.h, 150u);
  EXPECT_FALSE(c.temperature_file.has_value());
  EXPECT_THROW(policy_config_from_json(nlohmann::json::parse(R"({"delta":0.5})")), DataError);
  EXPECT_THROW(policy_config_from_json(nlohmann::json::parse(R"({"kind":"pcee","delta":2})")), std::invalid_argument);
}

TEST(Policy, MakePolicyBuildsDiagramsForAllButLastLayer) {
  GeneratorConfig cfg;
  cfg.n_samples = 400;
  const auto val = generate(cfg);
  const auto p = make_policy(PolicyKind::pcee_ws, 0.7, &val, ConfidenceMeasure::max_softmax, 20, 30);
  ASSERT_EQ(p.diagrams.size(), 3u);
  for (const auto& d : p.diagrams) {
    EXPECT_EQ(d.n_bins, 20);
    EXPECT_EQ(d.smoothing, SmoothingSpec{30});
  }
  EXPECT_THROW(make_policy(PolicyKind::pcee, 0.7), std::invalid_argument);
  EXPECT_NO_THROW(p.validate(val.header));
}

// Properties over synthetic traces.

class PolicyProperties : public ::testing::Test {
 protected:
  void SetUp() override {
    GeneratorConfig cfg;
    cfg.n_samples = 3000;
    cfg.gamma = 2.0;
    cfg.seed = 77;
    const auto parts = split(generate(cfg), {0.5, 3});
    val_ = parts.validation;
    test_ = parts.test;
  }
  TraceDataset val_, test_;
};

TEST_F(PolicyProperties, LastLayerGuaranteeAndOracleFidelity) {
  const auto oracle = make_policy(PolicyKind::oracle, 0.0);
  const auto strict = make_policy(PolicyKind::confidence, 1.0);
  const std::size_t last = test_.header.n_layers - 1;
  for (const auto& r : test_.records) {
    const auto d = decide_exit(r, oracle, test_.header);
    EXPECT_EQ(d.prediction, argmax(r.layer_logits(last, test_.header.n_classes)));
    EXPECT_LE(d.exit_layer, last);
    EXPECT_EQ(decide_exit(r, strict, test_.header).exit_layer, last);  // confidences stay below 1
  }
}

TEST_F(PolicyProperties, TemperatureWrapPreservesPredictions) {
  const TemperatureTable temps{{0.3, 2.0, 5.0, 0.7}};
  auto plain = make_policy(PolicyKind::confidence, 0.0);
  auto wrapped = make_policy(PolicyKind::confidence, 0.0, nullptr, ConfidenceMeasure::max_softmax, 50, 150, temps);
  for (const auto& r : test_.records) {
    const auto a = decide_exit(r, plain, test_.header), b = decide_exit(r, wrapped, test_.header);
    EXPECT_EQ(a.exit_layer, 0u);
    EXPECT_EQ(a.prediction, b.prediction);
  }
}

TEST_F(PolicyProperties, DeltaMonotonicity) {
  const auto base_pcee = make_policy(PolicyKind::pcee, 0.0, &val_);
  const auto base_ws = make_policy(PolicyKind::pcee_ws, 0.0, &val_, ConfidenceMeasure::max_softmax, 50, 100);
  const auto base_entropy = make_policy(PolicyKind::pcee, 0.0, &val_, ConfidenceMeasure::normalized_negentropy);
  std::vector<ExitPolicy> bases = {make_policy(PolicyKind::confidence, 0.0), base_pcee, base_ws, base_entropy};
  for (auto base : bases) {
    for (std::size_t r = 0; r < 300; ++r) {
      std::uint32_t prev = 0;
      for (int step = 0; step <= 20; ++step) {
        base.delta = step / 20.0;
        const auto d = decide_exit(test_.records[r], base, test_.header);
        EXPECT_GE(d.exit_layer, prev);
        prev = d.exit_layer;
      }
    }
  }
}

TEST_F(PolicyProperties, SmoothingWithHOneEqualsPcee) {
  auto pcee = make_policy(PolicyKind::pcee, 0.7, &val_);
  auto ws = make_policy(PolicyKind::pcee_ws, 0.7, &val_, ConfidenceMeasure::max_softmax, 50, 1);
  for (std::size_t i = 0; i < pcee.diagrams.size(); ++i) {
    EXPECT_EQ(pcee.diagrams[i].accuracy, ws.diagrams[i].accuracy);
  }
  for (const auto& r : test_.records) EXPECT_EQ(decide_exit(r, pcee, test_.header), decide_exit(r, ws, test_.header));
}

TEST(DecideExit, MatchesNaiveEvaluatorOnMicroInstances) {
  std::mt19937_64 gen(2024);
  int agreements = 0, total = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto layers = static_cast<std::uint32_t>(1 + gen() % 3);
    const auto classes = static_cast<std::uint32_t>(2 + gen() % 3);
    const auto ds = oracle::random_trace(gen, layers, classes, 1 + gen() % 50, 1.5, inst % 3 == 0);
    const auto kind = static_cast<PolicyKind>(gen() % 4);
    ExitPolicy p{kind, std::round(std::uniform_real_distribution<double>(0, 1)(gen) * 20) / 20,
                 gen() % 2 ? ConfidenceMeasure::max_softmax : ConfidenceMeasure::normalized_negentropy, {}, {}};
    if (uses_diagrams(kind)) {
      for (std::uint32_t l = 0; l + 1 < layers; ++l) {
        p.diagrams.push_back(oracle::random_diagram(gen, static_cast<int>(l), 1 + static_cast<int>(gen() % 20)));
        p.diagrams.back().measure = p.measure;
        if (kind == PolicyKind::pcee_ws) p.diagrams.back().smoothing = SmoothingSpec{5};
      }
    }
    p.validate(ds.header);
    for (const auto& r : ds.records) {
      const auto got = decide_exit(r, p, ds.header);
      const auto want = oracle::naive_decide(r, p, ds.header);
      ++total;
      if (got.exit_layer == want.exit_layer && got.prediction == want.prediction) ++agreements;
    }
  }
  EXPECT_EQ(agreements, total);
}
