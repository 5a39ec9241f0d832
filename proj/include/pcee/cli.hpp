// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef PCEE_CLI_HPP_
#define PCEE_CLI_HPP_

// `pcee` command line: gen, split, calibrate, fit-temp, ece, eval, sweep,
// convert. Exit codes: 0 success, 1 usage error, 2 data or format error.
//
// Every subcommand accepts --config file.json whose keys name flags
// ("seed" -> --seed, "out_val" -> --out-val; policy files also map
// kind/n_bins/H/temperature_file to --policy/--bins/--smooth-H/--temps).
// Flags given on the command line override the file.

#include <algorithm>
#include <charconv>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcee/calib.hpp"
#include "pcee/eval.hpp"
#include "pcee/io.hpp"
#include "pcee/policy.hpp"
#include "pcee/synth.hpp"
#include "pcee/trace.hpp"

namespace pcee::cli {

namespace detail {

inline std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    double v = 0.0;
    const auto* first = item.data();
    const auto* last = item.data() + item.size();
    while (first < last && *first == ' ') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) throw std::invalid_argument(std::string("bad number in ") + what + ": '" + item + "'");
    out.push_back(v);
  }
  return out;
}

inline std::string json_scalar_to_arg(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string s;
    for (const auto& e : v) {
      if (!s.empty()) s += ',';
      s += json_scalar_to_arg(e);
    }
    return s;
  }
  return v.dump();
}

/// Flag arguments derived from a --config JSON object.
inline std::vector<std::string> config_args(const std::string& path) {
  static const std::map<std::string, std::string> aliases = {
      {"kind", "policy"}, {"n_bins", "bins"}, {"H", "smooth-H"}, {"temperature_file", "temps"},
      {"n_samples", "n"}, {"n_layers", "layers"}, {"n_classes", "classes"}, {"layer_skills", "skills"},
      {"layer_costs", "costs"}};
  const auto j = read_json_file(path);
  if (!j.is_object()) throw DataError(path + ": config must be a JSON object");
  std::vector<std::string> args;
  for (const auto& [key, value] : j.items()) {
    if (value.is_null()) continue;
    std::string flag = key;
    if (auto it = aliases.find(key); it != aliases.end()) flag = it->second;
    std::replace(flag.begin(), flag.end(), '_', '-');
    args.push_back("--" + flag);
    args.push_back(json_scalar_to_arg(value));
  }
  return args;
}

/// Moves --config out of argv and splices its flags in front of the
/// subcommand's own flags, so later (command line) values win.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> config;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config requires a file");
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!config) return rest;
  auto extra = config_args(*config);
  // rest[0] is the program name, rest[1] the subcommand.
  const auto at = rest.size() >= 2 ? rest.begin() + 2 : rest.end();
  rest.insert(at, extra.begin(), extra.end());
  return rest;
}

inline void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty() || out_path == "-") {
    out << text;
  } else {
    write_file_atomic(out_path, text);
  }
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

inline TraceFormat format_for(const std::string& path, const std::string& override_name) {
  return override_name.empty() ? format_from_path(path) : parse_trace_format(override_name);
}

inline std::optional<TemperatureTable> load_temps(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return temperatures_from_json(read_json_file(path));
}

}  // namespace detail

struct PolicyArgs {
  std::string trace, kind = "pcee", measure, diagrams, temps, format = "json", out, deltas, pareto_out, trace_format;
  double delta = 0.0;
  unsigned threads = 0;
  int bins = kDefaultBins;
  std::size_t smooth_h = kDefaultSmoothingH;
};

inline void add_policy_flags(CLI::App* sub, PolicyArgs& a) {
  sub->add_option("--trace", a.trace, "Test trace file")->required();
  sub->add_option("--trace-format", a.trace_format, "ndjson|binary (default: by extension)");
  sub->add_option("--policy", a.kind, "confidence|pcee|pcee_ws|oracle");
  sub->add_option("--measure", a.measure, "max_softmax|normalized_negentropy (default: from diagrams)");
  sub->add_option("--diagrams", a.diagrams, "Reliability diagrams JSON (pcee, pcee_ws)");
  sub->add_option("--temps", a.temps, "Temperature table JSON");
  sub->add_option("--format", a.format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
  sub->add_option("--out", a.out, "Output file (default: stdout)");
  sub->add_option("--threads", a.threads, "Worker threads (0: hardware parallelism)");
  // Accepted so a policy config file can be passed via --config; diagrams
  // carry their own bin count and smoothing.
  sub->add_option("--bins", a.bins, "Bins for per-layer ECE when no diagrams are given");
  sub->add_option("--smooth-H", a.smooth_h, "Ignored; diagrams carry their smoothing");
}

inline ExitPolicy load_policy(const PolicyArgs& a, const TraceHeader& header) {
  ExitPolicy p;
  p.kind = parse_policy_kind(a.kind);
  p.delta = a.delta;
  p.temperatures = detail::load_temps(a.temps);
  if (uses_diagrams(p.kind)) {
    if (a.diagrams.empty()) throw std::invalid_argument(a.kind + " policy requires --diagrams");
    auto all = diagrams_from_json(read_json_file(a.diagrams));
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.layer < y.layer; });
    for (auto& d : all) {
      if (d.layer + 1 < static_cast<int>(header.n_layers)) p.diagrams.push_back(std::move(d));
    }
    p.measure = p.diagrams.empty() ? ConfidenceMeasure::max_softmax : p.diagrams.front().measure;
  }
  if (!a.measure.empty()) p.measure = parse_measure(a.measure);
  p.validate(header);
  return p;
}

/// Runs the command line `args` (args[0] is the program name).
inline int run(const std::vector<std::string>& raw_args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Performance-controlled early exiting over recorded logit traces", "pcee"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", "pcee 1.0.0");

  // gen
  GeneratorConfig gen_cfg;
  std::string gen_out, gen_skills, gen_costs, gen_format;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic trace");
  gen->add_option("--out", gen_out, "Output trace")->required();
  gen->add_option("--format", gen_format, "ndjson|binary (default: by extension)");
  gen->add_option("--n", gen_cfg.n_samples, "Number of samples");
  gen->add_option("--layers", gen_cfg.n_layers, "Number of exits");
  gen->add_option("--classes", gen_cfg.n_classes, "Number of classes");
  gen->add_option("--seed", gen_cfg.seed, "PRNG seed");
  gen->add_option("--gamma", gen_cfg.gamma, "Miscalibration exponent (1 calibrated, >1 overconfident)");
  gen->add_option("--skills", gen_skills, "Comma-separated per-layer skills (strictly increasing)");
  gen->add_option("--steepness", gen_cfg.steepness, "Logistic steepness");
  gen->add_option("--costs", gen_costs, "Comma-separated cumulative per-layer costs");
  gen->add_option("--eps", gen_cfg.confidence_floor_eps, "Confidence clamp margin");

  // split
  std::string split_trace, split_val, split_test;
  SplitSpec split_spec;
  auto* spl = app.add_subcommand("split", "Split a trace into validation and test sets");
  spl->add_option("--trace", split_trace, "Input trace")->required();
  spl->add_option("--fraction", split_spec.validation_fraction, "Validation fraction");
  spl->add_option("--seed", split_spec.seed, "PRNG seed");
  spl->add_option("--out-val", split_val, "Validation output")->required();
  spl->add_option("--out-test", split_test, "Test output")->required();

  // calibrate
  std::string cal_trace, cal_layer = "all", cal_measure = "max_softmax", cal_temps, cal_out;
  int cal_bins = kDefaultBins;
  std::optional<std::size_t> cal_h;
  auto* cal = app.add_subcommand("calibrate", "Build per-layer reliability diagrams");
  cal->add_option("--trace", cal_trace, "Validation trace")->required();
  cal->add_option("--layer", cal_layer, "all or a layer index");
  cal->add_option("--bins", cal_bins, "Number of equal-width bins");
  cal->add_option("--measure", cal_measure, "max_softmax|normalized_negentropy");
  cal->add_option("--smooth-H", cal_h, "Smooth correctness over H nearest neighbors");
  cal->add_option("--temps", cal_temps, "Temperature table JSON");
  cal->add_option("--out", cal_out, "Output JSON (default: stdout)");

  // fit-temp
  std::string ft_trace, ft_out;
  auto* ft = app.add_subcommand("fit-temp", "Fit one temperature per layer on a validation trace");
  ft->add_option("--trace", ft_trace, "Validation trace")->required();
  ft->add_option("--out", ft_out, "Output JSON (default: stdout)");

  // ece
  std::string ece_diagrams;
  auto* ec = app.add_subcommand("ece", "Print per-layer expected calibration error");
  ec->add_option("--diagrams", ece_diagrams, "Reliability diagrams JSON")->required();

  // eval / sweep
  PolicyArgs ev_args, sw_args;
  auto* ev = app.add_subcommand("eval", "Evaluate an exit policy on a test trace");
  add_policy_flags(ev, ev_args);
  ev->add_option("--delta", ev_args.delta, "Threshold in [0, 1]");
  auto* sw = app.add_subcommand("sweep", "Evaluate a policy over a list of thresholds");
  add_policy_flags(sw, sw_args);
  sw->add_option("--deltas", sw_args.deltas, "Comma-separated strictly increasing thresholds")->required();
  sw->add_option("--pareto-out", sw_args.pareto_out, "Also write the Pareto front as CSV");

  // convert
  std::string cv_in, cv_out, cv_to;
  auto* cv = app.add_subcommand("convert", "Convert between NDJSON and binary traces");
  cv->add_option("--in", cv_in, "Input trace")->required();
  cv->add_option("--out", cv_out, "Output trace")->required();
  cv->add_option("--to", cv_to, "ndjson|binary (default: by extension of --out)");

  std::vector<std::string> args;
  try {
    args = detail::expand_config(raw_args);
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();  // program name
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) {
      if (!gen_skills.empty()) gen_cfg.layer_skills = detail::parse_list(gen_skills, "--skills");
      if (!gen_costs.empty()) gen_cfg.layer_costs = detail::parse_list(gen_costs, "--costs");
      write_trace(generate(gen_cfg), gen_out, detail::format_for(gen_out, gen_format));
    } else if (spl->parsed()) {
      const auto ds = read_trace(split_trace);
      const auto parts = split(ds, split_spec);
      write_trace(parts.validation, split_val);
      write_trace(parts.test, split_test);
      out << "validation " << parts.validation.size() << " test " << parts.test.size() << "\n";
    } else if (cal->parsed()) {
      const auto ds = read_trace(cal_trace);
      const auto measure = parse_measure(cal_measure);
      const auto temps = detail::load_temps(cal_temps);
      if (temps) temps->validate(ds.header.n_layers);
      std::optional<SmoothingSpec> smoothing;
      if (cal_h) smoothing = SmoothingSpec{*cal_h};
      std::vector<std::size_t> layers;
      if (cal_layer == "all") {
        for (std::size_t l = 0; l < ds.header.n_layers; ++l) layers.push_back(l);
      } else {
        std::size_t l = 0;
        auto [p, e] = std::from_chars(cal_layer.data(), cal_layer.data() + cal_layer.size(), l);
        if (e != std::errc{} || p != cal_layer.data() + cal_layer.size()) throw std::invalid_argument("--layer must be 'all' or an index");
        if (l >= ds.header.n_layers) throw std::invalid_argument("--layer out of range");
        layers.push_back(l);
      }
      std::vector<ReliabilityDiagram> diagrams;
      for (auto l : layers) {
        diagrams.push_back(build_diagram(ds, l, cal_bins, measure, temps ? temps->temperatures[l] : 1.0, smoothing));
      }
      detail::emit(detail::dump(diagrams_to_json(diagrams)), cal_out, out);
    } else if (ft->parsed()) {
      detail::emit(detail::dump(to_json(fit_temperatures(read_trace(ft_trace)))), ft_out, out);
    } else if (ec->parsed()) {
      for (const auto& d : diagrams_from_json(read_json_file(ece_diagrams))) {
        out << "layer " << d.layer << " ece " << format_shortest(ece(d)) << "\n";
      }
    } else if (ev->parsed() || sw->parsed()) {
      auto& a = ev->parsed() ? ev_args : sw_args;
      const auto test = a.trace_format.empty() ? read_trace(a.trace) : read_trace(a.trace, parse_trace_format(a.trace_format));
      const auto policy = load_policy(a, test.header);
      EvalOptions opts{a.threads, a.bins};
      if (ev->parsed()) {
        const auto report = evaluate(test, policy, opts);
        detail::emit(a.format == "json" ? detail::dump(to_json(report)) : to_csv(report), a.out, out);
      } else {
        const auto result = sweep(test, policy, detail::parse_list(a.deltas, "--deltas"), opts);
        detail::emit(a.format == "json" ? detail::dump(to_json(result)) : to_csv(result), a.out, out);
        if (!a.pareto_out.empty()) write_file_atomic(a.pareto_out, pareto_csv(pareto(pareto_points(result))));
      }
    } else if (cv->parsed()) {
      const auto ds = read_trace(cv_in);
      write_trace(ds, cv_out, detail::format_for(cv_out, cv_to));
    }
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::out_of_range& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace pcee::cli

#endif  // PCEE_CLI_HPP_
