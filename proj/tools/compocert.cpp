// Command-line front end: condition checks, oracles, experiments, gradient checks.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "compocert/conditions.hpp"
#include "compocert/interchange.hpp"
#include "compocert/oracle.hpp"
#include "compocert/scan.hpp"
#include "compocert/xor_experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace compocert;

namespace {

constexpr const char* kVersion = "0.1.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  std::string out;
  std::string format = "table";
  int parallel = 1;
  bool verbose = false;
  bool no_timestamp = false;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream in(text);
  for (std::string part; std::getline(in, part, ',');) {
    try {
      const auto dash = part.find('-');
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part));
      } else {
        const auto lo = std::stoull(part.substr(0, dash)), hi = std::stoull(part.substr(dash + 1));
        if (hi < lo) throw UsageError("empty seed range '" + part + "'");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
      }
    } catch (const std::logic_error&) {
      throw UsageError("bad seed list '" + text + "' (expected e.g. 0-4 or 0,2,7)");
    }
  }
  if (out.empty()) throw UsageError("empty seed list");
  return out;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

json envelope(const Globals& g, const std::string& command, json config, json result, bool pass) {
  config["seed"] = g.seed;
  json j{{"tool", "compocert"},
         {"version", kVersion},
         {"command", command},
         {"config", std::move(config)},
         {"result", std::move(result)},
         {"pass", pass}};
  if (!g.no_timestamp) j["timestamp"] = utc_now();
  return j;
}

// Writes the JSON report to --out; prints it when --format json.
void emit(const Globals& g, const json& report) {
  const std::string text = report.dump(2) + "\n";
  if (!g.out.empty()) write_file_atomic(g.out, text);
  if (g.format == "json") std::cout << text;
}

void log(const Globals& g, const std::string& msg) {
  if (g.verbose) std::cerr << "[compocert] " << msg << "\n";
}

// ---------------------------------------------------------------------------

struct CheckArgs {
  std::string hypothesis, reference, policy = "exact";
  double epsilon = 0.0;
  bool alternative = false;
};

int run_check(const Globals& g, const CheckArgs& a) {
  const GraphSetFile h = read_graph_set(a.hypothesis);
  const GraphSetFile z = read_graph_set(a.reference);
  const Dataset& d = h.dataset.train.empty() && h.dataset.test.empty() ? z.dataset : h.dataset;
  EqualityPolicy policy;
  if (a.policy == "threshold")
    policy = EqualityPolicy::threshold(a.epsilon > 0.0 ? std::optional<double>(a.epsilon) : std::nullopt);
  const ConditionReport r = check_theorem_conditions(h.graphs, z.graphs, d, policy);
  json result = to_json(r);
  bool pass = r.all_pass();
  if (a.alternative) {
    const auto alt = check_alternative_cg(h.graphs, d, policy);
    result["alternative_cg"] = to_json(alt);
    pass = pass && alt.pass;
  }
  json cfg{{"hypothesis", a.hypothesis}, {"reference", a.reference}, {"policy", a.policy},
           {"alternative", a.alternative}};
  if (a.epsilon > 0.0) cfg["epsilon"] = a.epsilon;
  emit(g, envelope(g, "check", cfg, result, pass));
  if (g.format != "json") std::cout << format_table(r);
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct OracleArgs {
  std::string lemma = "mappings";
  int max_size = 5;
  int trials = 1000;
  std::string scenario = "conditions-hold";
  std::string emit_dir;
};

int run_oracle(const Globals& g, const OracleArgs& a) {
  json cfg{{"lemma", a.lemma}};
  json result;
  bool pass = false;
  std::string summary;
  if (a.lemma == "mappings") {
    if (a.max_size < 1 || a.max_size > 7) throw UsageError("--max-size must be in 1..7");
    cfg["max_size"] = a.max_size;
    const auto r = verify_mapping_lemmas(a.max_size);
    result = to_json(r);
    pass = r.pass;
    summary = "mappings up to size " + std::to_string(a.max_size) + ": " + std::to_string(r.maps_enumerated) +
              " maps, " + std::to_string(r.onto_maps) + " onto, " + std::to_string(r.bijections) + " bijections";
  } else if (a.lemma == "theorem") {
    if (a.trials < 1) throw UsageError("--trials must be positive");
    TheoremOracleConfig tc;
    tc.trials = a.trials;
    tc.seed = g.seed;
    cfg["trials"] = a.trials;
    log(g, "generating " + std::to_string(a.trials) + " worlds per direction");
    const auto s = verify_theorem_both_directions(tc);
    result = to_json(s);
    pass = s.pass();
    summary = "sufficiency " + std::to_string(s.sufficiency_generalized) + "/" + std::to_string(s.sufficiency_worlds) +
              " generalized, " + std::to_string(s.traces_completed) + " traces complete; necessity " +
              std::to_string(s.necessity_failures) + " failures over " + std::to_string(s.necessity_premise) +
              " premise worlds";
  } else if (a.lemma == "world") {
    const Scenario sc = scenario_from_string(a.scenario);
    cfg["scenario"] = a.scenario;
    const DiscreteWorld w = generate_world(WorldParams{}, sc, g.seed);
    result = to_json(w);
    pass = true;
    if (!a.emit_dir.empty()) {
      fs::create_directories(a.emit_dir);
      write_graph_set(fs::path(a.emit_dir) / "hypothesis.json", {w.hypothesis, w.dataset});
      write_graph_set(fs::path(a.emit_dir) / "reference.json", {w.reference, w.dataset});
      cfg["emit_dir"] = a.emit_dir;
    }
    summary = "world " + a.scenario + " with " + std::to_string(w.dataset.train.size()) + " train and " +
              std::to_string(w.dataset.test.size()) + " test samples";
  } else {
    throw UsageError("unknown lemma '" + a.lemma + "' (mappings, theorem, world)");
  }
  emit(g, envelope(g, "oracle", cfg, result, pass));
  if (g.format != "json") std::cout << (pass ? "PASS " : "FAIL ") << summary << "\n";
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct XorArgs {
  std::string variant = "condition";
  std::string seeds = "0-4";
  int iterations = 1000;
  double alpha = 0.1, beta = 0.1;
  std::string export_dir;
  std::string log_path;
};

int run_xor(const Globals& g, const XorArgs& a) {
  std::vector<XorVariant> variants;
  if (a.variant == "all") {
    variants.assign(std::begin(kTableOrder), std::end(kTableOrder));
  } else {
    std::stringstream in(a.variant);
    for (std::string v; std::getline(in, v, ',');) {
      try {
        variants.push_back(xor_variant_from_string(v));
      } catch (const std::invalid_argument&) {
        throw UsageError("unknown variant '" + v + "'");
      }
    }
  }
  if (a.iterations < 1) throw UsageError("--iterations must be positive");
  const auto seeds = parse_seeds(a.seeds);
  std::vector<XorVariantResult> results;
  json per_variant = json::array();
  for (XorVariant v : variants) {
    XorConfig base;
    base.seeds = seeds;
    base.iterations = a.iterations;
    base.alpha = a.alpha;
    base.beta = a.beta;
    base.log_every = a.log_path.empty() ? 0 : 50;
    const XorConfig cfg = configure_variant(v, base);
    log(g, "training " + to_string(v) + " on " + std::to_string(seeds.size()) + " seeds");
    results.push_back(run_variant(cfg, g.parallel));
    per_variant.push_back(to_json(results.back()));
    if (!a.log_path.empty()) {
      std::string csv = "variant,seed,iteration,loss,train_acc,test_acc\n";
      for (const auto& r : results)
        for (const auto& s : r.seeds)
          for (const auto& line : s.log) csv += to_string(r.variant) + "," + std::to_string(s.seed) + "," + line + "\n";
      write_file_atomic(a.log_path, csv);
    }
  }
  if (!a.export_dir.empty()) {
    XorConfig base;
    base.iterations = a.iterations;
    base.alpha = a.alpha;
    base.beta = a.beta;
    const XorConfig cfg = configure_variant(variants.front(), base);
    auto trained = train_xor(cfg, seeds.front());
    auto sets = export_graph_sets(trained.net, dataset_for(variants.front()));
    fs::create_directories(a.export_dir);
    write_graph_set(fs::path(a.export_dir) / "hypothesis.json", {sets.hypothesis, sets.dataset});
    write_graph_set(fs::path(a.export_dir) / "reference.json", {sets.reference, sets.dataset});
  }
  bool ok = true;
  for (const auto& r : results)
    for (const auto& s : r.seeds) ok = ok && !s.diverged && s.error.empty();
  json cfg{{"variant", a.variant}, {"seeds", seeds},       {"iterations", a.iterations},
           {"alpha", a.alpha},     {"beta", a.beta},       {"parallel", g.parallel}};
  json result{{"variants", per_variant}, {"table", emit_table2(results, TableFormat::Json)}};
  emit(g, envelope(g, "xor", cfg, result, ok));
  if (g.format == "csv")
    std::cout << emit_table2(results, TableFormat::Csv);
  else if (g.format != "json")
    std::cout << emit_table2(results, TableFormat::Markdown);
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct ScanArgs {
  std::size_t train_size = SplitSizes{}.train, test_size = SplitSizes{}.test;
  int m = ScanConfig{}.m;
  std::string seeds = "0-4";
  int iterations = ScanConfig{}.iterations;
  double alpha = ScanConfig{}.alpha, beta = ScanConfig{}.beta;
  std::string report, dump;
};

int run_scan_cmd(const Globals& g, const ScanArgs& a) {
  ScanConfig cfg;
  cfg.sizes = {a.train_size, a.test_size};
  cfg.m = a.m;
  cfg.seeds = parse_seeds(a.seeds);
  cfg.iterations = a.iterations;
  cfg.alpha = a.alpha;
  cfg.beta = a.beta;
  if (a.m < 1) throw UsageError("--m must be positive");
  if (!a.dump.empty()) {
    try {
      write_file_atomic(a.dump, dump_split(generate_minisplit(MiniScanGrammar{cfg.m}, cfg.sizes, cfg.seeds.front())));
    } catch (const GrammarExhausted& e) {
      throw UsageError(e.what());
    }
  }
  log(g, "training " + std::to_string(cfg.seeds.size()) + " seeds");
  ScanRunResult r;
  try {
    r = run_scan(cfg, g.parallel);
  } catch (const GrammarExhausted& e) {
    throw UsageError(e.what());
  }
  const json result = to_json(r);
  if (!a.report.empty()) write_file_atomic(a.report, result.dump(2) + "\n");
  json jc{{"train_size", a.train_size}, {"test_size", a.test_size}, {"m", a.m},          {"seeds", cfg.seeds},
          {"iterations", a.iterations}, {"alpha", a.alpha},         {"beta", a.beta},    {"batch", cfg.batch},
          {"lr", cfg.lr},               {"lr_decay", cfg.lr_decay}, {"parallel", g.parallel}};
  const bool pass = r.verdict == ScanVerdict::Pass;
  emit(g, envelope(g, "scan", jc, result, pass));
  if (g.format != "json") {
    std::cout << "| seed | train | test | syntax dist / tol | attention dev | decode | verdict |\n"
                 "|---|---|---|---|---|---|---|\n";
    for (const auto& s : r.seeds) {
      std::ostringstream row;
      row << "| " << s.seed << " | " << s.train_acc << " | " << (s.test_acc ? std::to_string(*s.test_acc) : "n/a");
      if (s.probe)
        row << " | " << s.probe->max_movement_distance << " / " << s.probe->tolerance << " | "
            << s.probe->max_attention_deviation << " | " << (s.probe->semantics_decode ? "ok" : "wrong");
      else
        row << " | - | - | -";
      row << " | " << (s.full_pass(cfg.test_accuracy_threshold) ? "PASS" : s.probes_pass() ? "PARTIAL" : "FAIL")
          << " |\n";
      std::cout << row.str();
    }
    std::cout << "overall: " << to_string(r.verdict) << "\n";
  }
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct GradArgs {
  int nets = 10;
  double tolerance = 1e-4, noise_tolerance = 1e-3;
};

int run_gradcheck(const Globals& g, const GradArgs& a) {
  if (a.nets < 1) throw UsageError("--nets must be positive");
  const auto clean = gradcheck_xor_nets(a.nets, g.seed, false);
  const auto noisy = gradcheck_xor_nets(a.nets, g.seed, true);
  const bool pass = clean.max_rel_error <= a.tolerance && noisy.max_rel_error <= a.noise_tolerance;
  json cfg{{"nets", a.nets}, {"tolerance", a.tolerance}, {"noise_tolerance", a.noise_tolerance}};
  emit(g, envelope(g, "gradcheck", cfg, {{"noise_free", to_json(clean)}, {"recorded_noise", to_json(noisy)}}, pass));
  if (g.format != "json")
    std::cout << (clean.max_rel_error <= a.tolerance ? "PASS" : "FAIL") << " noise-free max rel error "
              << clean.max_rel_error << " (tol " << a.tolerance << ")\n"
              << (noisy.max_rel_error <= a.noise_tolerance ? "PASS" : "FAIL") << " recorded-noise max rel error "
              << noisy.max_rel_error << " (tol " << a.noise_tolerance << ")\n";
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Checks compositional generalization conditions on computational graph sets"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Globals g;
  if (const char* env = std::getenv("COMPOCERT_SEED")) {
    try {
      g.seed = std::stoull(env);
    } catch (const std::logic_error&) {
      std::cerr << "COMPOCERT_SEED must be a non-negative integer\n";
      return 2;
    }
  }
  app.option_defaults()->always_capture_default();
  app.add_option("--seed", g.seed, "Root seed (default from COMPOCERT_SEED, else 0)");
  app.add_option("--out", g.out, "Write the JSON report here");
  app.add_option("--format", g.format, "Standard output format")->check(CLI::IsMember({"table", "md", "csv", "json"}));
  app.add_option("--parallel", g.parallel, "Worker threads for independent seeds")->check(CLI::Range(1, 256));
  app.add_flag("--verbose", g.verbose, "Progress messages on standard error");
  app.add_flag("--no-timestamp", g.no_timestamp, "Omit the timestamp so reports are byte-identical across runs");

  CheckArgs ca;
  auto* check = app.add_subcommand("check", "Check the theorem conditions for a hypothesis against a reference");
  check->add_option("--hypothesis", ca.hypothesis, "Hypothesis graph-set file")->required()->check(CLI::ExistingFile);
  check->add_option("--reference", ca.reference, "Reference graph-set file")->required()->check(CLI::ExistingFile);
  check->add_option("--policy", ca.policy, "Value equality")->check(CLI::IsMember({"exact", "threshold"}));
  check->add_option("--epsilon", ca.epsilon, "Fixed threshold radius (default: 10% of the per-pool median)");
  check->add_flag("--alternative", ca.alternative, "Also check the hypothesis-only alternative condition");

  OracleArgs oa;
  auto* oracle = app.add_subcommand("oracle", "Exhaustive and randomized oracles");
  oracle->add_option("--lemma", oa.lemma, "mappings | theorem | world");
  oracle->add_option("--max-size", oa.max_size, "Largest domain and codomain for mappings");
  oracle->add_option("--trials", oa.trials, "Worlds per direction for theorem");
  oracle->add_option("--scenario", oa.scenario, "World scenario for world");
  oracle->add_option("--emit-dir", oa.emit_dir, "Write hypothesis.json and reference.json for world");

  XorArgs xa;
  auto* xr = app.add_subcommand("xor", "Train the XOR variants and print the accuracy table");
  xr->add_option("--variant", xa.variant, "baseline, condition, no-reg, no-structure, modified-data, a comma list, or all");
  xr->add_option("--seeds", xa.seeds, "Seed list such as 0-4 or 0,3");
  xr->add_option("--iterations", xa.iterations, "Training iterations");
  xr->add_option("--alpha", xa.alpha, "Noise variance")->check(CLI::NonNegativeNumber);
  xr->add_option("--beta", xa.beta, "Activity penalty weight")->check(CLI::NonNegativeNumber);
  xr->add_option("--export-dir", xa.export_dir, "Write graph sets of the first variant and seed");
  xr->add_option("--log", xa.log_path, "Training log CSV");

  ScanArgs sa;
  auto* sc = app.add_subcommand("scan", "Train the attention model on the mini jump split and probe it");
  sc->add_option("--train-size", sa.train_size, "Training commands (0 means all eligible)");
  sc->add_option("--test-size", sa.test_size, "Test commands (0 means all eligible)");
  sc->add_option("--m", sa.m, "Output positions");
  sc->add_option("--seeds", sa.seeds, "Seed list such as 0-4 or 0,3");
  sc->add_option("--iterations", sa.iterations, "Training iterations");
  sc->add_option("--alpha", sa.alpha, "Noise variance")->check(CLI::NonNegativeNumber);
  sc->add_option("--beta", sa.beta, "Activity penalty weight")->check(CLI::NonNegativeNumber);
  sc->add_option("--report", sa.report, "Probe report JSON");
  sc->add_option("--dump", sa.dump, "Dataset of the first seed as command<TAB>actions lines");

  GradArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the two-stage network gradients");
  gc->add_option("--nets", ga.nets, "Random networks per mode");
  gc->add_option("--tolerance", ga.tolerance, "Noise-free relative error bound");
  gc->add_option("--noise-tolerance", ga.noise_tolerance, "Recorded-noise relative error bound");

  for (auto* sub : {check, oracle, xr, sc, gc}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*check) return run_check(g, ca);
    if (*oracle) return run_oracle(g, oa);
    if (*xr) return run_xor(g, xa);
    if (*sc) return run_scan_cmd(g, sa);
    if (*gc) return run_gradcheck(g, ga);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const InterchangeError& e) {
    std::cerr << "invalid graph-set file: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
