// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [criterion ...]   (all criteria when none are given)

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "compocert/conditions.hpp"
#include "compocert/graph.hpp"
#include "compocert/oracle.hpp"
#include "compocert/scan.hpp"
#include "compocert/xor_experiment.hpp"

using namespace compocert;
using Clock = std::chrono::steady_clock;

namespace {

enum class Status { Pass, Partial, Fail };

struct Outcome {
  Status status = Status::Fail;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 3) {
  std::ostringstream o;
  o.precision(prec);
  o << v;
  return o.str();
}

// Shared XOR runs, trained once.
struct XorRuns {
  std::map<XorVariant, XorVariantResult> results;
  double condition_seconds = 0.0;

  const XorVariantResult& get(XorVariant v) {
    auto it = results.find(v);
    if (it != results.end()) return it->second;
    const auto t0 = Clock::now();
    auto r = run_variant(configure_variant(v), 1);
    if (v == XorVariant::Condition) condition_seconds = seconds_since(t0);
    return results.emplace(v, std::move(r)).first->second;
  }
};

XorRuns xor_runs;

Outcome criterion1() {
  const auto& r = xor_runs.get(XorVariant::Condition);
  int perfect = 0;
  for (const auto& s : r.seeds) perfect += s.test_acc == 1.0;
  const bool ok = r.test_mean >= 0.9 && perfect >= 4 && xor_runs.condition_seconds < 60.0;
  return {ok ? Status::Pass : Status::Fail,
          "condition model test " + fmt(r.test_mean) + " ± " + fmt(r.test_std) + ", " + std::to_string(perfect) +
              "/5 seeds at 1.0, " + fmt(xor_runs.condition_seconds) + " s"};
}

Outcome criterion2() {
  const double cond = xor_runs.get(XorVariant::Condition).test_mean;
  bool ok = true;
  std::string detail;
  for (XorVariant v : {XorVariant::Baseline, XorVariant::NoReg, XorVariant::NoStructure, XorVariant::ModifiedData}) {
    const auto& r = xor_runs.get(v);
    ok = ok && r.test_mean <= 0.3 && r.test_mean < cond;
    detail += to_string(v) + " " + fmt(r.test_mean) + " ± " + fmt(r.test_std) + "; ";
  }
  return {ok ? Status::Pass : Status::Fail, detail + "condition " + fmt(cond)};
}

std::uint64_t onto_by_stirling(int n, int k) {
  std::vector<std::vector<std::uint64_t>> s(n + 1, std::vector<std::uint64_t>(k + 1, 0));
  s[0][0] = 1;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= k; ++j) s[i][j] = j * s[i - 1][j] + s[i - 1][j - 1];
  std::uint64_t f = 1;
  for (int j = 2; j <= k; ++j) f *= j;
  return f * s[n][k];
}

Outcome criterion3() {
  const auto t0 = Clock::now();
  const auto r = verify_mapping_lemmas(5);
  const double secs = seconds_since(t0);
  bool counts = true;
  std::uint64_t onto = 0;
  for (int n = 1; n <= 5; ++n)
    for (int k = 1; k <= 5; ++k) {
      counts = counts && r.onto_counts[n][k] == onto_by_stirling(n, k);
      onto += onto_by_stirling(n, k);
    }
  counts = counts && r.onto_maps == onto;
  const bool ok = r.pass && counts && secs < 10.0;
  return {ok ? Status::Pass : Status::Fail, std::to_string(r.onto_maps) + " onto maps (Stirling oracle " +
                                                std::to_string(onto) + "), " + std::to_string(r.bijections) +
                                                " bijections, " + fmt(secs) + " s" +
                                                (r.failure.empty() ? "" : ", " + r.failure)};
}

std::optional<TheoremOracleStats> theorem_stats;

const TheoremOracleStats& theorem() {
  if (!theorem_stats) {
    TheoremOracleConfig cfg;
    cfg.trials = 1000;
    theorem_stats = verify_theorem_both_directions(cfg);
  }
  return *theorem_stats;
}

Outcome criterion4() {
  const auto& s = theorem();
  const bool ok = s.sufficiency_worlds >= 1000 && s.sufficiency_failures == 0 &&
                  s.sufficiency_generalized == s.sufficiency_worlds && s.traces_completed == s.sufficiency_worlds;
  return {ok ? Status::Pass : Status::Fail,
          std::to_string(s.sufficiency_worlds) + " conditions-hold worlds, " + std::to_string(s.sufficiency_generalized) +
              " generalized, " + std::to_string(s.traces_completed) + " traces complete, " +
              std::to_string(s.sufficiency_failures) + " counterexamples"};
}

Outcome criterion5() {
  const auto& s = theorem();
  const bool ok = s.necessity_failures == 0 && s.necessity_premise > 0;
  return {ok ? Status::Pass : Status::Fail, std::to_string(s.necessity_premise) + " premise worlds of " +
                                                std::to_string(s.necessity_worlds) + ", " +
                                                std::to_string(s.necessity_failures) + " failures"};
}

Outcome criterion6() {
  const auto clean = gradcheck_xor_nets(10, 0, false);
  const auto noisy = gradcheck_xor_nets(10, 0, true);
  const bool ok = clean.max_rel_error <= 1e-4 && noisy.max_rel_error <= 1e-3;
  return {ok ? Status::Pass : Status::Fail,
          "noise-free " + fmt(clean.max_rel_error) + " (<= 1e-4), recorded noise " + fmt(noisy.max_rel_error) +
              " (<= 1e-3)"};
}

Outcome criterion7() {
  const auto& r = xor_runs.get(XorVariant::Condition);
  int good = 0;
  std::string per_seed;
  for (const auto& s : r.seeds) {
    const bool g = s.probe && s.probe->clusters == 2 && s.probe->purity == 1.0;
    good += g;
    per_seed += " " + (s.probe ? std::to_string(s.probe->clusters) + "/" + fmt(s.probe->purity) : std::string("-"));
  }
  return {good >= 4 ? Status::Pass : Status::Fail,
          std::to_string(good) + "/5 seeds with 2 clusters and purity 1 (clusters/purity:" + per_seed + ")"};
}

Outcome criterion8() {
  const ScanConfig cfg;
  const auto r = run_scan(cfg, 1);
  std::string per_seed;
  for (const auto& s : r.seeds) {
    per_seed += " [seed " + std::to_string(s.seed) + ": train " + fmt(s.train_acc, 4) + ", test " +
                (s.test_acc ? fmt(*s.test_acc, 4) : "n/a");
    if (s.probe)
      per_seed += ", syntax " + fmt(s.probe->max_movement_distance) + "/" + fmt(s.probe->tolerance) + ", attention " +
                  fmt(s.probe->max_attention_deviation) + ", decode " + (s.probe->semantics_decode ? "ok" : "wrong");
    per_seed += "]";
  }
  const Status st = r.verdict == ScanVerdict::Pass ? Status::Pass
                    : r.verdict == ScanVerdict::Partial ? Status::Partial
                                                        : Status::Fail;
  return {st, std::to_string(r.full_passes) + "/5 full, " + std::to_string(r.probe_passes) + "/5 probes (a)-(c);" +
                  per_seed};
}

Outcome criterion9() {
  const XorConfig cfg = configure_variant(XorVariant::ModifiedData);
  const XorDataset xd = dataset_for(XorVariant::ModifiedData);
  const auto policy = EqualityPolicy::threshold();
  int collapsed = 0, witnessed = 0;
  for (std::uint64_t seed : cfg.seeds) {
    auto t = train_xor(cfg, seed);
    const auto sets = export_graph_sets(t.net, xd);
    const SetCanonicalizer canon(sets.hypothesis, sets.dataset, policy);
    if (canon.token("a", 3) != canon.token("c", 3)) continue;
    ++collapsed;
    const auto r = check_theorem_conditions(sets.hypothesis, sets.reference, sets.dataset, policy);
    if (!r.unambiguous) continue;
    for (const auto& w : r.unambiguous->violations)
      if (w.pool.h_component == "f_h" && std::set<std::string>{w.sample_a, w.sample_c} == std::set<std::string>{"a", "c"}) {
        ++witnessed;
        break;
      }
  }
  const bool ok = collapsed > 0 && witnessed == collapsed;
  return {ok ? Status::Pass : Status::Fail, "h(a) and h(c) collapsed on " + std::to_string(collapsed) +
                                                "/5 seeds, (a, c) witness reported on " + std::to_string(witnessed)};
}

const char* label(Status s) {
  switch (s) {
    case Status::Pass: return "PASS";
    case Status::Partial: return "PARTIAL";
    case Status::Fail: return "FAIL";
  }
  return "?";
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"condition model accuracy", criterion1}},
      {2, {"baseline and ablations", criterion2}},
      {3, {"mapping lemma oracle", criterion3}},
      {4, {"sufficiency oracle", criterion4}},
      {5, {"necessity oracle", criterion5}},
      {6, {"gradient verification", criterion6}},
      {7, {"hidden unambiguity probe", criterion7}},
      {8, {"SCAN probes", criterion8}},
      {9, {"modified-data counterexample", criterion9}},
  };
  std::vector<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.push_back(std::atoi(argv[i]));
  if (chosen.empty())
    for (const auto& [k, v] : criteria) chosen.push_back(k);

  int failures = 0;
  for (int k : chosen) {
    auto it = criteria.find(k);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << k << "\n";
      return 2;
    }
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    failures += o.status == Status::Fail;
    std::cout << label(o.status) << " criterion " << k << " (" << it->second.first << "): " << o.detail << " ["
              << fmt(seconds_since(t0)) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
