#include <gtest/gtest.h>

#include "compocert/conditions.hpp"
#include "compocert/oracle.hpp"
#include "compocert/xor_experiment.hpp"

using namespace compocert;

namespace {

// Stirling numbers of the second kind by the triangle recurrence; k! S(n, k)
// counts the maps from an n-set onto a k-set.
std::uint64_t onto_by_stirling(int n, int k) {
  std::vector<std::vector<std::uint64_t>> s(n + 1, std::vector<std::uint64_t>(k + 1, 0));
  s[0][0] = 1;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= k; ++j) s[i][j] = j * s[i - 1][j] + s[i - 1][j - 1];
  std::uint64_t f = 1;
  for (int j = 2; j <= k; ++j) f *= j;
  return f * s[n][k];
}

std::uint64_t power(std::uint64_t b, int e) {
  std::uint64_t r = 1;
  while (e-- > 0) r *= b;
  return r;
}

}  // namespace

TEST(MappingLemmas, CountsMatchStirlingOracle) {
  const auto r = verify_mapping_lemmas(5);
  EXPECT_TRUE(r.pass) << r.failure;
  std::uint64_t maps = 0, onto = 0, bij = 0;
  for (int n = 1; n <= 5; ++n)
    for (int k = 1; k <= 5; ++k) {
      maps += power(k, n);
      onto += onto_by_stirling(n, k);
      EXPECT_EQ(r.onto_counts[n][k], onto_by_stirling(n, k)) << n << "->" << k;
      if (n == k) bij += onto_by_stirling(n, k);
    }
  EXPECT_EQ(r.maps_enumerated, maps);
  EXPECT_EQ(r.onto_maps, onto);
  EXPECT_EQ(r.bijections, bij);
}

TEST(MappingLemmas, SmallCases) {
  const auto r = verify_mapping_lemmas(4);
  EXPECT_EQ(r.onto_counts[3][3], 6u);   // all onto 3 -> 3 maps are bijections
  EXPECT_EQ(r.onto_counts[4][3], 36u);  // onto 4 -> 3, each with a collision
  EXPECT_EQ(r.onto_counts[1][1], 1u);
  EXPECT_EQ(r.onto_counts[3][4], 0u);
  const auto one = verify_mapping_lemmas(1);
  EXPECT_TRUE(one.pass);
  EXPECT_EQ(one.maps_enumerated, 1u);
  EXPECT_EQ(one.bijections, 1u);
}

TEST(GenerateWorld, ScenariosAreRealized) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto ok = generate_world(WorldParams{}, Scenario::ConditionsHold, seed);
    EXPECT_TRUE(check_theorem_conditions(ok.hypothesis, ok.reference, ok.dataset, EqualityPolicy::exact()).all_pass());

    const auto amb = generate_world(WorldParams{}, Scenario::BreakUnambiguous, seed);
    const auto ra = check_theorem_conditions(amb.hypothesis, amb.reference, amb.dataset, EqualityPolicy::exact());
    EXPECT_TRUE(ra.aligned);
    ASSERT_TRUE(ra.unambiguous);
    EXPECT_FALSE(ra.unambiguous->pass);

    const auto align = generate_world(WorldParams{}, Scenario::BreakAlignment, seed);
    EXPECT_FALSE(
        check_theorem_conditions(align.hypothesis, align.reference, align.dataset, EqualityPolicy::exact()).aligned);

    const auto unseen = generate_world(WorldParams{}, Scenario::UnseenInputs, seed);
    EXPECT_FALSE(check_seen_test_inputs(unseen.hypothesis, unseen.dataset, EqualityPolicy::exact()).pass);
  }
}

TEST(GenerateWorld, BreakMinimizedHasMoreHypothesisValues) {
  const auto w = generate_world(WorldParams{}, Scenario::BreakMinimized, 4);
  const auto r = check_theorem_conditions(w.hypothesis, w.reference, w.dataset, EqualityPolicy::exact());
  ASSERT_TRUE(r.unambiguous);
  EXPECT_TRUE(r.unambiguous->pass);
  ASSERT_TRUE(r.minimized);
  EXPECT_FALSE(r.minimized->pass);
  bool wider = false;
  for (const auto& c : r.minimized->counts) wider = wider || c.distinct_h > c.distinct_z;
  EXPECT_TRUE(wider);
}

TEST(GenerateWorld, DeterministicPerSeed) {
  const auto a = generate_world(WorldParams{}, Scenario::Random, 9);
  const auto b = generate_world(WorldParams{}, Scenario::Random, 9);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(InductionTrace, XorTestRowWitnesses) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  const GraphSet z = xor_reference(d);
  const auto t = run_induction_trace(z, z, d, EqualityPolicy::exact());
  EXPECT_EQ(t.outputs_checked, 2u);
  EXPECT_EQ(t.outputs_correct, 2u);
  EXPECT_EQ(t.predictions.at({"t1", 0}), "1");
  EXPECT_EQ(t.predictions.at({"t2", 0}), "0");
  bool hidden_line = false;
  for (const auto& line : t.lines) {
    if (line.test_sample != "t1" || line.z_node != 3) continue;
    hidden_line = true;
    EXPECT_EQ(line.z, "s:1");
    EXPECT_TRUE(line.witness == "b" || line.witness == "c" || line.witness == "f") << line.witness;
    EXPECT_TRUE(line.eq_inputs && line.eq_parents && line.eq_outputs);
  }
  EXPECT_TRUE(hidden_line);
  EXPECT_FALSE(revalidate_trace(t, z, z, d, EqualityPolicy::exact()));
}

TEST(InductionTrace, EmptyTestSplit) {
  XorDataset xd = xor_dataset();
  xd.test.clear();
  const Dataset d = to_dataset(xd);
  const GraphSet z = xor_reference(d);
  const auto t = run_induction_trace(z, z, d, EqualityPolicy::exact());
  EXPECT_TRUE(t.lines.empty());
  EXPECT_EQ(t.outputs_checked, 0u);
}

TEST(InductionTrace, PreconditionEnforced) {
  const auto w = generate_world(WorldParams{}, Scenario::BreakUnambiguous, 1);
  EXPECT_THROW((void)run_induction_trace(w.hypothesis, w.reference, w.dataset, EqualityPolicy::exact()),
               PreconditionViolated);
}

TEST(InductionTraceProperty, WorldsTraceCompletelyAndRevalidate) {
  for (std::uint64_t seed = 100; seed < 160; ++seed) {
    const auto w = generate_world(WorldParams{}, Scenario::ConditionsHold, seed);
    const auto t = run_induction_trace(w.hypothesis, w.reference, w.dataset, EqualityPolicy::exact());
    EXPECT_EQ(t.outputs_correct, t.outputs_checked) << seed;
    EXPECT_FALSE(revalidate_trace(t, w.hypothesis, w.reference, w.dataset, EqualityPolicy::exact())) << seed;
    for (const auto& line : t.lines) EXPECT_TRUE(w.dataset.is_train(line.witness)) << seed;
    // Traced predictions agree with direct evaluation of the reference.
    for (const auto& [key, pred] : t.predictions) {
      const Graph& g = w.reference.graphs.at(key.first);
      EXPECT_EQ(pred, std::get<Symbol>(w.reference.value(key.first, g.outputs[key.second])));
    }
  }
}

TEST(TheoremOracle, BothDirectionsOnSmallRun) {
  TheoremOracleConfig cfg;
  cfg.trials = 100;
  cfg.seed = 3;
  const auto s = verify_theorem_both_directions(cfg);
  EXPECT_TRUE(s.pass());
  EXPECT_EQ(s.sufficiency_failures, 0);
  EXPECT_EQ(s.necessity_failures, 0);
  EXPECT_EQ(s.sufficiency_generalized, s.sufficiency_worlds);
  EXPECT_GT(s.necessity_premise, 0);
  EXPECT_GT(s.break_minimized_mispredicting, 0);
}
