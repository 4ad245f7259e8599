#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include <gtest/gtest.h>

#include "compocert/conditions.hpp"
#include "compocert/equality.hpp"
#include "compocert/interchange.hpp"
#include "compocert/oracle.hpp"
#include "compocert/xor_experiment.hpp"

using namespace compocert;

namespace {

const Graph kTwoStage{{0, 1, 2}, {{3, "f_h", {0, 1}}, {4, "f_y", {3, 2}}}, {4}};

// Two-stage hypothesis with caller-chosen hidden values and predictions.
GraphSet two_stage(const XorDataset& xd, const std::function<Value(const XorRow&)>& hidden,
                   const std::function<int(const XorRow&)>& predict = [](const XorRow& r) { return r.y; }) {
  GraphSet h;
  h.components["f_h"] = Component{"f_h", 2, false, {}, {}};
  h.components["f_y"] = Component{"f_y", 2, false, {}, {}};
  auto add = [&](const XorRow& r) {
    h.graphs[r.id] = kTwoStage;
    h.values[r.id] = {{0, std::to_string(r.x1)},
                      {1, std::to_string(r.x2)},
                      {2, std::to_string(r.x3)},
                      {3, hidden(r)},
                      {4, std::to_string(predict(r))}};
  };
  for (const auto& r : xd.train) add(r);
  for (const auto& r : xd.test) add(r);
  return h;
}

GraphSet monolithic(const XorDataset& xd, const std::function<int(const XorRow&)>& predict) {
  GraphSet h;
  h.components["ffn"] = Component{"ffn", 3, false, {}, {}};
  auto add = [&](const XorRow& r) {
    h.graphs[r.id] = Graph{{0, 1, 2}, {{3, "ffn", {0, 1, 2}}}, {3}};
    h.values[r.id] = {{0, std::to_string(r.x1)}, {1, std::to_string(r.x2)}, {2, std::to_string(r.x3)},
                      {3, std::to_string(predict(r))}};
  };
  for (const auto& r : xd.train) add(r);
  for (const auto& r : xd.test) add(r);
  return h;
}

Value token_of_z(const XorRow& r) { return Symbol("h" + std::to_string(r.z)); }

NodePairTable table_of(std::vector<std::pair<std::string, std::string>> hz) {
  NodePairTable t;
  PoolKey key{"f", "g"};
  int i = 0;
  for (auto& [h, z] : hz) {
    PairRecord r;
    r.sample = "s" + std::to_string(i++);
    r.h = h;
    r.z = z;
    t.pools[key].push_back(r);
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Equality

TEST(Equality, SingleLinkageAndMedian) {
  const std::vector<Vector> pts{{0.0}, {0.05}, {1.0}, {1.04}, {3.0}};
  EXPECT_EQ(single_linkage(pts, 0.1), (std::vector<int>{0, 0, 1, 1, 2}));
  EXPECT_EQ(single_linkage(pts, 0.0), (std::vector<int>{0, 1, 2, 3, 4}));
  // Chaining: 0 - 0.05 - 0.1 links transitively.
  const std::vector<Vector> chain{{0.0}, {0.05}, {0.1}};
  EXPECT_EQ(single_linkage(chain, 0.06), (std::vector<int>{0, 0, 0}));
  const std::vector<Vector> two{{0.0, 0.0}, {3.0, 4.0}};
  EXPECT_DOUBLE_EQ(median_pairwise_distance(two), 5.0);
  EXPECT_DOUBLE_EQ(median_pairwise_distance(std::span<const Vector>(two.data(), 1)), 0.0);
}

TEST(Equality, PolicyModes) {
  EXPECT_TRUE(values_equal(Symbol("a"), Symbol("a"), EqualityPolicy::exact()));
  EXPECT_FALSE(values_equal(Symbol("a"), Symbol("b"), EqualityPolicy::threshold(10.0)));
  EXPECT_TRUE(values_equal(Vector{0.0}, Vector{0.05}, EqualityPolicy::threshold(0.1)));
  EXPECT_FALSE(values_equal(Vector{0.0}, Vector{0.05}, EqualityPolicy::exact()));
}

TEST(EqualityProperty, LargerEpsilonOnlyMerges) {
  CounterRng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vector> pts(8);
    for (auto& p : pts) p = {rng.uniform() * 4, rng.uniform() * 4};
    const double e1 = rng.uniform(), e2 = e1 + rng.uniform();
    const auto a = single_linkage(pts, e1), b = single_linkage(pts, e2);
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t j = 0; j < pts.size(); ++j)
        if (a[i] == a[j]) EXPECT_EQ(b[i], b[j]);
  }
}

TEST(EqualityProperty, ClusteringIndependentOfMergeOrderWithinInput) {
  CounterRng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vector> pts(7);
    for (auto& p : pts) p = {rng.uniform()};
    EXPECT_EQ(single_linkage(pts, 0.1), single_linkage(pts, 0.1));
  }
}

// ---------------------------------------------------------------------------
// Predictions and seen inputs

TEST(CorrectPredictions, ReferenceTrainRowsPass) {
  const Dataset d = to_dataset(xor_dataset());
  const GraphSet z = xor_reference(d);
  EXPECT_TRUE(check_correct_predictions(z, d, Split::Train).pass);
  EXPECT_TRUE(check_correct_predictions(z, d, Split::Test).pass);
}

TEST(CorrectPredictions, FlippedLabelIsWitnessed) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  const GraphSet h = two_stage(xd, token_of_z, [](const XorRow& r) { return r.id == "c" ? 1 - r.y : r.y; });
  const auto r = check_correct_predictions(h, d, Split::Train);
  EXPECT_FALSE(r.pass);
  EXPECT_EQ(r.wrong, std::vector<SampleId>{"c"});
}

TEST(CorrectPredictions, EmptySplitIsVacuous) {
  XorDataset xd = xor_dataset();
  xd.test.clear();
  const Dataset d = to_dataset(xd);
  EXPECT_TRUE(check_correct_predictions(xor_reference(d), d, Split::Test).pass);
}

TEST(CorrectPredictions, MissingValueThrows) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  GraphSet h = two_stage(xd, token_of_z);
  h.values["a"].erase(4);
  EXPECT_THROW((void)check_correct_predictions(h, d, Split::Train), MissingAssignment);
}

TEST(SeenInputs, ReferenceComponentTuplesAllSeen) {
  const Dataset d = to_dataset(xor_dataset());
  EXPECT_TRUE(check_seen_test_inputs(xor_reference(d), d, EqualityPolicy::exact()).pass);
}

TEST(SeenInputs, MonolithicFullTupleUnseen) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  const auto r = check_seen_test_inputs(monolithic(xd, [](const XorRow& r) { return r.y; }), d, EqualityPolicy::exact());
  EXPECT_FALSE(r.pass);
  ASSERT_TRUE(r.first_unseen);
  EXPECT_EQ(r.first_unseen->sample, "t1");
  EXPECT_EQ(r.first_unseen->tuple, (std::vector<std::string>{"s:1", "s:0", "s:0"}));
}

TEST(SeenInputs, EmptyTestSplitPasses) {
  XorDataset xd = xor_dataset();
  xd.test.clear();
  const Dataset d = to_dataset(xd);
  EXPECT_TRUE(check_seen_test_inputs(xor_reference(d), d, EqualityPolicy::exact()).pass);
}

// ---------------------------------------------------------------------------
// Unambiguous, minimized, one-to-one

TEST(Unambiguous, FullTrainingSetPasses) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  const auto r = check_theorem_conditions(two_stage(xd, token_of_z), xor_reference(d), d, EqualityPolicy::exact());
  ASSERT_TRUE(r.unambiguous);
  EXPECT_TRUE(r.unambiguous->pass);
}

TEST(Unambiguous, DroppedRowsWithHiddenEqualX2GiveWitnessAC) {
  const XorDataset xd = xor_dataset(true);
  const Dataset d = to_dataset(xd);
  const GraphSet h = two_stage(xd, [](const XorRow& r) { return Value(Vector{double(r.x2)}); },
                               [](const XorRow& r) { return r.y; });
  const auto r = check_theorem_conditions(h, xor_reference(d), d, EqualityPolicy::threshold());
  ASSERT_TRUE(r.unambiguous);
  ASSERT_FALSE(r.unambiguous->pass);
  bool found = false;
  for (const auto& w : r.unambiguous->violations)
    if (w.pool.h_component == "f_h" &&
        ((w.sample_a == "a" && w.sample_c == "c") || (w.sample_a == "c" && w.sample_c == "a")))
      found = true;
  EXPECT_TRUE(found);
}

TEST(Unambiguous, SingleSamplePasses) { EXPECT_TRUE(check_unambiguous(table_of({{"h0", "0"}})).pass); }

TEST(Minimized, CountsDecideTheVerdict) {
  EXPECT_TRUE(check_minimized(table_of({{"c0", "0"}, {"c1", "1"}, {"c1", "1"}, {"c0", "0"}})).pass);
  const auto four_to_three = check_minimized(table_of({{"A", "0"}, {"B", "1"}, {"C", "2"}, {"D", "2"}}));
  EXPECT_FALSE(four_to_three.pass);
  ASSERT_EQ(four_to_three.counts.size(), 1u);
  EXPECT_EQ(four_to_three.counts[0].distinct_h, 4u);
  EXPECT_EQ(four_to_three.counts[0].distinct_z, 3u);
  EXPECT_TRUE(check_minimized(table_of({{"A", "0"}})).pass);
}

TEST(Minimized, RequiresUnambiguousTable) {
  EXPECT_THROW((void)check_minimized(table_of({{"A", "0"}, {"A", "1"}})), PreconditionViolated);
}

TEST(OneToOne, DirectCheck) {
  EXPECT_TRUE(check_one_to_one(table_of({{"A", "0"}, {"B", "1"}, {"A", "0"}})).pass);
  const auto r = check_one_to_one(table_of({{"A", "0"}, {"B", "0"}}));
  EXPECT_FALSE(r.pass);
  ASSERT_TRUE(r.first_violation);
}

// ---------------------------------------------------------------------------
// Full condition report

TEST(TheoremConditions, StructuredHypothesisAllPass) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  const auto r = check_theorem_conditions(two_stage(xd, token_of_z), xor_reference(d), d, EqualityPolicy::exact());
  EXPECT_TRUE(r.aligned);
  EXPECT_TRUE(r.conditions_hold());
  EXPECT_TRUE(r.one_to_one);
  EXPECT_TRUE(r.all_pass());
}

TEST(TheoremConditions, MonolithicFailsAlignment) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  const auto r = check_theorem_conditions(monolithic(xd, [](const XorRow& r) { return r.y; }), xor_reference(d), d,
                                          EqualityPolicy::exact());
  EXPECT_FALSE(r.aligned);
  ASSERT_TRUE(r.alignment_failure);
  EXPECT_EQ(r.alignment_failure->sample, "a");
  EXPECT_FALSE(r.all_pass());
}

TEST(TheoremConditions, ReferenceAgainstItself) {
  const Dataset d = to_dataset(xor_dataset());
  const GraphSet z = xor_reference(d);
  EXPECT_TRUE(check_theorem_conditions(z, z, d, EqualityPolicy::exact()).all_pass());
}

TEST(TheoremConditions, ReportSerializes) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  const auto r = check_theorem_conditions(two_stage(xd, token_of_z), xor_reference(d), d, EqualityPolicy::exact());
  const auto j = to_json(r);
  EXPECT_TRUE(j.contains("one_to_one"));
  EXPECT_NE(format_table(r).find("ALL"), std::string::npos);
}

TEST(TheoremConditionsProperty, EveryGeneratedReferencePassesAgainstItself) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto w = generate_world(WorldParams{}, Scenario::ConditionsHold, seed);
    EXPECT_TRUE(check_theorem_conditions(w.reference, w.reference, w.dataset, EqualityPolicy::exact()).all_pass())
        << seed;
  }
}

// With unambiguous and onto pools, count equality holds exactly when the h -> z
// map is a bijection; the bijection is rebuilt here from the raw pair table.
TEST(TheoremConditionsProperty, MinimizedMatchesExplicitBijection) {
  int checked = 0;
  for (Scenario sc : {Scenario::ConditionsHold, Scenario::BreakMinimized, Scenario::Random}) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      DiscreteWorld w;
      try {
        w = generate_world(WorldParams{}, sc, seed);
      } catch (const GenerationFailed&) {
        continue;
      }
      const auto r = check_theorem_conditions(w.hypothesis, w.reference, w.dataset, EqualityPolicy::exact());
      if (!r.aligned || !r.unambiguous || !r.unambiguous->pass || !r.onto || !r.onto->pass) continue;
      const SetCanonicalizer hc(w.hypothesis, w.dataset, EqualityPolicy::exact());
      const SetCanonicalizer zc(w.reference, w.dataset, EqualityPolicy::exact());
      const auto table = build_pair_table(w.hypothesis, hc, w.reference, zc, *r.alignment, w.dataset.train);
      bool bijective = true;
      for (const auto& [key, recs] : table.pools) {
        std::map<std::string, std::string> fwd, back;
        for (const auto& rec : recs) {
          fwd[rec.h] = rec.z;
          auto [it, fresh] = back.emplace(rec.z, rec.h);
          if (!fresh && it->second != rec.h) bijective = false;
        }
      }
      EXPECT_EQ(r.minimized->pass, bijective) << to_string(sc) << " " << seed;
      EXPECT_EQ(r.one_to_one, r.one_to_one_direct->pass);
      EXPECT_TRUE(r.mapping_consistent());
      ++checked;
    }
  }
  EXPECT_GT(checked, 30);
}

// A violation at radius e stays a violation at a larger radius as long as the
// violating pair keeps its hypothesis cluster (it only gains members).
TEST(TheoremConditionsProperty, UnambiguousFailureSurvivesLargerEpsilon) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  const GraphSet z = xor_reference(d);
  CounterRng rng(21);
  int failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, double> hv;
    for (const auto& r : xd.train) hv[r.id] = rng.uniform();
    for (const auto& r : xd.test) hv[r.id] = rng.uniform();
    const GraphSet h = two_stage(xd, [&](const XorRow& r) { return Value(Vector{hv[r.id]}); });
    const double e1 = 0.2 * rng.uniform(), e2 = e1 + 0.3 * rng.uniform();
    const auto r1 = check_theorem_conditions(h, z, d, EqualityPolicy::threshold(e1));
    if (r1.unambiguous->pass) continue;
    ++failures;
    const auto r2 = check_theorem_conditions(h, z, d, EqualityPolicy::threshold(e2));
    EXPECT_FALSE(r2.unambiguous->pass) << trial;
  }
  EXPECT_GT(failures, 10);
}

// ---------------------------------------------------------------------------
// Effectively equal

TEST(EffectivelyEqual, PermutationOnlyForCommutative) {
  const Component comm{"c", 2, true, {}, {}}, plain{"p", 2, false, {}, {}};
  const std::vector<Value> a{Vector{1.0, 0.0}, Vector{0.0, 2.0}}, b{a[1], a[0]};
  const auto policy = EqualityPolicy::exact();
  EXPECT_TRUE(effectively_equal(a, b, comm, policy));
  EXPECT_FALSE(effectively_equal(a, b, plain, policy));
  EXPECT_TRUE(effectively_equal(a, a, plain, policy));
  EXPECT_TRUE(effectively_equal(a, a, comm, policy));
}

TEST(EffectivelyEqual, ArityMismatchThrows) {
  const Component comm{"c", 2, true, {}, {}};
  const std::vector<Value> a{Symbol("x")}, b{Symbol("x"), Symbol("y")};
  EXPECT_THROW((void)effectively_equal(a, b, comm, EqualityPolicy::exact()), ArityMismatch);
}

TEST(EffectivelyEqualProperty, EquivalenceRelation) {
  const Component comm{"c", 3, true, {}, {}}, plain{"p", 3, false, {}, {}};
  CounterRng rng(3);
  auto draw = [&] {
    std::vector<Value> v;
    for (int i = 0; i < 3; ++i) v.push_back(Symbol(std::string(1, static_cast<char>('a' + rng.below(2)))));
    return v;
  };
  for (int t = 0; t < 300; ++t) {
    const auto a = draw(), b = draw(), c = draw();
    for (const Component* comp : {&comm, &plain}) {
      const auto eq = [&](const auto& x, const auto& y) { return effectively_equal(x, y, *comp, EqualityPolicy::exact()); };
      EXPECT_TRUE(eq(a, a));
      EXPECT_EQ(eq(a, b), eq(b, a));
      if (eq(a, b) && eq(b, c)) EXPECT_TRUE(eq(a, c));
    }
  }
}

// ---------------------------------------------------------------------------
// Alternative condition

TEST(AlternativeCg, Examples) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  EXPECT_TRUE(check_alternative_cg(two_stage(xd, token_of_z), d, EqualityPolicy::exact()).pass);

  const auto baseline =
      check_alternative_cg(monolithic(xd, [](const XorRow& r) { return r.id[0] == 't' ? 1 - r.y : r.y; }), d,
                           EqualityPolicy::exact());
  EXPECT_FALSE(baseline.pass);
  EXPECT_FALSE(baseline.test_correct);
  EXPECT_FALSE(baseline.seen_inputs);

  const auto vacuous = check_alternative_cg(monolithic(xd, [](const XorRow& r) { return 1 - r.y; }), d,
                                            EqualityPolicy::exact());
  EXPECT_FALSE(vacuous.train_correct);
  EXPECT_TRUE(vacuous.pass);
}

// ---------------------------------------------------------------------------
// Interchange

TEST(Interchange, RoundTripPreservesReport) {
  const XorDataset xd = xor_dataset();
  const Dataset d = to_dataset(xd);
  const GraphSet h = two_stage(xd, [](const XorRow& r) { return Value(Vector{0.25 + r.z, -1.5 * r.z}); });
  const GraphSetFile f{h, d};
  const auto back = graph_set_from_json(to_json(f));
  EXPECT_EQ(to_json(back).dump(), to_json(f).dump());
  const GraphSet z = xor_reference(d);
  EXPECT_EQ(to_json(check_theorem_conditions(back.graphs, z, back.dataset, EqualityPolicy::threshold())).dump(),
            to_json(check_theorem_conditions(h, z, d, EqualityPolicy::threshold())).dump());
}

TEST(Interchange, RejectsCyclesAndBadCommutativity) {
  const Dataset d = to_dataset(xor_dataset());
  auto j = to_json(GraphSetFile{xor_reference(d), d});
  auto cyclic = j;
  cyclic["graphs"]["a"]["nodes"][0]["parents"] = {3, 1};
  EXPECT_THROW((void)graph_set_from_json(cyclic), InterchangeError);

  GraphSet lhs = xor_reference(d);
  lhs.values.clear();
  for (auto& [k, out] : lhs.components.at("xor").table) out = k[0];
  auto bad = to_json(GraphSetFile{lhs, d});
  EXPECT_THROW((void)graph_set_from_json(bad), InterchangeError);
}

TEST(Interchange, AtomicWriteReplacesFile) {
  const auto dir = std::filesystem::temp_directory_path() / "compocert_atomic_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "report.json";
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  std::ifstream in(path);
  std::string s;
  std::getline(in, s);
  EXPECT_EQ(s, "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 1u);
  std::filesystem::remove_all(dir);
}
