#include <array>
#include <set>

#include <gtest/gtest.h>

#include "compocert/conditions.hpp"
#include "compocert/xor_experiment.hpp"

using namespace compocert;

namespace {

XorVariantResult synthetic(XorVariant v, std::vector<double> test) {
  XorVariantResult r;
  r.variant = v;
  for (std::size_t i = 0; i < test.size(); ++i) {
    XorSeedResult s;
    s.seed = i;
    s.train_acc = 1.0;
    s.test_acc = test[i];
    r.seeds.push_back(s);
  }
  std::tie(r.test_mean, r.test_std) = mean_std(test);
  r.train_mean = 1.0;
  return r;
}

}  // namespace

// Table 1 rows as printed.
TEST(XorDataset, MatchesTableOne) {
  const XorDataset d = xor_dataset();
  const int expected[8][5] = {{0, 0, 0, 0, 0}, {0, 1, 0, 1, 1}, {1, 0, 1, 1, 0}, {1, 1, 1, 0, 1},
                              {0, 0, 1, 0, 1}, {0, 1, 1, 1, 0}, {1, 0, 0, 1, 1}, {1, 1, 0, 0, 0}};
  ASSERT_EQ(d.train.size(), 6u);
  ASSERT_EQ(d.test.size(), 2u);
  std::vector<XorRow> all = d.train;
  all.insert(all.end(), d.test.begin(), d.test.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& r = all[i];
    EXPECT_EQ((std::array<int, 5>{r.x1, r.x2, r.x3, r.z, r.y}),
              (std::array<int, 5>{expected[i][0], expected[i][1], expected[i][2], expected[i][3], expected[i][4]}));
  }
  EXPECT_EQ(d.train[0].id, "a");
  EXPECT_EQ(d.train[5].id, "f");
}

TEST(XorDataset, IntegrityAndDroppedRows) {
  for (bool drop : {false, true}) {
    const XorDataset d = xor_dataset(drop);
    EXPECT_EQ(d.train.size(), drop ? 4u : 6u);
    for (const auto* split : {&d.train, &d.test})
      for (const auto& r : *split) {
        EXPECT_EQ(r.z, r.x1 ^ r.x2);
        EXPECT_EQ(r.y, r.z ^ r.x3);
      }
  }
}

TEST(XorVariants, ConfigurationFollowsAblationDescriptions) {
  const auto cond = configure_variant(XorVariant::Condition);
  EXPECT_EQ(cond.net.arch, XorArchitecture::Structured);
  EXPECT_EQ(cond.net.hidden, (std::vector<int>{32, 32}));
  EXPECT_DOUBLE_EQ(cond.alpha, 0.1);
  EXPECT_DOUBLE_EQ(cond.beta, 0.1);
  EXPECT_EQ(cond.iterations, 1000);
  EXPECT_EQ(cond.batch, 1000);
  EXPECT_DOUBLE_EQ(cond.lr, 0.001);

  const auto noreg = configure_variant(XorVariant::NoReg);
  EXPECT_EQ(noreg.net.arch, XorArchitecture::Structured);
  EXPECT_DOUBLE_EQ(noreg.alpha, 0.0);
  EXPECT_DOUBLE_EQ(noreg.beta, 0.0);

  const auto nostruct = configure_variant(XorVariant::NoStructure);
  EXPECT_EQ(nostruct.net.arch, XorArchitecture::Monolithic);
  EXPECT_TRUE(nostruct.net.regularize_monolithic);
  EXPECT_EQ(nostruct.net.monolithic_hidden, (std::vector<int>{128, 128}));

  const auto base = configure_variant(XorVariant::Baseline);
  EXPECT_EQ(base.net.arch, XorArchitecture::Monolithic);
  EXPECT_FALSE(base.net.regularize_monolithic);

  EXPECT_EQ(dataset_for(XorVariant::ModifiedData).train.size(), 4u);
  EXPECT_EQ(dataset_for(XorVariant::Condition).train.size(), 6u);
}

TEST(XorVariants, NamesRoundTrip) {
  for (XorVariant v : kTableOrder) EXPECT_EQ(xor_variant_from_string(to_string(v)), v);
  EXPECT_THROW((void)xor_variant_from_string("nope"), std::invalid_argument);
}

TEST(Statistics, PopulationStdAndPurity) {
  const auto [m, s] = mean_std({1.0, 1.0, 0.5, 0.5});
  EXPECT_DOUBLE_EQ(m, 0.75);
  EXPECT_DOUBLE_EQ(s, 0.25);
  EXPECT_DOUBLE_EQ(purity({0, 0, 1, 1}, {3, 3, 7, 7}), 1.0);
  EXPECT_DOUBLE_EQ(purity({0, 0, 0, 0}, {0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(purity({0, 1, 2, 3}, {0, 1, 0, 1}), 1.0);
}

TEST(Table2, LayoutAndPlaceholders) {
  const auto cond = synthetic(XorVariant::Condition, {1, 1, 1, 1, 1});
  const std::string md = emit_table2({cond}, TableFormat::Markdown);
  EXPECT_NE(md.find("| Condition model | 1.0 ± 0.0 |"), std::string::npos) << md;
  const auto baseline_pos = md.find("Baseline"), cond_pos = md.find("Condition model"),
             noreg_pos = md.find("No regularization"), nostruct_pos = md.find("No structure"),
             mod_pos = md.find("Modified training data");
  EXPECT_LT(baseline_pos, cond_pos);
  EXPECT_LT(cond_pos, noreg_pos);
  EXPECT_LT(noreg_pos, nostruct_pos);
  EXPECT_LT(nostruct_pos, mod_pos);
  EXPECT_NE(md.find("| Baseline | - |"), std::string::npos);
}

TEST(Table2, CsvMirrorsNumbers) {
  std::vector<XorVariantResult> all;
  for (XorVariant v : kTableOrder)
    all.push_back(synthetic(v, v == XorVariant::Condition ? std::vector<double>{1, 1, 1, 1, 1}
                                                          : std::vector<double>{0, 0, 0.5, 0, 0}));
  const std::string csv = emit_table2(all, TableFormat::Csv);
  EXPECT_NE(csv.find("condition,Condition model,1.0,0.0"), std::string::npos) << csv;
  EXPECT_NE(csv.find("baseline,Baseline,0.1,0.2"), std::string::npos) << csv;
  const auto j = nlohmann::json::parse(emit_table2(all, TableFormat::Json));
  ASSERT_EQ(j["rows"].size(), 5u);
  EXPECT_EQ(j["rows"][1]["variant"], "condition");
}

TEST(XorTraining, ConditionSeedGeneralizesAndPassesChecker) {
  const XorConfig cfg = configure_variant(XorVariant::Condition);
  auto t = train_xor(cfg, 0);
  EXPECT_DOUBLE_EQ(t.result.train_acc, 1.0);
  EXPECT_DOUBLE_EQ(t.result.test_acc, 1.0);
  ASSERT_TRUE(t.result.probe);
  EXPECT_EQ(t.result.probe->clusters, 2u);
  EXPECT_DOUBLE_EQ(t.result.probe->purity, 1.0);

  const auto sets = export_graph_sets(t.net, xor_dataset());
  const auto r = check_theorem_conditions(sets.hypothesis, sets.reference, sets.dataset, EqualityPolicy::threshold());
  EXPECT_TRUE(r.all_pass()) << format_table(r);
  EXPECT_TRUE(check_alternative_cg(sets.hypothesis, sets.dataset, EqualityPolicy::threshold()).pass);
}

TEST(XorTraining, DeterministicPerSeed) {
  XorConfig cfg = configure_variant(XorVariant::Condition);
  cfg.iterations = 50;
  auto a = train_xor_seed(cfg, 3, 50), b = train_xor_seed(cfg, 3, 50);
  EXPECT_EQ(a.net.hidden(Eigen::MatrixXi::Zero(1, 3)), b.net.hidden(Eigen::MatrixXi::Zero(1, 3)));
  EXPECT_EQ(a.result.final_loss, b.result.final_loss);
}

TEST(XorTraining, ParallelMergeIsDeterministic) {
  XorConfig cfg = configure_variant(XorVariant::NoReg);
  cfg.iterations = 100;
  cfg.seeds = {0, 1, 2};
  const auto serial = run_variant(cfg, 1), parallel = run_variant(cfg, 3);
  EXPECT_EQ(to_json(serial).dump(), to_json(parallel).dump());
}

TEST(XorTraining, BaselineExportFailsAlignment) {
  XorConfig cfg = configure_variant(XorVariant::Baseline);
  cfg.iterations = 20;
  auto t = train_xor_seed(cfg, 0, 20);
  const auto sets = export_graph_sets(t.net, xor_dataset());
  EXPECT_FALSE(check_theorem_conditions(sets.hypothesis, sets.reference, sets.dataset, EqualityPolicy::threshold()).aligned);
}

// f_h only sees (x1, x2), so rows sharing that pair share a hidden value.
TEST(HiddenProbe, TinyEpsilonSeparatesEveryDistinctInput) {
  XorConfig cfg = configure_variant(XorVariant::NoReg);
  auto t = train_xor_seed(cfg, 0, 5);
  EqualityPolicy p = EqualityPolicy::threshold(1e-12);
  const XorDataset xd = xor_dataset();
  std::set<std::pair<int, int>> inputs;
  for (const auto& r : xd.train) inputs.insert({r.x1, r.x2});
  const auto probe = probe_hidden_unambiguity(t.net, xd, p);
  EXPECT_EQ(probe.clusters, inputs.size());
}
