#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <gtest/gtest.h>

#include "compocert/nn.hpp"
#include "compocert/xor_experiment.hpp"

using namespace compocert;
using namespace compocert::nn;

namespace {

Eigen::MatrixXi rows_of(std::initializer_list<std::array<int, 3>> rows) {
  Eigen::MatrixXi x(static_cast<Eigen::Index>(rows.size()), 3);
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    for (int j = 0; j < 3; ++j) x(i, j) = r[j];
    ++i;
  }
  return x;
}

}  // namespace

TEST(Mlp, ZeroNoiseTrainEqualsEval) {
  CounterRng rng(1);
  Mlp net("f", {4, 8, 3}, rng, true);
  const Tensor x = uniform(5, 4, 1.0, rng);
  NoiseTape noise(CounterRng(2));
  const Tensor a = net.forward(x, Mode::Train, {0.0, 0.0}, noise);
  const Tensor b = net.forward(x, Mode::Eval, {0.0, 0.0}, noise);
  EXPECT_EQ(a, b);
}

TEST(Mlp, EvalIsDeterministicAndNoiseFree) {
  CounterRng rng(1);
  Mlp net("f", {4, 8, 3}, rng, true);
  const Tensor x = uniform(5, 4, 1.0, rng);
  NoiseTape noise(CounterRng(2));
  const Tensor a = net.forward(x, Mode::Eval, {1.0, 0.1}, noise);
  EXPECT_EQ(a, net.forward(x, Mode::Eval, {1.0, 0.1}, noise));
  EXPECT_EQ(net.penalty(), 0.0);
  EXPECT_NE(a, net.forward(x, Mode::Train, {1.0, 0.1}, noise));
}

TEST(Mlp, ShapeMismatchAndStaleBackward) {
  CounterRng rng(1);
  Mlp net("f", {4, 3}, rng);
  NoiseTape noise;
  EXPECT_THROW((void)net.forward(Tensor::Zero(2, 5), Mode::Eval, {}, noise), ShapeMismatch);
  Mlp fresh("g", {4, 3}, rng);
  EXPECT_THROW((void)fresh.backward(Tensor::Zero(2, 3)), StaleActivations);
}

TEST(Penalty, ActivityValue) {
  Tensor h(1, 2);
  h << 1.0, 2.0;
  EXPECT_DOUBLE_EQ(activity_penalty(h, 0.1), 0.5);
}

TEST(Penalty, GradientIsTwoBetaH) {
  // Single identity-like layer: output h = x W + b with W = I, b = 0.
  CounterRng rng(1);
  Mlp net("f", {2, 2}, rng, true);
  auto params = net.parameters();
  params[0]->value = Tensor::Identity(2, 2);
  params[1]->value.setZero();
  Tensor x(1, 2);
  x << 1.0, 2.0;
  NoiseTape noise;
  net.forward(x, Mode::Train, {0.0, 0.1}, noise);
  EXPECT_DOUBLE_EQ(net.penalty(), 0.5);
  net.backward(Tensor::Zero(1, 2));
  EXPECT_NEAR(params[1]->grad(0, 0), 0.2, 1e-12);
  EXPECT_NEAR(params[1]->grad(0, 1), 0.4, 1e-12);
}

TEST(Penalty, ZeroBetaChangesNoGradientBit) {
  CounterRng rng(4);
  Mlp a("f", {3, 6, 2}, rng, true);
  Mlp b = a;
  b.set_regularized(false);
  const Tensor x = uniform(4, 3, 1.0, rng);
  NoiseTape noise;
  const Tensor ya = a.forward(x, Mode::Train, {0.0, 0.0}, noise);
  const Tensor yb = b.forward(x, Mode::Train, {0.0, 0.0}, noise);
  EXPECT_EQ(ya, yb);
  const Tensor d = uniform(4, 2, 1.0, rng);
  a.backward(d);
  b.backward(d);
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->grad, pb[i]->grad);
}

TEST(Softmax, RowsArePositiveAndSumToOne) {
  CounterRng rng(7);
  const Tensor logits = uniform(50, 5, 30.0, rng);
  const Tensor p = softmax_rows(logits);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9);
    EXPECT_GT(p.row(i).minCoeff(), 0.0);
  }
}

TEST(Softmax, CrossEntropyGradient) {
  Tensor logits(1, 2);
  logits << 0.0, 0.0;
  const auto ce = softmax_cross_entropy(logits, {1});
  EXPECT_NEAR(ce.loss, std::log(2.0), 1e-12);
  EXPECT_NEAR(ce.grad(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(ce.grad(0, 1), -0.5, 1e-12);
}

TEST(XorNet, OutputIsTwoProbabilities) {
  XorNet net(XorNetConfig{}, 3);
  NoiseTape noise;
  const Tensor logits = net.forward(rows_of({{0, 1, 0}}), Mode::Eval, {}, noise);
  ASSERT_EQ(logits.cols(), 2);
  EXPECT_NEAR(softmax_rows(logits).sum(), 1.0, 1e-12);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Parameter p("p", Tensor::Constant(2, 2, 1.5));
  Adam opt;
  for (int i = 0; i < 10; ++i) opt.step({&p});
  EXPECT_EQ(p.value, Tensor::Constant(2, 2, 1.5));
}

TEST(Adam, QuadraticConverges) {
  Parameter p("p", Tensor::Zero(1, 1));
  Adam opt(AdamConfig{0.001});
  for (int i = 0; i < 10000; ++i) {
    p.grad(0, 0) = 2.0 * (p.value(0, 0) - 3.0);
    opt.step({&p});
  }
  EXPECT_NEAR(p.value(0, 0), 3.0, 1e-2);
}

TEST(Adam, FirstStepMatchesHandComputation) {
  // With bias correction the first step is lr * g / (|g| + eps).
  Parameter p("p", Tensor::Zero(1, 1));
  p.grad(0, 0) = 0.25;
  Adam opt(AdamConfig{0.01});
  opt.step({&p});
  EXPECT_NEAR(p.value(0, 0), -0.01 * 0.25 / (0.25 + 1e-7), 1e-12);
}

TEST(Adam, IdenticalInputsIdenticalUpdates) {
  CounterRng rng(5);
  Parameter a("a", uniform(3, 3, 1.0, rng));
  Parameter b = a;
  Adam oa, ob;
  for (int i = 0; i < 20; ++i) {
    a.grad = uniform(3, 3, 1.0, rng);
    b.grad = a.grad;
    oa.step({&a});
    ob.step({&b});
  }
  EXPECT_EQ(a.value, b.value);
}

TEST(Adam, ShapeMismatch) {
  Parameter p("p", Tensor::Zero(2, 2));
  p.grad = Tensor::Zero(1, 2);
  Adam opt;
  EXPECT_THROW(opt.step({&p}), ShapeMismatch);
}

TEST(AttentionCombine, Examples) {
  Eigen::MatrixXd v(2, 3);
  v << 1, 2, 3, 4, 5, 6;
  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(3);
  onehot(1) = 1.0;
  EXPECT_EQ(attention_combine(onehot, v), v.col(1));
  Eigen::VectorXd u1(1);
  u1 << 0.3;
  Eigen::MatrixXd v1(2, 1);
  v1 << 2, -1;
  EXPECT_TRUE(attention_combine(u1, v1).isApprox(0.3 * v1.col(0)));
  EXPECT_THROW((void)attention_combine(Eigen::VectorXd::Zero(2), v), ShapeMismatch);
}

TEST(AttentionCombineProperty, JointPermutationInvariance) {
  CounterRng rng(8);
  for (int t = 0; t < 100; ++t) {
    const int k = 1 + static_cast<int>(rng.below(6));
    Eigen::VectorXd u(k);
    Eigen::MatrixXd v(3, k);
    for (int i = 0; i < k; ++i) {
      u(i) = rng.uniform();
      for (int r = 0; r < 3; ++r) v(r, i) = rng.uniform() - 0.5;
    }
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::VectorXd up(k);
    Eigen::MatrixXd vp(3, k);
    for (int i = 0; i < k; ++i) {
      up(i) = u(perm[i]);
      vp.col(i) = v.col(perm[i]);
    }
    EXPECT_TRUE(attention_combine(u, v).isApprox(attention_combine(up, vp), 1e-12));
  }
}

TEST(GradCheck, RandomTwoStageNetsNoiseFree) {
  const auto g = gradcheck_xor_nets(10, 0, false);
  EXPECT_LE(g.max_rel_error, 1e-4);
  for (const auto& n : g.nets) EXPECT_GT(n.checked, 0u);
}

TEST(GradCheck, RandomTwoStageNetsRecordedNoise) {
  const auto g = gradcheck_xor_nets(10, 1, true);
  EXPECT_LE(g.max_rel_error, 1e-3);
}

TEST(GradCheck, DetectsWrongGradient) {
  Parameter p("p", Tensor::Constant(1, 1, 2.0));
  auto loss = [&] { return p.value(0, 0) * p.value(0, 0); };
  p.grad(0, 0) = 5.0;  // true derivative is 4
  const auto r = gradient_check({&p}, loss, [] { return std::uint64_t{0}; });
  EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(NoiseTape, ReplayRepeatsDraws) {
  NoiseTape tape(CounterRng(4));
  tape.record();
  const Tensor a = tape.draw(2, 3, 1.0);
  const Tensor b = tape.draw(1, 1, 0.5);
  tape.replay();
  EXPECT_EQ(tape.draw(2, 3, 1.0), a);
  EXPECT_EQ(tape.draw(1, 1, 0.5), b);
  EXPECT_EQ(tape.recorded(), 2u);
}

TEST(Checkpoint, RoundTrip) {
  XorNet a(XorNetConfig{}, 1), b(XorNetConfig{}, 2);
  const auto path = std::filesystem::temp_directory_path() / "compocert_ckpt.json";
  save_checkpoint(path, a.parameters());
  std::ifstream in(path);
  load_checkpoint(nlohmann::json::parse(in), b.parameters());
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
  std::filesystem::remove(path);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  XorNet a(XorNetConfig{}, 1);
  XorNetConfig small;
  small.m = 4;
  XorNet b(small, 1);
  EXPECT_THROW(load_checkpoint(checkpoint_json(a.parameters()), b.parameters()), ShapeMismatch);
}
