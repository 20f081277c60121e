#include <gtest/gtest.h>

#include "bem/diffcore.hpp"
#include "oracles.hpp"

using namespace bem;

namespace {

DiffNet identity_net() {
  DiffNet net(2, 2, 2);
  net.w1() = Eigen::Matrix2d::Identity();
  net.w2() = Eigen::Matrix2d::Identity();
  return net;
}

}  // namespace

TEST(NetForward, ZeroNetworkGivesZero) {
  DiffNet net(3, 5, 4);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 10; ++i) {
    const Vector y = net_forward(net, oracle::random_vector(3, rng));
    EXPECT_TRUE(y.isZero(0.0));
    EXPECT_EQ(y.size(), 4);
  }
}

TEST(NetForward, ReluKillsNegativeCoordinate) {
  const Vector y = net_forward(identity_net(), Vector((Vector(2) << 1.0, -1.0).finished()));
  EXPECT_EQ(y[0], 1.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(NetForward, SeededNetMatchesStraightLineEvaluation) {
  Rng rng(7);
  const DiffNet net = DiffNet::glorot(3, 4, 2, rng);
  const Vector x = (Vector(3) << 0.1, 0.2, 0.3).finished();
  const Vector got = net_forward(net, x);
  const Vector want = oracle::mlp_forward(net, x);
  ASSERT_EQ(got.size(), 2);
  for (Index k = 0; k < 2; ++k) EXPECT_NEAR(got[k], want[k], 1e-15);
}

TEST(NetForward, RejectsWrongInputLength) {
  DiffNet net(3, 2, 1);
  EXPECT_THROW(net_forward(net, Vector::Zero(4)), ShapeError);
}

TEST(NetForward, IsPure) {
  std::mt19937_64 rng(3);
  const DiffNet net = oracle::random_net(5, 7, 3, rng);
  const Vector x = oracle::random_vector(5, rng);
  const Vector a = net_forward(net, x);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(net_forward(net, x), a);
}

TEST(NetForward, RowwiseBatchIsBitCompatible) {
  std::mt19937_64 rng(4);
  const DiffNet net = oracle::random_net(4, 6, 3, rng);
  RowMatrix x(9, 4);
  for (Index r = 0; r < 9; ++r) x.row(r) = oracle::random_vector(4, rng).transpose();
  const RowMatrix y = net_forward_rows(net, x);
  for (Index r = 0; r < 9; ++r) EXPECT_EQ(Vector(y.row(r).transpose()), net_forward(net, x.row(r).transpose()));
}

TEST(Glorot, WithinLimitsAndZeroBiases) {
  Rng rng(11);
  const DiffNet net = DiffNet::glorot(10, 30, 6, rng);
  const double l1 = std::sqrt(6.0 / 40.0), l2 = std::sqrt(6.0 / 36.0);
  EXPECT_LE(net.w1().cwiseAbs().maxCoeff(), l1);
  EXPECT_LE(net.w2().cwiseAbs().maxCoeff(), l2);
  EXPECT_TRUE(net.b1().isZero(0.0));
  EXPECT_TRUE(net.b2().isZero(0.0));
  // Roughly uniform: variance of U(-l, l) is l^2 / 3.
  const double var1 = net.w1().array().square().mean();
  EXPECT_NEAR(var1, l1 * l1 / 3.0, 0.3 * l1 * l1 / 3.0);
  Rng again(11);
  EXPECT_EQ(DiffNet::glorot(10, 30, 6, again), net);
}

TEST(NetBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(5);
  const DiffNet net = oracle::random_net(4, 6, 3, rng);
  const auto g = net_backward(net, oracle::random_vector(4, rng), Vector::Zero(3));
  EXPECT_EQ(g.params, net.zeros_like());
  EXPECT_TRUE(g.input.isZero(0.0));
}

TEST(NetBackward, IdentityNetMasksInputGradient) {
  const Vector x = (Vector(2) << 1.0, -1.0).finished();
  const auto g = net_backward(identity_net(), x, Vector::Ones(2));
  EXPECT_EQ(g.input[0], 1.0);
  EXPECT_EQ(g.input[1], 0.0);
}

TEST(NetBackward, ReluDerivativeAtZeroIsZero) {
  DiffNet net(1, 1, 1);
  net.w1()(0, 0) = 1.0;
  net.w2()(0, 0) = 1.0;
  const auto g = net_backward(net, Vector::Zero(1), Vector::Ones(1));
  EXPECT_EQ(g.input[0], 0.0);
  EXPECT_EQ(g.params.w1()(0, 0), 0.0);
}

TEST(NetBackward, MatchesFiniteDifferencesOn100RandomTriples) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 6);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index in = size(rng), hid = size(rng) + 2, out = size(rng);
    DiffNet net = oracle::random_net(in, hid, out, rng);
    Vector x = oracle::random_vector(in, rng);
    const Vector up = oracle::random_vector(out, rng);
    const auto g = net_backward(net, x, up);
    auto objective = [&] { return up.dot(oracle::mlp_forward(net, x)); };
    worst = std::max(worst, oracle::fd_check_net(net, g.params, objective));
    for (Index k = 0; k < in; ++k) {
      const double keep = x[k];
      x[k] = keep + 1e-5;
      const double a = objective();
      x[k] = keep - 1e-5;
      const double b = objective();
      x[k] = keep;
      worst = std::max(worst, oracle::relative_error(g.input[k], (a - b) / 2e-5));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(NetBackward, ScaleAccumulates) {
  std::mt19937_64 rng(9);
  const DiffNet net = oracle::random_net(3, 4, 2, rng);
  const Vector x = oracle::random_vector(3, rng), up = oracle::random_vector(2, rng);
  const auto once = net_backward(net, x, up);
  DiffNet acc = net.zeros_like();
  const auto trace = forward_trace(net, x);
  accumulate_backward(net, trace, x, up, acc, 0.25);
  accumulate_backward(net, trace, x, up, acc, 0.75);
  EXPECT_TRUE(acc.w1().isApprox(once.params.w1(), 1e-14));
  EXPECT_TRUE(acc.b2().isApprox(once.params.b2(), 1e-14));
}

TEST(Adam, ZeroGradientFreshStateLeavesParameters) {
  std::mt19937_64 rng(1);
  DiffNet net = oracle::random_net(3, 4, 2, rng);
  const DiffNet before = net;
  AdamState<double> state(net, AdamOptions{});
  adam_step(net, net.zeros_like(), state);
  EXPECT_EQ(net, before);
  EXPECT_EQ(state.step_count, 1);
}

TEST(Adam, ZeroGradientWithZeroMomentsAtAnyStepCount) {
  std::mt19937_64 rng(2);
  DiffNet net = oracle::random_net(2, 3, 2, rng);
  const DiffNet before = net;
  AdamState<double> state(net, AdamOptions{});
  state.step_count = 57;
  for (int i = 0; i < 10; ++i) adam_step(net, net.zeros_like(), state);
  EXPECT_EQ(net, before);
}

TEST(Adam, FirstStepHandComputed) {
  Vector p = Vector::Zero(1), g = Vector::Ones(1), m = Vector::Zero(1), v = Vector::Zero(1);
  adam_update<double>(p, g, m, v, 1, AdamOptions{});
  // m_hat = 1, v_hat = 1 -> step = lr * 1 / (1 + 1e-8)
  EXPECT_NEAR(p[0], -0.001 / (1.0 + 1e-8), 1e-18);
  EXPECT_NEAR(m[0], 0.1, 1e-16);
  EXPECT_NEAR(v[0], 0.001, 1e-16);
}

TEST(Adam, TwoIdenticalStepsDoNotGrow) {
  Vector p = Vector::Zero(1), g = Vector::Constant(1, 0.37), m = Vector::Zero(1), v = Vector::Zero(1);
  adam_update<double>(p, g, m, v, 1, AdamOptions{});
  const double d1 = std::abs(p[0]);
  const double p1 = p[0];
  adam_update<double>(p, g, m, v, 2, AdamOptions{});
  const double d2 = std::abs(p[0] - p1);
  EXPECT_LE(d2, d1 + 1e-18);
  // Hand evaluation for t = 2: m = 0.19 g, v = 0.001999 g^2.
  const double m_hat = 0.19 * 0.37 / (1 - 0.81), v_hat = 0.001999 * 0.37 * 0.37 / (1 - 0.998001);
  EXPECT_NEAR(d2, 0.001 * m_hat / (std::sqrt(v_hat) + 1e-8), 1e-15);
}

TEST(Adam, UpdatesEveryTensorOfANet) {
  std::mt19937_64 rng(6);
  DiffNet net = oracle::random_net(2, 3, 2, rng);
  DiffNet grads = oracle::random_net(2, 3, 2, rng);
  const DiffNet before = net;
  AdamState<double> state(net, AdamOptions{0.01, 0.9, 0.999, 1e-8});
  adam_step(net, grads, state, "f");
  // First step moves each entry by lr * sign(g) up to epsilon.
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < 2; ++c)
      EXPECT_NEAR(net.w1()(r, c) - before.w1()(r, c), -0.01 * (grads.w1()(r, c) > 0 ? 1 : -1), 1e-8);
  EXPECT_NEAR(net.b2()[1] - before.b2()[1], -0.01 * (grads.b2()[1] > 0 ? 1 : -1), 1e-8);
}

TEST(Adam, NonFiniteGradientIsRejectedBeforeAnyUpdate) {
  std::mt19937_64 rng(8);
  DiffNet net = oracle::random_net(2, 3, 2, rng);
  const DiffNet before = net;
  DiffNet grads = oracle::random_net(2, 3, 2, rng);
  grads.b2()[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState<double> state(net, AdamOptions{});
  try {
    adam_step(net, grads, state, "h");
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("h.b2"), std::string::npos);
  }
  EXPECT_EQ(net, before);
  EXPECT_EQ(state.step_count, 0);
}

TEST(Mlp, FloatInstantiationWorks) {
  Mlp<float> net(2, 3, 1);
  net.w1().setConstant(1.0f);
  net.w2().setConstant(1.0f);
  const Eigen::VectorXf y = net_forward(net, Eigen::VectorXf::Ones(2));
  EXPECT_FLOAT_EQ(y[0], 6.0f);
}
