#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "support/oracles.hpp"
#include "uplvp/autograd.hpp"

using namespace uplvp;
using D = BasicTensor<double>;
using V = ag::Var<double>;

namespace {

/// Values drawn in [-2,2], as the op-level gradient checks require.
D uniform(Shape shape, std::uint64_t seed, double lo = -2, double hi = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  D t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

void expect_gradient(const std::function<V(V)>& build, Shape shape, double lo = -2, double hi = 2) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double err = oracle::check_op_gradient(uniform(shape, seed, lo, hi), build, 1e-3);
    ASSERT_LT(err, 1e-4) << "seed " << seed;
  }
}

}  // namespace

TEST(Autograd, SumGradientIsOnes) {
  ag::Tape<double> tape;
  const auto x = tape.parameter(uniform({2, 3}, 1));
  tape.backward(ag::sum(x));
  EXPECT_EQ(tape.grad(x), D(Shape{2, 3}, 1.0));
}

TEST(Autograd, SigmoidSlopeAtZero) {
  ag::Tape<double> tape;
  const auto x = tape.parameter(D::scalar(0.0));
  tape.backward(ag::sigmoid(x));
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 0.25);
}

TEST(Autograd, KernelTimesFeaturesMatchesFiniteDifferences) {
  const D features = uniform({4, 5}, 77);
  expect_gradient(
      [&](V k) { return ag::sum(ag::sigmoid(ag::matmul(k, k.tape->constant(features)))); }, {3, 4});
}

TEST(AutogradOps, MatMulBothSides) {
  const D other = uniform({3, 2}, 5);
  expect_gradient([&](V a) { return ag::sum(ag::matmul(a, a.tape->constant(other))); }, {4, 3});
  const D left = uniform({2, 4}, 6);
  expect_gradient([&](V b) { return ag::sum(ag::sigmoid(ag::matmul(b.tape->constant(left), b))); }, {4, 3});
}

TEST(AutogradOps, AddAndMulWithBroadcast) {
  const D m = uniform({3, 4}, 8);
  expect_gradient([&](V row) { return ag::sum(ag::mul(ag::add(row.tape->constant(m), row), row)); }, {1, 4});
  expect_gradient([&](V col) { return ag::sum(ag::mul(col.tape->constant(m), ag::sigmoid(col))); }, {3, 1});
  expect_gradient([&](V s) { return ag::sum(ag::mul(s.tape->constant(m), s)); }, {});
  expect_gradient([&](V a) { return ag::sum(ag::mul(a, a)); }, {3, 4});
}

TEST(AutogradOps, SoftmaxAlongEachAxis) {
  const D w = uniform({3, 4}, 9);
  expect_gradient([&](V a) { return ag::sum(ag::mul(ag::softmax(a, 1), a.tape->constant(w))); }, {3, 4});
  expect_gradient([&](V a) { return ag::sum(ag::mul(ag::softmax(a, 0), a.tape->constant(w))); }, {3, 4});
}

TEST(AutogradOps, NormalizeL2) {
  const D w = uniform({3, 4}, 1010);
  expect_gradient([&](V a) { return ag::sum(ag::mul(ag::normalize(a, 1, NormMode::kL2), a.tape->constant(w))); },
                  {3, 4});
  expect_gradient([&](V a) { return ag::sum(ag::mul(ag::normalize(a, 0, NormMode::kL2), a.tape->constant(w))); },
                  {3, 4});
}

TEST(AutogradOps, PoolingMeanSumRows) {
  expect_gradient([](V a) { return ag::sum(ag::power(ag::avg_pool_region(a, BBox{1, 0, 2, 1}), 2.0)); }, {2, 3, 3});
  expect_gradient([](V a) { return ag::mean(ag::mul(a, a)); }, {3, 4});
  expect_gradient([](V a) { return ag::sum(ag::sigmoid(ag::sum_rows(a))); }, {3, 4});
}

TEST(AutogradOps, LogPowerLogSigmoid) {
  expect_gradient([](V a) { return ag::sum(ag::log(a)); }, {2, 3}, 0.2, 2.0);
  expect_gradient([](V a) { return ag::sum(ag::power(a, -1.0)); }, {2, 3}, 0.5, 2.0);
  expect_gradient([](V a) { return ag::sum(ag::power(a, 3.0)); }, {2, 3});
  expect_gradient([](V a) { return ag::sum(ag::log_sigmoid(a)); }, {2, 3});
}

TEST(AutogradOps, ReshapeTransposeGather) {
  const D w = uniform({4, 3}, 11);
  expect_gradient([&](V a) { return ag::sum(ag::mul(ag::transpose(a), a.tape->constant(w))); }, {3, 4});
  expect_gradient([&](V a) { return ag::sum(ag::mul(ag::reshape(a, {4, 3}), a.tape->constant(w))); }, {3, 4});
  expect_gradient([](V a) { return ag::sum(ag::power(ag::gather_rows(a, {2, 0, 2}), 2.0)); }, {3, 4});
  expect_gradient([](V a) { return ag::sum(ag::sigmoid(ag::gather_elements(a, {{0, 1}, {2, 3}, {0, 1}}))); },
                  {3, 4});
}

TEST(AutogradOps, SharedSubexpressionAccumulates) {
  ag::Tape<double> tape;
  const auto x = tape.parameter(D::scalar(3.0));
  const auto y = ag::add(ag::mul(x, x), x);  // x^2 + x
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x).item(), 7.0);
}

TEST(Autograd, UnreachedParameterHasZeroGradient) {
  ag::Tape<double> tape;
  const auto x = tape.parameter(uniform({2}, 1));
  const auto unused = tape.parameter(uniform({3}, 2));
  tape.backward(ag::sum(x));
  EXPECT_EQ(tape.grad(unused), D(Shape{3}));
}

TEST(Autograd, NonScalarLossIsAContractError) {
  ag::Tape<double> tape;
  const auto x = tape.parameter(uniform({2}, 1));
  EXPECT_THROW(tape.backward(ag::sigmoid(x)), ContractError);
}

TEST(Autograd, OpaqueNodeRejectsBackward) {
  ag::Tape<double> tape;
  const auto x = tape.parameter(uniform({2, 3}, 1));
  const auto y = ag::sum(ag::normalize(x, 1, NormMode::kMinMax));
  EXPECT_THROW(tape.backward(y), UnsupportedOpError);
}

TEST(Autograd, BroadcastMismatchThrows) {
  ag::Tape<double> tape;
  const auto a = tape.parameter(D(Shape{3, 4}));
  const auto b = tape.parameter(D(Shape{2, 4}));
  EXPECT_THROW(ag::add(a, b), DimensionError);
  EXPECT_THROW(ag::matmul(a, b), DimensionError);
}

TEST(Autograd, ReplayIsBitIdentical) {
  ag::Tape<float> tape;
  const auto x = tape.parameter(uniform({3, 4}, 3).cast<float>());
  const auto w = tape.constant(uniform({4, 2}, 4).cast<float>());
  const auto y = ag::softmax(ag::sigmoid(ag::matmul(x, w)), 1);
  const Tensor before = y.value();
  tape.replay();
  EXPECT_EQ(y.value(), before);
  tape.set_leaf(x, uniform({3, 4}, 5).cast<float>());
  tape.replay();
  EXPECT_NE(y.value(), before);
  tape.set_leaf(x, uniform({3, 4}, 3).cast<float>());
  tape.replay();
  EXPECT_EQ(y.value(), before);
  EXPECT_THROW(tape.set_leaf(x, Tensor(Shape{2, 2})), DimensionError);
  EXPECT_THROW(tape.set_leaf(y, before), ContractError);
}

TEST(Autograd, LogClampsAtTinyInputs) {
  ag::Tape<double> tape;
  const auto x = tape.parameter(D::scalar(0.0));
  const auto y = ag::log(x);
  EXPECT_NEAR(y.value().item(), std::log(1e-7), 1e-9);
}
