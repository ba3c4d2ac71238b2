#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace sbir;
using oracle::grad_check;
using oracle::param;

namespace {

constexpr double kTol = 1e-4;

// Weighted sum with fixed random coefficients, so every output entry matters.
Var probe(const Var& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  auto w = oracle::randn(rng, y.size());
  return ops::sum(ops::mul(y, Var::constant(y.shape(), w)));
}

}  // namespace

TEST(Autograd, ElementwiseOps) {
  Rng rng(1);
  Var a = param({3, 4}, rng), b = param({3, 4}, rng);
  EXPECT_LT(grad_check([&] { return probe(ops::add(a, b)); }, {a, b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::sub(a, b)); }, {a, b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::mul(a, b)); }, {a, b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::scale(a, -2.5)); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::tanh(a)); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::sigmoid(a)); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::exp(a)); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::leaky_relu(a, 0.2)); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return ops::mean(ops::mul(a, a)); }, {a}), kTol);
}

TEST(Autograd, ShapeOps) {
  Rng rng(2);
  Var a = param({2, 3}, rng), b = param({2, 5}, rng);
  EXPECT_LT(grad_check([&] { return probe(ops::concat_cols(a, b)); }, {a, b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::slice_cols(b, 1, 3)); }, {b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::reshape(b, {5, 2})); }, {b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::stack({a, ops::tanh(a)})); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::gather_rows(b, {1, 0, 1, 1})); }, {b}), kTol);
}

TEST(Autograd, LinearAndLstm) {
  Rng rng(3);
  Var x = param({3, 4}, rng), w = param({5, 4}, rng), bias = param({5}, rng);
  EXPECT_LT(grad_check([&] { return probe(ops::linear(x, w, bias)); }, {x, w, bias}), kTol);
  Var gates = param({2, 12}, rng), c = param({2, 3}, rng);
  EXPECT_LT(grad_check([&] { return probe(ops::lstm_cell(gates, c)); }, {gates, c}), kTol);
}

TEST(Autograd, ConvolutionAndSpatialOps) {
  Rng rng(4);
  Var x = param({2, 3, 6, 6}, rng), w = param({4, 3, 3, 3}, rng, 0.3), b = param({4}, rng);
  EXPECT_LT(grad_check([&] { return probe(ops::conv2d(x, w, b, 2, 1, 1)); }, {x, w, b}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::conv2d(x, w, b, 1, 1, 1)); }, {x, w, b}), kTol);
  Var w13 = param({2, 3, 1, 3}, rng, 0.3);
  EXPECT_LT(grad_check([&] { return probe(ops::conv2d(x, w13, Var(), 1, 0, 1)); }, {x, w13}), kTol);

  Var s = param({2, 1, 6, 6}, rng), v = param({2, 3}, rng);
  EXPECT_LT(grad_check([&] { return probe(ops::spatial_softmax(s)); }, {s}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::add_spatial(x, v)); }, {x, v}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::mul_spatial(x, s)); }, {x, s}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::weighted_spatial_sum(s, x)); }, {s, x}), kTol);
  EXPECT_LT(grad_check([&] { return probe(ops::global_avg_pool(x)); }, {x}), kTol);
}

TEST(Autograd, SharedSubgraphAccumulates) {
  Rng rng(5);
  Var a = param({4}, rng);
  Var t = ops::tanh(a);
  EXPECT_LT(grad_check([&] { return probe(ops::mul(ops::tanh(a), ops::add(ops::tanh(a), a))); }, {a}), kTol);
  (void)t;
}

TEST(Autograd, NoGradRecordsNothing) {
  Rng rng(6);
  Var a = param({3}, rng);
  {
    NoGradGuard ng;
    Var y = ops::tanh(a);
    EXPECT_TRUE(y.node().parents.empty());
  }
  Var y = ops::tanh(a);
  EXPECT_FALSE(y.node().parents.empty());
  Var c = Var::constant({3}, {1, 2, 3});
  EXPECT_TRUE(ops::tanh(c).node().parents.empty());
}

TEST(Autograd, ShapeMismatchThrows) {
  Var a = Var::zeros({2, 3}), b = Var::zeros({3, 2});
  EXPECT_THROW(ops::add(a, b), std::invalid_argument);
  EXPECT_THROW(ops::gather_rows(a, {2}), std::invalid_argument);
}

TEST(Adam, SkipsParametersWithoutGradient) {
  Var used = Var::parameter({2}, {1.0, 1.0}), unused = Var::parameter({2}, {5.0, 5.0});
  nn::Adam opt({{"used", used}, {"unused", unused}}, 0.1);
  backward(ops::sum(ops::mul(used, used)));
  opt.step();
  EXPECT_NEAR(used[0], 0.9, 1e-9);  // first Adam step moves by lr in the gradient's sign
  EXPECT_EQ(unused[0], 5.0);
}
