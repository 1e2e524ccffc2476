// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "mcgr/autograd.hpp"
#include "mcgr/error.hpp"
#include "mcgr/image.hpp"
#include "mcgr/ops.hpp"
#include "oracles/oracles.hpp"
#include "test_util.hpp"

using mcgr::Shape;
using mcgr::Tensor;
namespace ag = mcgr::ag;
using Vars = std::vector<ag::Var>;

namespace {

constexpr double kTol = 1e-4;

}  // namespace

TEST(Tensor, ShapesAndAccess) {
  Tensor t({2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.size(), 120);
  EXPECT_EQ(mcgr::numel({}), 1);
  EXPECT_EQ(Tensor::scalar(3.0).item(), 3.0);
  EXPECT_THROW(t.item(), mcgr::ContractError);
  EXPECT_THROW(t.reshaped({7}), mcgr::ContractError);
  t.at(1, 2, 3, 4) = 9;
  EXPECT_EQ(t[119], 9);
  EXPECT_EQ(t.reshaped({120})[119], 9);
  EXPECT_THROW(Tensor({2}, std::vector<double>{1, 2, 3}), mcgr::ContractError);
}

TEST(Tensor, AllFinite) {
  Tensor t({3}, 0.0);
  EXPECT_TRUE(mcgr::all_finite(t));
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(mcgr::all_finite(t));
}

TEST(Autograd, ElementwiseChainMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  auto f = [](const Vars& v) {
    ag::Var a = ag::mul(v[0], v[1]);
    ag::Var b = ag::sub(ag::square(a), ag::scale(ag::exp(v[1]), 0.3));
    ag::Var c = ag::add(ag::sigmoid(b), ag::sqrt(ag::add_scalar(ag::square(v[0]), 1.0)));
    return ag::mean(ag::leaky_relu(ag::neg(c), 0.2));
  };
  EXPECT_LT(oracle::gradient_check(f, {testutil::random_tensor({2, 3}, rng), testutil::random_tensor({2, 3}, rng)}),
            kTol);
}

TEST(Autograd, AbsAwayFromZero) {
  std::mt19937_64 rng(2);
  Tensor x = testutil::random_tensor({10}, rng, 0.2, 1.0);
  for (std::int64_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
  EXPECT_LT(oracle::gradient_check([](const Vars& v) { return ag::sum(ag::abs(v[0])); }, {x}), kTol);
}

TEST(Autograd, ConvolutionInputAndWeight) {
  std::mt19937_64 rng(3);
  for (ag::ConvGeometry geom : {ag::ConvGeometry{1, 1}, ag::ConvGeometry{2, 1}, ag::ConvGeometry{1, 0}}) {
    auto f = [&](const Vars& v) {
      ag::Var y = ag::add_channel_bias(ag::conv2d(v[0], v[1], geom), v[2]);
      return ag::sum(ag::square(y));
    };
    EXPECT_LT(oracle::gradient_check(f, {testutil::random_tensor({2, 2, 5, 6}, rng),
                                         testutil::random_tensor({3, 2, 3, 3}, rng), testutil::random_tensor({3}, rng)}),
              kTol);
  }
}

TEST(Autograd, ConvolutionShapeContract) {
  ag::Var x(Tensor({1, 2, 4, 4}));
  ag::Var w(Tensor({3, 5, 3, 3}));
  EXPECT_THROW(ag::conv2d(x, w, {1, 1}), mcgr::ContractError);
  EXPECT_EQ(ag::conv_output_size(64, 3, {2, 1}), 32);
}

TEST(Autograd, RearrangementAndChannelOps) {
  std::mt19937_64 rng(4);
  auto f = [](const Vars& v) {
    ag::Var s = ag::pixel_shuffle(v[0], 2);                               // (1, 2, 4, 6)
    ag::Var u = ag::pixel_unshuffle(ag::square(s), 2);                    // (1, 8, 2, 3)
    ag::Var cat = ag::concat_channels({u, v[0]});                         // (1, 16, 2, 3)
    ag::Var part = ag::slice_channels(cat, 3, 6);                         // (1, 6, 2, 3)
    ag::Var padded = ag::pad_channels(part, 1, 9);                        // (1, 9, 2, 3)
    ag::Var m = ag::spatial_mean(padded);                                 // (1, 9, 1, 1)
    ag::Var e = ag::spatial_expand(m, 2, 3);
    return ag::sum(ag::mul(e, ag::sigmoid(padded)));
  };
  EXPECT_LT(oracle::gradient_check(f, {testutil::random_tensor({1, 8, 2, 3}, rng)}), kTol);
}

TEST(Autograd, PixelShuffleDefinition) {
  ag::Var x(Tensor({1, 4, 1, 1}, std::vector<double>{1, 2, 3, 4}));
  const Tensor y = ag::pixel_shuffle(x, 2).value();
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.at(0, 0, 0, 0), 1);
  EXPECT_EQ(y.at(0, 0, 0, 1), 2);
  EXPECT_EQ(y.at(0, 0, 1, 0), 3);
  EXPECT_EQ(y.at(0, 0, 1, 1), 4);
}

TEST(Autograd, PixelShuffleIdentityInverseAndPermutation) {
  std::mt19937_64 rng(5);
  const Tensor t = testutil::random_tensor({2, 12, 3, 5}, rng);
  ag::Var x(t);
  EXPECT_EQ(ag::pixel_shuffle(x, 1).value(), t);
  const Tensor shuffled = ag::pixel_shuffle(x, 2).value();
  EXPECT_EQ(shuffled.shape(), (Shape{2, 3, 6, 10}));
  EXPECT_EQ(ag::pixel_unshuffle(ag::Var(shuffled), 2).value(), t);
  std::vector<double> a(t.data().begin(), t.data().end()), b(shuffled.data().begin(), shuffled.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_THROW(ag::pixel_shuffle(ag::Var(Tensor({1, 3, 2, 2})), 2), mcgr::ContractError);
}

TEST(Autograd, SeparableLinearMatchesBicubicResize) {
  std::mt19937_64 rng(6);
  const mcgr::ImageArray img = testutil::random_image(3, 8, 12, rng, 1.0);
  const mcgr::ImageArray expected = mcgr::resize_bicubic(img, 16, 24);
  const Tensor out = ag::separable_linear(ag::Var(mcgr::to_tensor(img)), mcgr::bicubic_matrix(8, 16),
                                          mcgr::bicubic_matrix(12, 24))
                         .value();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 24; ++x) EXPECT_NEAR(out.at(0, c, y, x), expected.at(c, y, x), 1e-12);
}

TEST(Autograd, SeparableLinearGradient) {
  std::mt19937_64 rng(7);
  const Tensor rows = testutil::random_tensor({3, 4}, rng), cols = testutil::random_tensor({5, 2}, rng);
  auto f = [&](const Vars& v) { return ag::sum(ag::square(ag::separable_linear(v[0], rows, cols))); };
  EXPECT_LT(oracle::gradient_check(f, {testutil::random_tensor({2, 2, 4, 2}, rng)}), kTol);
}

TEST(Autograd, GatherScatterAndFusedLosses) {
  std::mt19937_64 rng(8);
  const Tensor targets({4}, std::vector<double>{1, 0, 0.3, 1});
  const Tensor weights({4}, std::vector<double>{1, 2, 0.5, 1});
  auto f = [&](const Vars& v) {
    ag::Var g = ag::gather(v[0], {0, 5, 7, 11});
    ag::Var bce = ag::bce_with_logits_sum(g, targets, weights);
    ag::Var logits = ag::reshape(ag::gather(v[0], {1, 2, 3, 4, 6, 8}), {2, 3});
    ag::Var ce = ag::softmax_cross_entropy_sum(logits, {2, 0});
    ag::Var sc = ag::sum(ag::square(ag::scatter(g, {3, 1, 0, 2}, {5})));
    return ag::add(ag::add(bce, ce), sc);
  };
  EXPECT_LT(oracle::gradient_check(f, {testutil::random_tensor({12}, rng, -3, 3)}), kTol);
}

TEST(Autograd, BceWithLogitsIsStableForLargeLogits) {
  ag::Var x(Tensor({2}, std::vector<double>{800, -800}));
  const double v = ag::bce_with_logits_sum(x, Tensor({2}, std::vector<double>{1, 0}), Tensor({2}, 1.0)).value().item();
  EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Autograd, PerSampleReductions) {
  std::mt19937_64 rng(9);
  auto f = [](const Vars& v) {
    ag::Var s = ag::sum_per_sample(ag::square(v[0]));  // (3)
    ag::Var e = ag::expand_per_sample(s, {3, 2, 2, 2});
    ag::Var c = ag::channel_broadcast(ag::channel_sum(v[0]), {3, 2, 2, 2});
    return ag::sum(ag::mul(ag::add(e, c), v[0]));
  };
  EXPECT_LT(oracle::gradient_check(f, {testutil::random_tensor({3, 2, 2, 2}, rng)}), kTol);
}

TEST(Autograd, UnreachableInputGetsZeroGradient) {
  ag::Var a(Tensor({2}, 1.0), true), b(Tensor({3}, 1.0), true);
  const auto g = ag::grad(ag::sum(ag::square(a)), std::vector<ag::Var>{a, b});
  EXPECT_EQ(g[1].value(), Tensor({3}, 0.0));
  EXPECT_EQ(g[0].value(), Tensor({2}, 2.0));
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  ag::Var a(Tensor({2}, 1.0), true);
  {
    ag::NoGradGuard guard;
    EXPECT_FALSE(ag::grad_enabled());
    EXPECT_FALSE(ag::square(a).requires_grad());
  }
  EXPECT_TRUE(ag::grad_enabled());
  EXPECT_TRUE(ag::square(a).requires_grad());
}

// Double backward: d/dw of ||d f / d x||^2 for a conv + leaky rectifier
// network, against finite differences of the first-order gradient norm.
TEST(Autograd, SecondOrderThroughConvolutionAndLeakyRelu) {
  std::mt19937_64 rng(10);
  const Tensor x0 = testutil::random_tensor({1, 2, 4, 4}, rng);
  const Tensor v = testutil::random_tensor({1, 3, 2, 2}, rng);
  auto network = [&](const ag::Var& x, const ag::Var& w) {
    return ag::sum(ag::mul(ag::leaky_relu(ag::conv2d(x, w, {2, 1}), 0.2), ag::Var(v)));
  };
  auto grad_norm = [&](const Vars& vars) {
    ag::Var x(x0, true);
    const auto gx = ag::grad(network(x, vars[0]), std::vector<ag::Var>{x}, true);
    return ag::sum(ag::square(gx[0]));
  };
  EXPECT_LT(oracle::gradient_check(grad_norm, {testutil::random_tensor({3, 2, 3, 3}, rng)}), kTol);
}

TEST(Autograd, SecondOrderThroughSpatialMeanAndScale) {
  std::mt19937_64 rng(11);
  const Tensor x0 = testutil::random_tensor({2, 3, 4, 4}, rng);
  auto grad_norm = [&](const Vars& vars) {
    ag::Var x(x0, true);
    ag::Var y = ag::mul(ag::spatial_mean(ag::leaky_relu(ag::mul(x, vars[0]), 0.2)),
                        ag::spatial_mean(ag::mul(x, vars[0])));
    const auto gx = ag::grad(ag::sum(y), std::vector<ag::Var>{x}, true);
    return ag::sum(ag::square(ag::add_scalar(gx[0], -0.1)));
  };
  EXPECT_LT(oracle::gradient_check(grad_norm, {testutil::random_tensor({2, 3, 4, 4}, rng)}), kTol);
}
