// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mcgr/error.hpp"
#include "mcgr/losses.hpp"
#include "mcgr/models.hpp"
#include "mcgr/ops.hpp"
#include "oracles/oracles.hpp"
#include "test_util.hpp"

using namespace mcgr;
using Vars = std::vector<ag::Var>;

namespace {

constexpr double kTol = 1e-4;

// score(x_b) = <w, x_b>, so the input gradient is w for every sample.
ImageMap linear_critic(const ag::Var& w) {
  return [w](const ag::Var& x) {
    const Shape& s = x.shape();
    std::vector<ag::Var> copies(static_cast<std::size_t>(s[0]), w);
    ag::Var tiled = ag::reshape(ag::concat_channels(copies), {s[0], s[1], s[2], s[3]});
    return ag::sum_per_sample(ag::mul(x, tiled));
  };
}

Tensor weight_with_norm(double norm, std::mt19937_64& rng) {
  Tensor w = testutil::random_tensor({1, 2, 3, 3}, rng);
  double n = 0;
  for (double v : w.data()) n += v * v;
  for (double& v : w.data()) v *= norm / std::sqrt(n);
  return w;
}

// Entries at least `gap` away from each other so L1 is smooth at the probe.
std::pair<Tensor, Tensor> untied_pair(const Shape& shape, std::mt19937_64& rng, double gap = 0.05) {
  Tensor a = testutil::random_tensor(shape, rng), b = testutil::random_tensor(shape, rng);
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (std::fabs(a[i] - b[i]) < gap) a[i] = b[i] + (a[i] >= b[i] ? gap : -gap);
  return {a, b};
}

}  // namespace

TEST(GeneratorL1, ValuesAndGradient) {
  const Tensor hr({2, 3, 4, 4}, 0.3);
  Tensor shifted = hr;
  for (double& v : shifted.data()) v += 1;
  EXPECT_EQ(generator_l1(ag::Var(hr), ag::Var(hr)).value().item(), 0.0);
  EXPECT_NEAR(generator_l1(ag::Var(shifted), ag::Var(hr)).value().item(), 1.0, 1e-15);
  std::mt19937_64 rng(1);
  auto [sr, target] = untied_pair({2, 3, 4, 4}, rng);
  ag::Var leaf(sr, true);
  const Tensor g = ag::grad(generator_l1(leaf, ag::Var(target)), Vars{leaf})[0].value();
  for (std::int64_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(g[i], (sr[i] > target[i] ? 1.0 : -1.0) / 96.0);
  EXPECT_LT(oracle::gradient_check([&](const Vars& v) { return generator_l1(v[0], ag::Var(target)); }, {sr}), kTol);
  EXPECT_THROW(generator_l1(ag::Var(Tensor({1, 3, 4, 4})), ag::Var(hr)), ContractError);
}

TEST(Reductions, SampleSumVariant) {
  const Tensor a({2, 1, 2, 2}, 1.0), b({2, 1, 2, 2}, 0.0);
  EXPECT_DOUBLE_EQ(l1_loss(ag::Var(a), ag::Var(b), Reduction::sample_sum).value().item(), 4.0);
  EXPECT_DOUBLE_EQ(mse_loss(ag::Var(a), ag::Var(b), Reduction::element_mean).value().item(), 1.0);
}

TEST(CyclicLoss, ExactInversesGiveZero) {
  // Nearest-neighbour x2 upsampling and its left inverse (top-left sample).
  ImageMap up = [](const ag::Var& x) { return ag::pixel_shuffle(ag::concat_channels({x, x, x, x}), 2); };
  ImageMap down = [](const ag::Var& x) { return ag::slice_channels(ag::pixel_unshuffle(x, 2), 0, 1); };
  std::mt19937_64 rng(2);
  const ag::Var lr(testutil::random_tensor({2, 1, 3, 3}, rng));
  const ag::Var hr = up(lr);
  EXPECT_EQ(cyclic_loss(lr, hr, up, down).total.value().item(), 0.0);
}

TEST(CyclicLoss, ConstantStubsHandValue) {
  // HR stub emits 1 everywhere, LR stub emits 0.5; I_HR = 0, I_LR = 0.25.
  // L1(1, 0) + MSE(1, 0) + L1(0.5, 0.25) + MSE(0.5, 0.25) = 1 + 1 + 0.25 + 0.0625.
  ImageMap hr_stub = [](const ag::Var&) { return ag::Var(Tensor({1, 1, 4, 4}, 1.0)); };
  ImageMap lr_stub = [](const ag::Var&) { return ag::Var(Tensor({1, 1, 2, 2}, 0.5)); };
  const CyclicTerms t =
      cyclic_loss(ag::Var(Tensor({1, 1, 2, 2}, 0.25)), ag::Var(Tensor({1, 1, 4, 4}, 0.0)), hr_stub, lr_stub);
  EXPECT_DOUBLE_EQ(t.total.value().item(), 2.3125);
  EXPECT_DOUBLE_EQ(t.terms[2].value().item(), 0.25);
}

TEST(CyclicLoss, ShapeMismatchedStubsRejected) {
  ImageMap wrong = [](const ag::Var&) { return ag::Var(Tensor({1, 1, 3, 3})); };
  ImageMap lr_stub = [](const ag::Var&) { return ag::Var(Tensor({1, 1, 2, 2})); };
  EXPECT_THROW(cyclic_loss(ag::Var(Tensor({1, 1, 2, 2})), ag::Var(Tensor({1, 1, 4, 4})), wrong, lr_stub),
               ContractError);
}

TEST(CyclicLoss, GradientsAndBatchPermutation) {
  GeneratorConfig cfg;
  cfg.n_rfa_blocks = 1;
  cfg.width = 3;
  cfg.units_per_block = 1;
  cfg.scale = 2;
  const HrGenerator hr(cfg);
  const LrGenerator lr(cfg);
  ParamTable table;
  std::mt19937_64 rng(3);
  auto specs = hr.parameters();
  const auto lspecs = lr.parameters();
  specs.insert(specs.end(), lspecs.begin(), lspecs.end());
  initialize(specs, table, rng);
  for (auto& [n, v] : table)
    for (double& x : v.data()) x += 0.2 * std::normal_distribution<double>()(rng);
  auto [i_lr, other] = untied_pair({2, 3, 2, 2}, rng);
  const Tensor i_hr = testutil::random_tensor({2, 3, 4, 4}, rng);
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (const auto& [n, v] : table) names.push_back(n), values.push_back(v);
  auto loss = [&](const Vars& vars, const Tensor& l, const Tensor& h) {
    VarTable p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], vars[i]);
    return cyclic_loss(ag::Var(l), ag::Var(h), [&](const ag::Var& x) { return hr.forward(p, x); },
                       [&](const ag::Var& x) { return lr.forward(p, x); })
        .total;
  };
  EXPECT_LT(oracle::gradient_check([&](const Vars& v) { return loss(v, i_lr, i_hr); }, values), kTol);

  auto swap_batch = [](const Tensor& t) {
    Tensor s = t;
    const std::int64_t inner = t.size() / 2;
    for (std::int64_t i = 0; i < inner; ++i) std::swap(s[i], s[inner + i]);
    return s;
  };
  Vars fixed;
  for (const auto& v : values) fixed.emplace_back(v);
  // Equal up to summation order.
  EXPECT_DOUBLE_EQ(loss(fixed, i_lr, i_hr).value().item(),
                   loss(fixed, swap_batch(i_lr), swap_batch(i_hr)).value().item());
}

TEST(GradientPenalty, ClosedFormForLinearCritics) {
  std::mt19937_64 rng(4);
  const Tensor real = testutil::random_tensor({3, 2, 3, 3}, rng), fake = testutil::random_tensor({3, 2, 3, 3}, rng);
  for (double norm : {0.5, 1.0, 3.0}) {
    const ag::Var w(weight_with_norm(norm, rng));
    for (int draw = 0; draw < 3; ++draw) {
      const double gp = gradient_penalty(linear_critic(w), real, fake, 10.0, rng).value().item();
      EXPECT_NEAR(gp, 10.0 * (norm - 1) * (norm - 1), 1e-6);
    }
  }
  const ag::Var w(weight_with_norm(3.0, rng));
  EXPECT_EQ(gradient_penalty(linear_critic(w), real, fake, 0.0, rng).value().item(), 0.0);
  EXPECT_THROW(gradient_penalty(linear_critic(w), real, fake, 10.0, std::vector<double>{0.5}), ContractError);
}

TEST(GradientPenalty, SecondOrderGradientThroughCritic) {
  CriticConfig cfg;
  cfg.base_width = 2;
  cfg.stages = 2;
  cfg.height = cfg.width = 8;
  const Critic critic(cfg, "critic_hr");
  ParamTable table;
  std::mt19937_64 rng(5);
  initialize(critic.parameters(), table, rng);
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (const auto& [n, v] : table) names.push_back(n), values.push_back(v);
  const Tensor real = testutil::random_tensor({2, 3, 8, 8}, rng, 0, 1), fake = testutil::random_tensor({2, 3, 8, 8}, rng, 0, 1);
  const std::vector<double> eps{0.3, 0.8};
  auto f = [&](const Vars& vars) {
    VarTable p;
    for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], vars[i]);
    ImageMap c = [&](const ag::Var& x) { return critic.forward(p, x); };
    const ag::Var gp = gradient_penalty(c, real, fake, 10.0, eps);
    return critic_loss(c(ag::Var(real)), c(ag::Var(fake)), gp);
  };
  EXPECT_LT(oracle::gradient_check(f, values), kTol);
}

TEST(CriticLoss, HandValues) {
  auto v = [](std::vector<double> d) { return ag::Var(Tensor({static_cast<std::int64_t>(d.size())}, d)); };
  const ag::Var zero(Tensor::scalar(0.0));
  EXPECT_EQ(critic_loss(v({0.3, 0.7}), v({0.3, 0.7}), zero).value().item(), 0.0);
  EXPECT_EQ(critic_loss(v({1}), v({0}), zero).value().item(), -1.0);
  EXPECT_EQ(critic_loss(v({2, 0}), v({1, 1}), ag::Var(Tensor::scalar(40.0))).value().item(), 40.0);
  EXPECT_EQ(generator_adversarial(v({1, 3})).value().item(), -2.0);
  std::mt19937_64 rng(6);
  EXPECT_LT(oracle::gradient_check(
                [](const Vars& x) { return ag::add(critic_loss(x[0], x[1], x[2]), generator_adversarial(x[1])); },
                {testutil::random_tensor({3}, rng), testutil::random_tensor({3}, rng), Tensor::scalar(2.0)}),
            kTol);
}

TEST(BboxLoss, HandValues) {
  const Tensor target({2, 4}, std::vector<double>{0.5, 0.5, 0.2, 0.1, 0.3, 0.6, 0.1, 0.1});
  EXPECT_EQ(bbox_loss(ag::Var(target), target).value().item(), 0.0);
  const Tensor one_target({1, 4}, std::vector<double>{0.5, 0.5, 0.2, 0.1});
  Tensor one = one_target;
  one[0] += 0.1;
  EXPECT_NEAR(bbox_loss(ag::Var(one), one_target).value().item(), 0.01, 1e-15);
  Tensor two = target;
  two[0] += 0.1;
  two[5] += 0.2;
  two[6] += 0.1;
  EXPECT_NEAR(bbox_loss(ag::Var(two), target).value().item(), 0.06, 1e-15);
  EXPECT_EQ(bbox_loss(ag::Var(Tensor({0, 4})), Tensor({0, 4})).value().item(), 0.0);
  EXPECT_THROW(bbox_loss(ag::Var(Tensor({2, 4})), Tensor({1, 4})), ContractError);
  std::mt19937_64 rng(7);
  EXPECT_LT(oracle::gradient_check([&](const Vars& x) { return bbox_loss(x[0], target); },
                                   {testutil::random_tensor({2, 4}, rng)}),
            kTol);
}

TEST(TotalLoss, WeightedSumAndLinearity) {
  const LossWeights w;
  EXPECT_NEAR(total_loss(1, 1, 1, w), 11.0, 1e-12);
  EXPECT_EQ(total_loss(0, 0, 0, w), 0.0);
  EXPECT_NEAR(total_loss(2, 0.5, 10, w), 7.8, 1e-12);
  const double base = total_loss(0.3, 0.2, 0.1, w);
  EXPECT_NEAR(total_loss(0.3 * 4, 0.2, 0.1, w) - base, 3 * 0.3 * w.mu1, 1e-12);
  EXPECT_NEAR(total_loss(0.3, 0.2 * 4, 0.1, w) - base, 3 * 0.2 * w.mu2, 1e-12);
  EXPECT_NEAR(total_loss(0.3, 0.2, 0.1 * 4, w) - base, 3 * 0.1 * w.mu3, 1e-12);
  EXPECT_THROW(total_loss(std::nan(""), 0, 0, w), NumericError);
  EXPECT_LT(oracle::gradient_check([&](const Vars& x) { return total_loss(x[0], x[1], x[2], w); },
                                   {Tensor::scalar(0.4), Tensor::scalar(-1.5), Tensor::scalar(2.0)}),
            kTol);
}

TEST(Losses, NonNegativity) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 20; ++i) {
    const ag::Var a(testutil::random_tensor({1, 2, 3, 3}, rng)), b(testutil::random_tensor({1, 2, 3, 3}, rng));
    EXPECT_GE(l1_loss(a, b).value().item(), 0);
    EXPECT_GE(mse_loss(a, b).value().item(), 0);
    const Tensor t = testutil::random_tensor({3, 4}, rng);
    EXPECT_GE(bbox_loss(ag::Var(testutil::random_tensor({3, 4}, rng)), t).value().item(), 0);
  }
}
