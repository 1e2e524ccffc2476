// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcgr/ops.hpp"

namespace mcgr {

struct LossWeights {
  double mu1 = 0.90;  // generator L1
  double mu2 = 10.0;  // critic
  double mu3 = 0.10;  // detector
  double lambda_gp = 10.0;

  void validate() const;
};

struct LossReport {
  double l_cyclic = 0;
  double l_gen_l1 = 0;
  double l_critic = 0;  // both critics, gradient penalty included
  double l_gp = 0;
  double l_bbox = 0;
  double l_total = 0;
  // Terms outside the weighted total, reported for diagnosis.
  double l_adv = 0;
  double l_obj = 0;
  double l_cls = 0;

  bool all_finite() const;
  bool operator==(const LossReport&) const = default;
};

nlohmann::json to_json(const LossReport& r);

/// How L1/MSE reduce over a batch: mean over every element, or the literal
/// per-sample sum averaged over samples.
enum class Reduction { element_mean, sample_sum };

ag::Var l1_loss(const ag::Var& a, const ag::Var& b, Reduction r = Reduction::element_mean);
ag::Var mse_loss(const ag::Var& a, const ag::Var& b, Reduction r = Reduction::element_mean);

ag::Var generator_l1(const ag::Var& sr, const ag::Var& hr, Reduction r = Reduction::element_mean);

using ImageMap = std::function<ag::Var(const ag::Var&)>;

struct CyclicTerms {
  ag::Var total;
  ag::Var sr;       // HR_GEN(I_LR)
  ag::Var lr_fake;  // LR_GEN(I_HR)
  ag::Var terms[4];
};

/// L1(HR(lr), hr) + MSE(HR(LR(hr)), hr) + L1(LR(hr), lr) + MSE(LR(HR(lr)), lr).
CyclicTerms cyclic_loss(const ag::Var& i_lr, const ag::Var& i_hr, const ImageMap& hr_gen, const ImageMap& lr_gen,
                        Reduction r = Reduction::element_mean);

/// lambda * mean_b (||grad_x critic(x_b)||_2 - 1)^2 at x = eps_b real + (1 - eps_b) fake.
/// Differentiable with respect to whatever the critic closes over.
ag::Var gradient_penalty(const ImageMap& critic, const Tensor& real, const Tensor& fake, double lambda_gp,
                         std::mt19937_64& rng);
ag::Var gradient_penalty(const ImageMap& critic, const Tensor& real, const Tensor& fake, double lambda_gp,
                         const std::vector<double>& eps);

/// mean(fake) - mean(real) + gp.
ag::Var critic_loss(const ag::Var& real_scores, const ag::Var& fake_scores, const ag::Var& gp);
/// -mean(fake).
ag::Var generator_adversarial(const ag::Var& fake_scores);

/// Sum over aligned rows of squared (x, y, w, h) differences; pred (K, 4).
ag::Var bbox_loss(const ag::Var& pred, const Tensor& target);

ag::Var total_loss(const ag::Var& l_gen, const ag::Var& l_dis, const ag::Var& l_det, const LossWeights& w);
double total_loss(double l_gen, double l_dis, double l_det, const LossWeights& w);

}  // namespace mcgr
