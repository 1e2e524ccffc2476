// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/losses.hpp"

#include <cmath>

#include "mcgr/error.hpp"

namespace mcgr {

void LossWeights::validate() const {
  for (double v : {mu1, mu2, mu3, lambda_gp})
    require(std::isfinite(v) && v >= 0, "loss weights must be finite and non-negative");
}

bool LossReport::all_finite() const {
  for (double v : {l_cyclic, l_gen_l1, l_critic, l_gp, l_bbox, l_total, l_adv, l_obj, l_cls})
    if (!std::isfinite(v)) return false;
  return true;
}

nlohmann::json to_json(const LossReport& r) {
  return {{"l_cyclic", r.l_cyclic}, {"l_gen_l1", r.l_gen_l1}, {"l_critic", r.l_critic},
          {"l_gp", r.l_gp},         {"l_bbox", r.l_bbox},     {"l_total", r.l_total},
          {"l_adv", r.l_adv},       {"l_obj", r.l_obj},       {"l_cls", r.l_cls}};
}

namespace {

ag::Var reduce(const ag::Var& elementwise, Reduction r) {
  if (r == Reduction::element_mean) return ag::mean(elementwise);
  const double batch = static_cast<double>(elementwise.shape().at(0));
  return ag::scale(ag::sum(elementwise), 1.0 / batch);
}

void require_pair(const ag::Var& a, const ag::Var& b, const char* what) {
  require(a.shape() == b.shape(),
          std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

}  // namespace

ag::Var l1_loss(const ag::Var& a, const ag::Var& b, Reduction r) {
  require_pair(a, b, "l1_loss");
  return reduce(ag::abs(ag::sub(a, b)), r);
}

ag::Var mse_loss(const ag::Var& a, const ag::Var& b, Reduction r) {
  require_pair(a, b, "mse_loss");
  return reduce(ag::square(ag::sub(a, b)), r);
}

ag::Var generator_l1(const ag::Var& sr, const ag::Var& hr, Reduction r) {
  require_pair(sr, hr, "generator_l1");
  return l1_loss(sr, hr, r);
}

CyclicTerms cyclic_loss(const ag::Var& i_lr, const ag::Var& i_hr, const ImageMap& hr_gen, const ImageMap& lr_gen,
                        Reduction r) {
  CyclicTerms t;
  t.sr = hr_gen(i_lr);
  require(t.sr.shape() == i_hr.shape(), "cyclic_loss: HR generator output " + to_string(t.sr.shape()) +
                                            " does not match the HR image " + to_string(i_hr.shape()));
  t.lr_fake = lr_gen(i_hr);
  require(t.lr_fake.shape() == i_lr.shape(), "cyclic_loss: LR generator output " + to_string(t.lr_fake.shape()) +
                                                 " does not match the LR image " + to_string(i_lr.shape()));
  ag::Var hr_cycle = hr_gen(t.lr_fake);
  ag::Var lr_cycle = lr_gen(t.sr);
  require(hr_cycle.shape() == i_hr.shape() && lr_cycle.shape() == i_lr.shape(),
          "cyclic_loss: cycle reconstructions have the wrong shape");
  t.terms[0] = l1_loss(t.sr, i_hr, r);
  t.terms[1] = mse_loss(hr_cycle, i_hr, r);
  t.terms[2] = l1_loss(t.lr_fake, i_lr, r);
  t.terms[3] = mse_loss(lr_cycle, i_lr, r);
  t.total = ag::add(ag::add(t.terms[0], t.terms[1]), ag::add(t.terms[2], t.terms[3]));
  return t;
}

ag::Var gradient_penalty(const ImageMap& critic, const Tensor& real, const Tensor& fake, double lambda_gp,
                         std::mt19937_64& rng) {
  require(real.rank() >= 1, "gradient_penalty: batch expected");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> eps(static_cast<std::size_t>(real.dim(0)));
  for (double& e : eps) e = unit(rng);
  return gradient_penalty(critic, real, fake, lambda_gp, eps);
}

ag::Var gradient_penalty(const ImageMap& critic, const Tensor& real, const Tensor& fake, double lambda_gp,
                         const std::vector<double>& eps) {
  require(real.shape() == fake.shape(), "gradient_penalty: real/fake shape mismatch");
  require(static_cast<std::int64_t>(eps.size()) == real.dim(0), "gradient_penalty: one epsilon per sample");
  require(lambda_gp >= 0, "gradient_penalty: lambda must be non-negative");
  Tensor mixed(real.shape());
  const std::int64_t inner = real.size() / real.dim(0);
  for (std::int64_t b = 0; b < real.dim(0); ++b) {
    const double e = eps[static_cast<std::size_t>(b)];
    for (std::int64_t i = b * inner; i < (b + 1) * inner; ++i) mixed[i] = e * real[i] + (1.0 - e) * fake[i];
  }
  ag::Var x(mixed, true);
  ag::Var scores = critic(x);
  ag::Var g = ag::grad(ag::sum(scores), std::vector<ag::Var>{x}, true)[0];
  if (!all_finite(g.value())) throw NumericError("gradient_penalty: non-finite critic gradient");
  // The tiny offset keeps the norm differentiable where the gradient vanishes.
  ag::Var norms = ag::sqrt(ag::add_scalar(ag::sum_per_sample(ag::square(g)), 1e-12));
  return ag::scale(ag::mean(ag::square(ag::add_scalar(norms, -1.0))), lambda_gp);
}

ag::Var critic_loss(const ag::Var& real_scores, const ag::Var& fake_scores, const ag::Var& gp) {
  require(real_scores.value().size() > 0 && fake_scores.value().size() > 0, "critic_loss: empty score batch");
  return ag::add(ag::sub(ag::mean(fake_scores), ag::mean(real_scores)), gp);
}

ag::Var generator_adversarial(const ag::Var& fake_scores) {
  require(fake_scores.value().size() > 0, "generator_adversarial: empty score batch");
  return ag::neg(ag::mean(fake_scores));
}

ag::Var bbox_loss(const ag::Var& pred, const Tensor& target) {
  require(pred.shape() == target.shape(), "bbox_loss: predictions " + to_string(pred.shape()) +
                                              " not aligned with targets " + to_string(target.shape()));
  require(pred.shape().size() == 2 && pred.shape()[1] == 4, "bbox_loss: expected (K, 4) boxes");
  if (pred.shape()[0] == 0) return ag::sum(ag::Var(Tensor({0})));
  Tensor neg_target = target;
  for (double& v : neg_target.data()) v = -v;
  return ag::sum(ag::square(ag::add_const(pred, neg_target)));
}

ag::Var total_loss(const ag::Var& l_gen, const ag::Var& l_dis, const ag::Var& l_det, const LossWeights& w) {
  for (const auto* v : {&l_gen, &l_dis, &l_det})
    if (!all_finite(v->value())) throw NumericError("total_loss: non-finite input");
  return ag::add(ag::add(ag::scale(l_gen, w.mu1), ag::scale(l_dis, w.mu2)), ag::scale(l_det, w.mu3));
}

double total_loss(double l_gen, double l_dis, double l_det, const LossWeights& w) {
  if (!std::isfinite(l_gen) || !std::isfinite(l_dis) || !std::isfinite(l_det))
    throw NumericError("total_loss: non-finite input");
  return w.mu1 * l_gen + w.mu2 * l_dis + w.mu3 * l_det;
}

}  // namespace mcgr
