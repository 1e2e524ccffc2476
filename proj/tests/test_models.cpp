// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "mcgr/error.hpp"
#include "mcgr/models.hpp"
#include "mcgr/ops.hpp"
#include "oracles/oracles.hpp"
#include "test_util.hpp"

using namespace mcgr;
using Vars = std::vector<ag::Var>;

namespace {

constexpr double kTol = 1e-4;

ParamTable init_table(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParamTable t;
  std::mt19937_64 rng(seed);
  initialize(specs, t, rng);
  return t;
}

// Every zero-initialised tensor gets small random values so that no
// gradient path is trivially dead during a check.
void perturb(ParamTable& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& [name, v] : t)
    for (double& x : v.data()) x += n(rng);
}

/// Gradient check of `f` with respect to every parameter and the input.
double check_params(const ParamTable& table, const Tensor& input,
                    const std::function<ag::Var(const VarTable&, const ag::Var&)>& f) {
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (const auto& [n, v] : table) {
    names.push_back(n);
    values.push_back(v);
  }
  values.push_back(input);
  return oracle::gradient_check(
      [&](const Vars& vars) {
        VarTable p;
        for (std::size_t i = 0; i < names.size(); ++i) p.emplace(names[i], vars[i]);
        return f(p, vars.back());
      },
      values);
}

GeneratorConfig tiny_generator(int scale) {
  GeneratorConfig g;
  g.n_rfa_blocks = 1;
  g.width = 4;
  g.units_per_block = 2;
  g.scale = scale;
  return g;
}

// Weighted sum so every output element contributes a distinct gradient.
ag::Var probe_sum(const ag::Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ag::sum(ag::mul(y, ag::Var(testutil::random_tensor(y.shape(), rng))));
}

}  // namespace

TEST(RfaBlock, PreservesShape) {
  GeneratorConfig cfg;
  cfg.width = 64;
  const auto specs = rfa_block_params("b", cfg);
  const ParamTable t = init_table(specs, 1);
  std::mt19937_64 rng(2);
  const ag::Var x(testutil::random_tensor({2, 64, 16, 16}, rng));
  EXPECT_EQ(rfa_block_forward(make_leaves(t, false), "b", x, cfg).shape(), (Shape{2, 64, 16, 16}));
}

TEST(RfaBlock, ZeroFusionIsIdentity) {
  GeneratorConfig cfg = tiny_generator(2);
  cfg.units_per_block = 4;
  ParamTable t = init_table(rfa_block_params("b", cfg), 3);
  t.at("b.fusion.weight").fill(0.0);
  t.at("b.fusion.bias").fill(0.0);
  std::mt19937_64 rng(4);
  const Tensor x = testutil::random_tensor({1, 4, 5, 5}, rng);
  EXPECT_EQ(rfa_block_forward(make_leaves(t, false), "b", ag::Var(x), cfg).value(), x);
}

TEST(RfaBlock, GradientsMatchFiniteDifferences) {
  const GeneratorConfig cfg = tiny_generator(2);
  ParamTable t = init_table(rfa_block_params("b", cfg), 5);
  perturb(t, 6);
  std::mt19937_64 rng(7);
  const double err = check_params(t, testutil::random_tensor({1, 4, 4, 4}, rng), [&](const VarTable& p, const ag::Var& x) {
    return probe_sum(rfa_block_forward(p, "b", x, cfg), 8);
  });
  EXPECT_LT(err, kTol);
}

TEST(HrGenerator, OutputShapes) {
  std::mt19937_64 rng(9);
  const ag::Var lr(testutil::random_tensor({1, 3, 32, 32}, rng, 0, 1));
  for (int scale : {2, 4}) {
    GeneratorConfig cfg = tiny_generator(scale);
    const HrGenerator g(cfg);
    const auto out = g.forward(make_leaves(init_table(g.parameters(), 1), false), lr);
    EXPECT_EQ(out.shape(), (Shape{1, 3, 32 * scale, 32 * scale}));
  }
}

TEST(HrGenerator, SpatialDimsScaleForAllSizes) {
  const HrGenerator g(tiny_generator(2));
  const VarTable p = make_leaves(init_table(g.parameters(), 1), false);
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 6; ++trial) {
    const int h = 8 + static_cast<int>(rng() % 57), w = 8 + static_cast<int>(rng() % 57);
    const auto out = g.forward(p, ag::Var(testutil::random_tensor({1, 3, h, w}, rng, 0, 1)));
    EXPECT_EQ(out.shape(), (Shape{1, 3, 2 * h, 2 * w}));
    EXPECT_TRUE(all_finite(out.value()));
  }
}

TEST(HrGenerator, ParameterCountMatchesRecipe) {
  // Default recipe by hand: head 3*64*9+64; 48 blocks of 4 units with two
  // 64->64 3x3 convolutions plus a 256->64 1x1 fusion; two x2 upsample
  // convolutions 64->256; tail 64->3.
  const std::int64_t head = 3 * 64 * 9 + 64;
  const std::int64_t block = 4 * 2 * (64 * 64 * 9 + 64) + (256 * 64 + 64);
  const std::int64_t up = 2 * (64 * 256 * 9 + 256);
  const std::int64_t tail = 64 * 3 * 9 + 3;
  const std::int64_t expected = head + 48 * block + up + tail;
  EXPECT_EQ(expected, 15268803);
  const HrGenerator g(GeneratorConfig{});
  EXPECT_EQ(parameter_count(g.parameters()), expected);
  EXPECT_EQ(HrGenerator::expected_parameter_count(GeneratorConfig{}), expected);
  for (int scale : {2, 4}) {
    const GeneratorConfig c = tiny_generator(scale);
    EXPECT_EQ(parameter_count(HrGenerator(c).parameters()), HrGenerator::expected_parameter_count(c));
    EXPECT_EQ(parameter_count(LrGenerator(c).parameters()), LrGenerator::expected_parameter_count(c));
  }
}

TEST(HrGenerator, GradientsMatchFiniteDifferences) {
  const GeneratorConfig cfg = tiny_generator(2);
  const HrGenerator g(cfg);
  ParamTable t = init_table(g.parameters(), 11);
  perturb(t, 12);
  std::mt19937_64 rng(13);
  EXPECT_LT(check_params(t, testutil::random_tensor({1, 3, 3, 3}, rng, 0, 1),
                         [&](const VarTable& p, const ag::Var& x) { return probe_sum(g.forward(p, x), 14); }),
            kTol);
}

TEST(HrGenerator, ResampleSkipStartsAtBicubic) {
  GeneratorConfig cfg = tiny_generator(2);
  cfg.resample_skip = true;
  const HrGenerator g(cfg);
  const LrGenerator l(cfg);
  ParamTable t = init_table(g.parameters(), 15);
  const ParamTable tl = init_table(l.parameters(), 15);
  t.insert(tl.begin(), tl.end());
  std::mt19937_64 rng(16);
  const ImageArray img = testutil::random_image(3, 6, 6, rng, 1.0);
  const Tensor up = g.forward(make_leaves(t, false), ag::Var(to_tensor(img))).value();
  const ImageArray ref = resize_bicubic(img, 12, 12);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) EXPECT_NEAR(up.at(0, c, y, x), ref.at(c, y, x), 1e-12);
  const Tensor down = l.forward(make_leaves(t, false), ag::Var(to_tensor(img))).value();
  const ImageArray ref_down = resize_bicubic(img, 3, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) EXPECT_NEAR(down.at(0, c, y, x), ref_down.at(c, y, x), 1e-12);
}

TEST(LrGenerator, ShapesAndComposition) {
  GeneratorConfig cfg = tiny_generator(4);
  const HrGenerator hr(cfg);
  const LrGenerator lr(cfg);
  ParamTable t = init_table(hr.parameters(), 1);
  const ParamTable tl = init_table(lr.parameters(), 2);
  t.insert(tl.begin(), tl.end());
  const VarTable p = make_leaves(t, false);
  std::mt19937_64 rng(17);
  EXPECT_EQ(lr.forward(p, ag::Var(testutil::random_tensor({1, 3, 128, 128}, rng))).shape(), (Shape{1, 3, 32, 32}));
  const ag::Var x(testutil::random_tensor({1, 3, 16, 16}, rng));
  EXPECT_EQ(lr.forward(p, hr.forward(p, x)).shape(), (Shape{1, 3, 16, 16}));
  EXPECT_THROW(lr.forward(p, ag::Var(Tensor({1, 3, 10, 12}))), ContractError);
}

TEST(LrGenerator, ComposedGradientsNonzeroAndMatchFiniteDifferences) {
  const GeneratorConfig cfg = tiny_generator(2);
  const HrGenerator hr(cfg);
  const LrGenerator lr(cfg);
  ParamTable t = init_table(hr.parameters(), 18);
  const ParamTable tl = init_table(lr.parameters(), 19);
  t.insert(tl.begin(), tl.end());
  perturb(t, 20);
  auto composed = [&](const VarTable& p, const ag::Var& x) { return probe_sum(lr.forward(p, hr.forward(p, x)), 21); };
  std::mt19937_64 rng(22);
  const Tensor input = testutil::random_tensor({1, 3, 2, 2}, rng, 0, 1);
  VarTable leaves = make_leaves(t, true);
  std::vector<ag::Var> all;
  for (const auto& [n, v] : leaves) all.push_back(v);
  const auto grads = ag::grad(composed(leaves, ag::Var(input)), all);
  bool hr_nonzero = false, lr_nonzero = false;
  std::size_t i = 0;
  for (const auto& [n, v] : leaves) {
    double norm = 0;
    for (double g : grads[i++].value().data()) norm += g * g;
    if (n.rfind("hr_gen.", 0) == 0) hr_nonzero |= norm > 0;
    if (n.rfind("lr_gen.", 0) == 0) lr_nonzero |= norm > 0;
  }
  EXPECT_TRUE(hr_nonzero);
  EXPECT_TRUE(lr_nonzero);
  EXPECT_LT(check_params(t, input, composed), kTol);
}

TEST(Critic, ScoresPerItemAndDeterministic) {
  CriticConfig cfg;
  cfg.base_width = 4;
  cfg.height = cfg.width = 32;
  const Critic c(cfg, "critic_hr");
  const VarTable p = make_leaves(init_table(c.parameters(), 23), false);
  std::mt19937_64 rng(24);
  Tensor batch = testutil::random_tensor({4, 3, 32, 32}, rng, 0, 1);
  const Tensor s1 = c.forward(p, ag::Var(batch)).value();
  EXPECT_EQ(s1.shape(), (Shape{4}));
  EXPECT_EQ(c.forward(p, ag::Var(batch)).value(), s1);
  // Identical items score identically.
  for (std::int64_t i = 0; i < 3 * 32 * 32; ++i) batch[3 * 32 * 32 + i] = batch[i];
  const Tensor s2 = c.forward(p, ag::Var(batch)).value();
  EXPECT_EQ(s2[0], s2[1]);
  EXPECT_THROW(c.forward(p, ag::Var(Tensor({1, 3, 16, 16}))), ContractError);
}

TEST(Critic, InputAndParameterGradients) {
  CriticConfig cfg;
  cfg.base_width = 2;
  cfg.stages = 2;
  cfg.height = cfg.width = 8;
  const Critic c(cfg, "critic_lr");
  ParamTable t = init_table(c.parameters(), 25);
  perturb(t, 26);
  std::mt19937_64 rng(27);
  const Tensor x = testutil::random_tensor({1, 3, 8, 8}, rng, 0, 1);
  const VarTable p = make_leaves(t, false);
  EXPECT_LT(oracle::gradient_check([&](const Vars& v) { return ag::sum(c.forward(p, v[0])); }, {x}), kTol);
  EXPECT_LT(check_params(t, x, [&](const VarTable& q, const ag::Var& in) { return ag::sum(c.forward(q, in)); }), kTol);
}

TEST(Detector, GridShapes) {
  DetectorConfig cfg;
  const Detector d(cfg);
  const VarTable p = make_leaves(init_table(d.parameters(), 28), false);
  const auto grids = d.forward(p, ag::Var(Tensor({1, 3, 64, 64}, 0.5)));
  ASSERT_EQ(grids.size(), 2u);
  EXPECT_EQ(grids[0].shape(), (Shape{1, 30, 8, 8}));
  EXPECT_EQ(grids[1].shape(), (Shape{1, 30, 4, 4}));
  EXPECT_THROW(d.forward(p, ag::Var(Tensor({1, 3, 60, 60}))), ContractError);
}

TEST(Detector, ZeroHeadGivesEqualObjectness) {
  const Detector d(DetectorConfig{});
  ParamTable t = init_table(d.parameters(), 29);
  for (auto& [n, v] : t)
    if (n.find(".head.") != std::string::npos) v.fill(0.0);
  std::mt19937_64 rng(30);
  const auto grids = d.forward(make_leaves(t, false), ag::Var(testutil::random_tensor({1, 3, 64, 64}, rng, 0, 1)));
  const double first = grids[0].value().at(0, 4, 0, 0);
  for (const auto& g : grids)
    for (int a = 0; a < 3; ++a)
      for (std::int64_t r = 0; r < g.shape()[2]; ++r)
        for (std::int64_t c = 0; c < g.shape()[3]; ++c) EXPECT_EQ(g.value().at(0, a * 10 + 4, r, c), first);
}

TEST(Detector, ReducedHeadGradients) {
  DetectorConfig cfg;
  cfg.n_classes = 2;
  cfg.strides = {2, 4};
  cfg.anchors_per_level = 1;
  cfg.width = 2;
  const Detector d(cfg);
  ParamTable t = init_table(d.parameters(), 31);
  perturb(t, 32);
  std::mt19937_64 rng(33);
  EXPECT_LT(check_params(t, testutil::random_tensor({1, 3, 8, 8}, rng, 0, 1),
                         [&](const VarTable& p, const ag::Var& x) {
                           const auto g = d.forward(p, x);
                           return ag::add(probe_sum(g[0], 34), probe_sum(g[1], 35));
                         }),
            kTol);
}

TEST(ModelState, FiniteForwardWithRandomParameters) {
  GeneratorConfig gen = tiny_generator(2);
  CriticConfig hr_c, lr_c;
  hr_c.base_width = lr_c.base_width = 4;
  hr_c.height = hr_c.width = 32;
  lr_c.height = lr_c.width = 16;
  const AnchorSet anchors{{{4, 4}, {6, 3}, {3, 6}}, {{8, 8}, {12, 6}, {6, 12}}};
  const ModelState s = create_model_state(gen, hr_c, lr_c, DetectorConfig{}, anchors, 36);
  const Networks nets(s);
  const VarTable p = make_leaves(s.params, false);
  std::mt19937_64 rng(37);
  const ag::Var lr(testutil::random_tensor({2, 3, 16, 16}, rng, 0, 1));
  const ag::Var sr = nets.hr_gen.forward(p, lr);
  EXPECT_TRUE(all_finite(sr.value()));
  EXPECT_TRUE(all_finite(nets.lr_gen.forward(p, sr).value()));
  EXPECT_TRUE(all_finite(nets.critic_hr.forward(p, sr).value()));
  EXPECT_TRUE(all_finite(nets.critic_lr.forward(p, lr).value()));
  for (const auto& g : nets.detector.forward(p, sr)) EXPECT_TRUE(all_finite(g.value()));
  Tensor bad = lr.value();
  bad[5] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(nets.hr_gen.forward(p, ag::Var(bad)), NumericError);
}

TEST(ModelState, CheckpointSaveLoadSaveIsByteIdentical) {
  testutil::TempDir dir("ckpt");
  CriticConfig hr_c, lr_c;
  hr_c.base_width = lr_c.base_width = 4;
  hr_c.height = hr_c.width = 32;
  lr_c.height = lr_c.width = 16;
  const AnchorSet anchors{{{4, 4}, {6, 3}, {3, 6}}, {{8, 8}, {12, 6}, {6, 12}}};
  ModelState s = create_model_state(tiny_generator(2), hr_c, lr_c, DetectorConfig{}, anchors, 38);
  s.step = 17;
  s.epoch = 3;
  const nlohmann::json extra{{"note", "x"}};
  save_checkpoint(s, extra, dir.path() / "a.ckpt");
  nlohmann::json extra_back;
  const ModelState back = load_checkpoint(dir.path() / "a.ckpt", &extra_back);
  EXPECT_TRUE(back == s);
  EXPECT_EQ(extra_back, extra);
  save_checkpoint(back, extra_back, dir.path() / "b.ckpt");
  EXPECT_EQ(testutil::read_file(dir.path() / "a.ckpt"), testutil::read_file(dir.path() / "b.ckpt"));
  EXPECT_THROW(load_checkpoint(dir.path() / "missing.ckpt"), IoError);
}

TEST(ModelState, ConfigJsonRoundTrip) {
  GeneratorConfig g = tiny_generator(4);
  g.resample_skip = true;
  EXPECT_EQ(to_json(generator_config_from_json(to_json(g))), to_json(g));
  DetectorConfig d;
  d.strides = {4, 8, 16};
  EXPECT_EQ(to_json(detector_config_from_json(to_json(d))), to_json(d));
  CriticConfig c;
  c.height = 64;
  EXPECT_EQ(to_json(critic_config_from_json(to_json(c))), to_json(c));
  GeneratorConfig bad;
  bad.scale = 3;
  EXPECT_THROW(bad.validate(), ContractError);
}
