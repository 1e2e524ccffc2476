// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

// Networks of the cyclic super-resolution GAN and the detection head.
//
// Networks are stateless descriptions. Parameters live in a ParamTable keyed
// by dotted paths ("hr_gen.blocks.3.units.1.conv2.weight"); a forward pass
// reads them from a VarTable of autograd leaves built for that pass.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcgr/ops.hpp"

namespace mcgr {

inline constexpr double kLeakySlope = 0.2;

struct GeneratorConfig {
  int n_rfa_blocks = 48;
  int width = 64;
  int kernel = 3;
  int scale = 4;
  int units_per_block = 4;
  int channels = 3;
  /// Add the fixed bicubic resampling of the input to the output, so the
  /// network learns a residual over it. No parameters; off by default.
  bool resample_skip = false;

  void validate() const;
};

struct CriticConfig {
  int base_width = 32;
  int stages = 4;
  int kernel = 3;
  int channels = 3;
  /// Spatial size of the resolution class this critic scores.
  int height = 128;
  int width = 128;

  void validate() const;
};

struct DetectorConfig {
  int n_classes = 5;
  std::vector<int> strides{8, 16};
  int anchors_per_level = 3;
  int width = 16;
  int channels = 3;

  void validate() const;
  int outputs_per_anchor() const { return 5 + n_classes; }
};

struct ParamSpec {
  std::string name;
  Shape shape;
  double init_std = 0.0;
  double init_fill = 0.0;
};

using ParamTable = std::map<std::string, Tensor>;
using VarTable = std::map<std::string, ag::Var>;

std::int64_t parameter_count(const std::vector<ParamSpec>& specs);
/// Fan-in-scaled normal draws (init_std) plus a constant (init_fill), in ParamSpec order.
void initialize(const std::vector<ParamSpec>& specs, ParamTable& table, std::mt19937_64& rng);
/// Autograd leaves for every entry whose key starts with one of `prefixes`.
VarTable make_leaves(const ParamTable& table, bool requires_grad, const std::vector<std::string>& prefixes = {});

// Residual feature aggregation block: `units_per_block` residual units
// (conv -> leaky -> conv, unit skip) in sequence; all unit outputs are
// concatenated and fused by a 1x1 convolution, then added to the input.
std::vector<ParamSpec> rfa_block_params(const std::string& prefix, const GeneratorConfig& cfg);
ag::Var rfa_block_forward(const VarTable& p, const std::string& prefix, const ag::Var& x, const GeneratorConfig& cfg);

class HrGenerator {
 public:
  explicit HrGenerator(GeneratorConfig cfg, std::string prefix = "hr_gen");
  std::vector<ParamSpec> parameters() const;
  /// (B, C, h, w) -> (B, C, s*h, s*w).
  ag::Var forward(const VarTable& p, const ag::Var& lr) const;
  const GeneratorConfig& config() const { return cfg_; }
  /// Closed-form parameter count of the layer recipe.
  static std::int64_t expected_parameter_count(const GeneratorConfig& cfg);

 private:
  GeneratorConfig cfg_;
  std::string prefix_;
};

class LrGenerator {
 public:
  explicit LrGenerator(GeneratorConfig cfg, std::string prefix = "lr_gen");
  std::vector<ParamSpec> parameters() const;
  /// (B, C, H, W) -> (B, C, H/s, W/s).
  ag::Var forward(const VarTable& p, const ag::Var& hr) const;
  const GeneratorConfig& config() const { return cfg_; }
  static std::int64_t expected_parameter_count(const GeneratorConfig& cfg);

 private:
  GeneratorConfig cfg_;
  std::string prefix_;
};

class Critic {
 public:
  explicit Critic(CriticConfig cfg, std::string prefix);
  std::vector<ParamSpec> parameters() const;
  /// One score per batch item, shape (B).
  ag::Var forward(const VarTable& p, const ag::Var& image) const;
  const CriticConfig& config() const { return cfg_; }

 private:
  CriticConfig cfg_;
  std::string prefix_;
};

class Detector {
 public:
  explicit Detector(DetectorConfig cfg, std::string prefix = "detector");
  std::vector<ParamSpec> parameters() const;
  /// One raw grid per stride level: (B, A*(5+n_classes), H/stride, W/stride).
  std::vector<ag::Var> forward(const VarTable& p, const ag::Var& image) const;
  const DetectorConfig& config() const { return cfg_; }

 private:
  DetectorConfig cfg_;
  std::string prefix_;
};

using AnchorSet = std::vector<std::vector<std::array<double, 2>>>;  // per level, (w, h) in pixels

struct AdamState {
  ParamTable m;
  ParamTable v;
};

/// Everything a checkpoint restores.
struct ModelState {
  GeneratorConfig generator;
  CriticConfig critic_hr;
  CriticConfig critic_lr;
  DetectorConfig detector;
  AnchorSet anchors;
  ParamTable params;
  AdamState adam;
  std::int64_t step = 0;
  int epoch = 0;
  std::string rng_state;

  bool operator==(const ModelState& other) const;
};

struct Networks {
  HrGenerator hr_gen;
  LrGenerator lr_gen;
  Critic critic_hr;
  Critic critic_lr;
  Detector detector;

  explicit Networks(const ModelState& state);
  std::vector<ParamSpec> all_parameters() const;
};

/// Builds the networks for the given configs and draws initial parameters.
ModelState create_model_state(const GeneratorConfig& gen, const CriticConfig& critic_hr, const CriticConfig& critic_lr,
                              const DetectorConfig& det, const AnchorSet& anchors, std::uint64_t seed);

nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const CriticConfig& c);
nlohmann::json to_json(const DetectorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
CriticConfig critic_config_from_json(const nlohmann::json& j);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

/// Single-file archive: magic, JSON metadata (configs, anchors, step, rng,
/// array index, plus caller-supplied `extra`), then raw little-endian doubles
/// in key order. Save -> load -> save is byte-identical.
void save_checkpoint(const ModelState& state, const nlohmann::json& extra, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace mcgr
