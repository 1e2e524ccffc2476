// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

// Joint optimisation of the cyclic generators, both critics and the detector,
// plus corpus evaluation and the run directory.
//
// Run directory:
//   config.json           resolved training config
//   train_log.ndjson      one record per step (deterministic)
//   timing.ndjson         wall-clock per step
//   checkpoints/          step_XXXXXX.ckpt, best.ckpt
//   eval/                 epoch_XXX.json metrics reports

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcgr/data.hpp"
#include "mcgr/detection.hpp"
#include "mcgr/losses.hpp"
#include "mcgr/metrics.hpp"
#include "mcgr/models.hpp"

namespace mcgr {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 4;
  int crop_size = 64;  // LR pixels
  int scale = 4;
  double lr_generator = 1e-4;
  double lr_critic = 1e-4;
  double lr_detector = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adam_eps = 1e-8;
  /// Halve every learning rate after this many epochs; 0 keeps them constant.
  int lr_halve_every = 0;
  int critic_steps = 1;
  std::uint64_t seed = 0;
  LossWeights weights;
  /// Weight of the generators' adversarial terms in the joint objective.
  double adv_weight = 1e-3;
  /// Weights of the detector's objectness and class terms inside the mu3 group.
  double obj_weight = 1.0;
  double cls_weight = 1.0;
  Reduction reduction = Reduction::element_mean;
  bool flips = true;
  /// Epochs trained without the detector terms before joint training.
  int detector_warmup_epochs = 0;
  /// Stop after this many steps in total; 0 means no limit.
  std::int64_t max_steps = 0;
  int checkpoint_every = 1;  // epochs
  int eval_every = 1;        // epochs
  std::vector<double> eval_ious{0.5, 0.1};
  double conf_threshold = kDefaultConfThreshold;
  double nms_iou = kDefaultNmsIou;

  GeneratorConfig generator;
  int critic_width = 32;
  int critic_stages = 4;
  /// n_classes is taken from the manifest's class scheme.
  DetectorConfig detector;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are a ContractError.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Critic configs for the HR and LR crops a config trains on.
std::pair<CriticConfig, CriticConfig> critic_configs(const TrainConfig& c);

struct Batch {
  Tensor lr;  // (B, C, h, w)
  Tensor hr;  // (B, C, s*h, s*w)
  std::vector<std::vector<AnnotationRecord>> annotations;  // relative to the HR crop
};

struct StepOptions {
  bool detector_active = true;
  double lr_scale = 1.0;
};

/// One critic phase (critic_steps updates of both critics) followed by one
/// joint generator/detector update. Throws NumericError, leaving `state`
/// untouched, if any loss, gradient or updated parameter is non-finite.
LossReport train_step(ModelState& state, const Batch& batch, const TrainConfig& cfg, std::mt19937_64& rng,
                      const StepOptions& opt = {});

/// Adam update of every parameter present in `grads`. Bias correction uses
/// the 1-based update count `t`.
void adam_update(ParamTable& params, AdamState& adam, const std::map<std::string, Tensor>& grads, double lr,
                 const TrainConfig& cfg, std::int64_t t);

/// Training images held in memory: HR cropped to a multiple of the scale and
/// its synthesized LR counterpart.
struct TrainingImage {
  std::string id;
  ImageArray hr;
  ImageArray lr;
  std::vector<AnnotationRecord> annotations;  // relative to `hr`
};

std::vector<TrainingImage> load_training_images(const DatasetManifest& manifest, Split split,
                                                const std::filesystem::path& data_root, int scale);

/// Random aligned crops (with optional flips) of the listed images.
Batch sample_batch(const std::vector<TrainingImage>& images, const std::vector<std::size_t>& indices,
                   const TrainConfig& cfg, std::mt19937_64& rng);

/// K-means anchors over the pixel sizes of the listed images' boxes.
AnchorSet fit_anchors(const std::vector<TrainingImage>& images, const DetectorConfig& det);

ModelState initial_state(const TrainConfig& cfg, const AnchorSet& anchors);

// ---------------------------------------------------------------- evaluation

using SuperResolveFn = std::function<ImageArray(const ImageArray& lr, const ManifestEntry& entry)>;
using DetectFn = std::function<std::vector<DetectionBox>(const ImageArray& image, const ManifestEntry& entry)>;

struct EvalOptions {
  Split split = Split::val;
  int scale = 4;
  std::vector<double> iou_thresholds{0.5, 0.1};
  double conf_threshold = kDefaultConfThreshold;
  double nms_iou = kDefaultNmsIou;
  /// Also run the detector on the ground-truth HR images.
  bool detect_on_hr = true;
};

struct DetectionSummary {
  double iou_threshold = 0.5;
  DetectionEval sr;
  std::optional<DetectionEval> hr;
};

struct MetricsReport {
  std::string split;
  int scale = 4;
  std::size_t images = 0;
  std::vector<std::string> classes;
  IqaResult sr;       // mean over images
  IqaResult bicubic;  // mean over images
  std::vector<DetectionSummary> detection;  // one per IoU threshold, in request order
  double ms_per_image = 0;

  /// "table4" {MSE, PSNR, SSIM}, "table5" {mAP_HR, mAP_SF2, mAP_SF4,
  /// ms_per_image} at the first IoU threshold (null for scales not
  /// evaluated), plus baseline and per-threshold detail.
  nlohmann::json to_json() const;
};

/// HR images are centre-cropped to a multiple of lcm(scale, 16); LR is
/// synthesized from the crop.
MetricsReport evaluate_with(const DatasetManifest& manifest, const std::filesystem::path& data_root,
                            const SuperResolveFn& super_resolve, const DetectFn& detect, const EvalOptions& opt);
MetricsReport evaluate(const ModelState& state, const DatasetManifest& manifest,
                       const std::filesystem::path& data_root, const EvalOptions& opt);

ImageArray super_resolve(const ModelState& state, const ImageArray& lr);
std::vector<DetectionBox> detect(const ModelState& state, const ImageArray& image, double conf_threshold,
                                 double nms_iou);

// ------------------------------------------------------------------ runs

struct TrainOptions {
  std::optional<std::filesystem::path> resume_from;
  /// Stop cleanly once this epoch has finished (as if the process died there).
  std::optional<int> stop_after_epoch;
  std::function<void(const nlohmann::json&)> on_record;
};

struct TrainResult {
  ModelState state;
  std::int64_t steps = 0;
  double best_map = -1;
  bool halted = false;
  std::string halt_reason;
};

TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest, const std::filesystem::path& data_root,
                  const std::filesystem::path& run_dir, const TrainOptions& opt = {});

}  // namespace mcgr
