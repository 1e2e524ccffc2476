// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "mcgr/error.hpp"

namespace mcgr {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  require(j.is_object(), where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    require(known, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string step_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06lld.ckpt", static_cast<long long>(step));
  return buf;
}

std::string serialize_rng(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 restore_rng(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw FormatError("corrupt random generator state");
  return rng;
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be at least 1");
  require(batch_size >= 1, "batch_size must be positive");
  require(crop_size >= 1, "crop_size must be positive");
  require(scale == 2 || scale == 4, "scale must be 2 or 4");
  require(generator.scale == scale, "generator scale must equal the training scale");
  for (double lr : {lr_generator, lr_critic, lr_detector})
    require(std::isfinite(lr) && lr >= 0, "learning rates must be finite and non-negative");
  require(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1, "Adam betas must lie in [0, 1)");
  require(adam_eps > 0, "adam_eps must be positive");
  require(lr_halve_every >= 0, "lr_halve_every must be non-negative");
  require(critic_steps >= 1 && critic_steps <= 5, "critic_steps must lie in [1, 5]");
  weights.validate();
  require(std::isfinite(adv_weight) && adv_weight >= 0, "adv_weight must be finite and non-negative");
  require(std::isfinite(obj_weight) && obj_weight >= 0 && std::isfinite(cls_weight) && cls_weight >= 0,
          "obj_weight and cls_weight must be finite and non-negative");
  require(detector_warmup_epochs >= 0, "detector_warmup_epochs must be non-negative");
  require(max_steps >= 0, "max_steps must be non-negative");
  require(checkpoint_every >= 1 && eval_every >= 1, "checkpoint/eval cadence must be positive");
  require(!eval_ious.empty(), "at least one evaluation IoU threshold required");
  for (double t : eval_ious) require(t > 0 && t <= 1, "IoU thresholds must lie in (0, 1]");
  require(conf_threshold >= 0 && conf_threshold <= 1, "conf_threshold must lie in [0, 1]");
  require(nms_iou > 0 && nms_iou <= 1, "nms_iou must lie in (0, 1]");
  generator.validate();
  require(critic_width >= 1 && critic_stages >= 1, "critic width and stages must be positive");
  detector.validate();
  const int hr_crop = crop_size * scale;
  for (int s : detector.strides)
    require(hr_crop % s == 0, "HR crop " + std::to_string(hr_crop) + " not divisible by detector stride " +
                                  std::to_string(s));
  require(crop_size % (1 << critic_stages) == 0,
          "crop_size must be divisible by 2^critic_stages for the LR critic");
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"crop_size", c.crop_size},
          {"scale", c.scale},
          {"lr_generator", c.lr_generator},
          {"lr_critic", c.lr_critic},
          {"lr_detector", c.lr_detector},
          {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},
          {"adam_eps", c.adam_eps},
          {"lr_halve_every", c.lr_halve_every},
          {"critic_steps", c.critic_steps},
          {"seed", c.seed},
          {"weights",
           {{"mu1", c.weights.mu1}, {"mu2", c.weights.mu2}, {"mu3", c.weights.mu3},
            {"lambda_gp", c.weights.lambda_gp}}},
          {"adv_weight", c.adv_weight},
          {"obj_weight", c.obj_weight},
          {"cls_weight", c.cls_weight},
          {"reduction", c.reduction == Reduction::element_mean ? "element_mean" : "sample_sum"},
          {"flips", c.flips},
          {"detector_warmup_epochs", c.detector_warmup_epochs},
          {"max_steps", c.max_steps},
          {"checkpoint_every", c.checkpoint_every},
          {"eval_every", c.eval_every},
          {"eval_ious", c.eval_ious},
          {"conf_threshold", c.conf_threshold},
          {"nms_iou", c.nms_iou},
          {"generator",
           {{"n_rfa_blocks", c.generator.n_rfa_blocks},
            {"width", c.generator.width},
            {"kernel", c.generator.kernel},
            {"units_per_block", c.generator.units_per_block},
            {"channels", c.generator.channels},
            {"resample_skip", c.generator.resample_skip}}},
          {"critic", {{"width", c.critic_width}, {"stages", c.critic_stages}}},
          {"detector",
           {{"n_classes", c.detector.n_classes},
            {"strides", c.detector.strides},
            {"anchors_per_level", c.detector.anchors_per_level},
            {"width", c.detector.width}}}};
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"epochs", "batch_size", "crop_size", "scale", "lr_generator", "lr_critic", "lr_detector",
                  "adam_beta1", "adam_beta2", "adam_eps", "lr_halve_every", "critic_steps", "seed", "weights",
                  "adv_weight", "obj_weight", "cls_weight", "reduction", "flips", "detector_warmup_epochs", "max_steps", "checkpoint_every",
                  "eval_every", "eval_ious", "conf_threshold", "nms_iou", "generator", "critic", "detector"},
                 "training config");
  TrainConfig c;
  try {
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "crop_size", c.crop_size);
    read_opt(j, "scale", c.scale);
    read_opt(j, "lr_generator", c.lr_generator);
    read_opt(j, "lr_critic", c.lr_critic);
    read_opt(j, "lr_detector", c.lr_detector);
    read_opt(j, "adam_beta1", c.adam_beta1);
    read_opt(j, "adam_beta2", c.adam_beta2);
    read_opt(j, "adam_eps", c.adam_eps);
    read_opt(j, "lr_halve_every", c.lr_halve_every);
    read_opt(j, "critic_steps", c.critic_steps);
    read_opt(j, "seed", c.seed);
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      reject_unknown(w, {"mu1", "mu2", "mu3", "lambda_gp"}, "weights");
      read_opt(w, "mu1", c.weights.mu1);
      read_opt(w, "mu2", c.weights.mu2);
      read_opt(w, "mu3", c.weights.mu3);
      read_opt(w, "lambda_gp", c.weights.lambda_gp);
    }
    read_opt(j, "adv_weight", c.adv_weight);
    read_opt(j, "obj_weight", c.obj_weight);
    read_opt(j, "cls_weight", c.cls_weight);
    if (j.contains("reduction")) {
      const std::string r = j.at("reduction");
      require(r == "element_mean" || r == "sample_sum", "reduction must be element_mean or sample_sum");
      c.reduction = r == "element_mean" ? Reduction::element_mean : Reduction::sample_sum;
    }
    read_opt(j, "flips", c.flips);
    read_opt(j, "detector_warmup_epochs", c.detector_warmup_epochs);
    read_opt(j, "max_steps", c.max_steps);
    read_opt(j, "checkpoint_every", c.checkpoint_every);
    read_opt(j, "eval_every", c.eval_every);
    read_opt(j, "eval_ious", c.eval_ious);
    read_opt(j, "conf_threshold", c.conf_threshold);
    read_opt(j, "nms_iou", c.nms_iou);
    if (j.contains("generator")) {
      const json& g = j.at("generator");
      reject_unknown(g, {"n_rfa_blocks", "width", "kernel", "units_per_block", "channels", "resample_skip"},
                     "generator");
      read_opt(g, "n_rfa_blocks", c.generator.n_rfa_blocks);
      read_opt(g, "width", c.generator.width);
      read_opt(g, "kernel", c.generator.kernel);
      read_opt(g, "units_per_block", c.generator.units_per_block);
      read_opt(g, "channels", c.generator.channels);
      read_opt(g, "resample_skip", c.generator.resample_skip);
    }
    if (j.contains("critic")) {
      const json& cr = j.at("critic");
      reject_unknown(cr, {"width", "stages"}, "critic");
      read_opt(cr, "width", c.critic_width);
      read_opt(cr, "stages", c.critic_stages);
    }
    if (j.contains("detector")) {
      const json& d = j.at("detector");
      reject_unknown(d, {"n_classes", "strides", "anchors_per_level", "width"}, "detector");
      read_opt(d, "n_classes", c.detector.n_classes);
      read_opt(d, "strides", c.detector.strides);
      read_opt(d, "anchors_per_level", c.detector.anchors_per_level);
      read_opt(d, "width", c.detector.width);
    }
  } catch (const json::exception& e) {
    throw ContractError(std::string("training config: ") + e.what());
  }
  c.generator.scale = c.scale;
  c.detector.channels = c.generator.channels;
  c.validate();
  return c;
}

std::pair<CriticConfig, CriticConfig> critic_configs(const TrainConfig& c) {
  CriticConfig hr;
  hr.base_width = c.critic_width;
  hr.stages = c.critic_stages;
  hr.channels = c.generator.channels;
  hr.height = hr.width = c.crop_size * c.scale;
  CriticConfig lr = hr;
  lr.height = lr.width = c.crop_size;
  return {hr, lr};
}

// ------------------------------------------------------------------ steps

void adam_update(ParamTable& params, AdamState& adam, const std::map<std::string, Tensor>& grads, double lr,
                 const TrainConfig& cfg, std::int64_t t) {
  require(t >= 1, "Adam step count must be positive");
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    Tensor& m = adam.m.at(name);
    Tensor& v = adam.v.at(name);
    require(g.shape() == p.shape(), "gradient shape mismatch for " + name);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_eps);
    }
  }
}

namespace {

std::map<std::string, Tensor> gradients_of(const ag::Var& loss, const VarTable& table) {
  std::vector<std::string> names;
  std::vector<ag::Var> leaves;
  for (const auto& [name, v] : table)
    if (v.requires_grad()) {
      names.push_back(name);
      leaves.push_back(v);
    }
  auto grads = ag::grad(loss, leaves);
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!all_finite(grads[i].value())) throw NumericError("non-finite gradient for " + names[i]);
    out.emplace(names[i], grads[i].value());
  }
  return out;
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}

std::map<std::string, Tensor> subset(const std::map<std::string, Tensor>& grads, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& [k, v] : grads)
    if (k.compare(0, prefix.size(), prefix) == 0) out.emplace(k, v);
  return out;
}

}  // namespace

LossReport train_step(ModelState& state, const Batch& batch, const TrainConfig& cfg, std::mt19937_64& rng,
                      const StepOptions& opt) {
  const Shape& ls = batch.lr.shape();
  const Shape& hs = batch.hr.shape();
  require(ls.size() == 4 && hs.size() == 4, "train_step: batch tensors must be (B, C, H, W)");
  require(ls[0] == hs[0] && ls[1] == hs[1] && hs[2] == ls[2] * cfg.scale && hs[3] == ls[3] * cfg.scale,
          "train_step: LR " + to_string(ls) + " and HR " + to_string(hs) + " are not a scale-" +
              std::to_string(cfg.scale) + " pair");
  require(static_cast<std::int64_t>(batch.annotations.size()) == ls[0],
          "train_step: one annotation list per batch item required");
  require(ls[1] == state.generator.channels, "train_step: channel count mismatch");
  for (const auto& [name, p] : state.params)
    if (!all_finite(p)) throw NumericError("train_step: non-finite parameter " + name + " in input state");

  ModelState next = state;
  std::mt19937_64 local = rng;
  const Networks nets(next);
  const ag::Var lr_v(batch.lr);
  const ag::Var hr_v(batch.hr);
  LossReport rep;

  Tensor sr_fixed, lr_fake_fixed;
  {
    ag::NoGradGuard no_grad;
    const VarTable g = make_leaves(next.params, false, {"hr_gen.", "lr_gen."});
    sr_fixed = nets.hr_gen.forward(g, lr_v).value();
    lr_fake_fixed = nets.lr_gen.forward(g, hr_v).value();
  }

  for (int i = 0; i < cfg.critic_steps; ++i) {
    const VarTable cp = make_leaves(next.params, true, {"critic_hr.", "critic_lr."});
    const ImageMap critic_hr = [&](const ag::Var& x) { return nets.critic_hr.forward(cp, x); };
    const ImageMap critic_lr = [&](const ag::Var& x) { return nets.critic_lr.forward(cp, x); };
    ag::Var gp_hr = gradient_penalty(critic_hr, batch.hr, sr_fixed, cfg.weights.lambda_gp, local);
    ag::Var gp_lr = gradient_penalty(critic_lr, batch.lr, lr_fake_fixed, cfg.weights.lambda_gp, local);
    ag::Var loss_hr = critic_loss(critic_hr(hr_v), critic_hr(ag::Var(sr_fixed)), gp_hr);
    ag::Var loss_lr = critic_loss(critic_lr(lr_v), critic_lr(ag::Var(lr_fake_fixed)), gp_lr);
    ag::Var loss = ag::add(loss_hr, loss_lr);
    rep.l_critic = loss.value().item();
    rep.l_gp = gp_hr.value().item() + gp_lr.value().item();
    require_finite(rep.l_critic, "critic loss");
    auto grads = gradients_of(ag::scale(loss, cfg.weights.mu2), cp);
    adam_update(next.params, next.adam, grads, cfg.lr_critic * opt.lr_scale, cfg,
                next.step * cfg.critic_steps + i + 1);
  }

  std::vector<std::string> trainable{"hr_gen.", "lr_gen."};
  std::vector<std::string> frozen{"critic_hr.", "critic_lr."};
  (opt.detector_active ? trainable : frozen).push_back("detector.");
  VarTable gp = make_leaves(next.params, true, trainable);
  gp.merge(make_leaves(next.params, false, frozen));
  const ImageMap hr_gen = [&](const ag::Var& x) { return nets.hr_gen.forward(gp, x); };
  const ImageMap lr_gen = [&](const ag::Var& x) { return nets.lr_gen.forward(gp, x); };

  CyclicTerms cyc = cyclic_loss(lr_v, hr_v, hr_gen, lr_gen, cfg.reduction);
  ag::Var l1 = generator_l1(cyc.sr, hr_v, cfg.reduction);
  ag::Var adv = ag::add(generator_adversarial(nets.critic_hr.forward(gp, cyc.sr)),
                        generator_adversarial(nets.critic_lr.forward(gp, cyc.lr_fake)));
  ag::Var objective = ag::add(ag::add(ag::scale(l1, cfg.weights.mu1), cyc.total), ag::scale(adv, cfg.adv_weight));

  const AnchorGrid grid = build_anchor_grid(static_cast<int>(hs[3]), static_cast<int>(hs[2]),
                                            next.detector.strides, next.anchors);
  DetectionLoss dl;
  if (opt.detector_active) {
    dl = detection_loss(nets.detector.forward(gp, cyc.sr), batch.annotations, grid, next.detector.n_classes);
    objective = ag::add(objective, ag::scale(ag::add(ag::add(dl.bbox, ag::scale(dl.objectness, cfg.obj_weight)),
                                                               ag::scale(dl.classification, cfg.cls_weight)),
                                             cfg.weights.mu3));
  } else {
    ag::NoGradGuard no_grad;
    dl = detection_loss(nets.detector.forward(gp, cyc.sr.detach()), batch.annotations, grid,
                        next.detector.n_classes);
  }

  rep.l_cyclic = cyc.total.value().item();
  rep.l_gen_l1 = l1.value().item();
  rep.l_adv = adv.value().item();
  rep.l_bbox = dl.bbox.value().item();
  rep.l_obj = dl.objectness.value().item();
  rep.l_cls = dl.classification.value().item();
  rep.l_total = total_loss(rep.l_gen_l1, rep.l_critic, rep.l_bbox, cfg.weights);
  require_finite(objective.value().item(), "generator objective");
  if (!rep.all_finite()) throw NumericError("train_step: non-finite loss term");

  auto grads = gradients_of(objective, gp);
  const std::int64_t t = next.step + 1;
  for (const char* prefix : {"hr_gen.", "lr_gen."})
    adam_update(next.params, next.adam, subset(grads, prefix), cfg.lr_generator * opt.lr_scale, cfg, t);
  if (opt.detector_active)
    adam_update(next.params, next.adam, subset(grads, "detector."), cfg.lr_detector * opt.lr_scale, cfg, t);

  for (const auto& [name, p] : next.params)
    if (!all_finite(p)) throw NumericError("train_step: update made " + name + " non-finite");
  next.step += 1;
  state = std::move(next);
  rng = local;
  return rep;
}

// ------------------------------------------------------------------- data

namespace {

std::filesystem::path resolve(const std::filesystem::path& root, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : root / path;
}

struct CroppedEntry {
  ImageArray hr;
  ManifestEntry entry;  // annotations and size relative to `hr`
};

CroppedEntry load_cropped(const ManifestEntry& e, const std::filesystem::path& root, int multiple) {
  ImageArray full = load_png(resolve(root, e.image_path));
  if (full.width() != e.width || full.height() != e.height)
    throw FormatError("image " + e.image_path + " is " + std::to_string(full.width()) + "x" +
                      std::to_string(full.height()) + " but the manifest says " + std::to_string(e.width) + "x" +
                      std::to_string(e.height));
  CroppedEntry out;
  out.hr = full.center_crop_to_multiple(multiple);
  const int top = (full.height() - out.hr.height()) / 2;
  const int left = (full.width() - out.hr.width()) / 2;
  out.entry = e;
  out.entry.width = out.hr.width();
  out.entry.height = out.hr.height();
  out.entry.annotations =
      annotations_in_window(e.annotations, full.width(), full.height(), top, left, out.hr.height(), out.hr.width());
  return out;
}

}  // namespace

std::vector<TrainingImage> load_training_images(const DatasetManifest& manifest, Split split,
                                                const std::filesystem::path& data_root, int scale) {
  std::vector<TrainingImage> out;
  for (const ManifestEntry* e : manifest.split_entries(split)) {
    CroppedEntry c = load_cropped(*e, data_root, scale);
    TrainingImage img;
    img.id = e->image_path;
    img.lr = synthesize_lr(c.hr, scale);
    img.hr = std::move(c.hr);
    img.annotations = std::move(c.entry.annotations);
    out.push_back(std::move(img));
  }
  return out;
}

Batch sample_batch(const std::vector<TrainingImage>& images, const std::vector<std::size_t>& indices,
                   const TrainConfig& cfg, std::mt19937_64& rng) {
  require(!indices.empty(), "sample_batch: empty batch");
  const int c = cfg.crop_size;
  const int s = cfg.scale;
  std::vector<ImageArray> lrs, hrs;
  Batch b;
  for (std::size_t idx : indices) {
    const TrainingImage& img = images.at(idx);
    require(img.lr.height() >= c && img.lr.width() >= c,
            "image " + img.id + " is smaller than the LR crop size " + std::to_string(c));
    const int top = std::uniform_int_distribution<int>(0, img.lr.height() - c)(rng);
    const int left = std::uniform_int_distribution<int>(0, img.lr.width() - c)(rng);
    bool flip_h = false, flip_v = false;
    if (cfg.flips) {
      flip_h = (rng() & 1) != 0;
      flip_v = (rng() & 1) != 0;
    }
    ImageArray lr = img.lr.crop(top, left, c, c).flipped(flip_h, flip_v);
    ImageArray hr = img.hr.crop(top * s, left * s, c * s, c * s).flipped(flip_h, flip_v);
    auto ann = annotations_in_window(img.annotations, img.hr.width(), img.hr.height(), top * s, left * s, c * s,
                                     c * s);
    for (auto& a : ann) {
      if (flip_h) a.cx = 1.0 - a.cx;
      if (flip_v) a.cy = 1.0 - a.cy;
    }
    lrs.push_back(std::move(lr));
    hrs.push_back(std::move(hr));
    b.annotations.push_back(std::move(ann));
  }
  std::vector<const ImageArray*> lp, hp;
  for (std::size_t i = 0; i < lrs.size(); ++i) {
    lp.push_back(&lrs[i]);
    hp.push_back(&hrs[i]);
  }
  b.lr = to_tensor(lp);
  b.hr = to_tensor(hp);
  return b;
}

AnchorSet fit_anchors(const std::vector<TrainingImage>& images, const DetectorConfig& det) {
  std::vector<std::array<double, 2>> sizes;
  for (const auto& img : images)
    for (const auto& a : img.annotations) sizes.push_back({a.w * img.hr.width(), a.h * img.hr.height()});
  return kmeans_anchors(sizes, det.strides, det.anchors_per_level);
}

ModelState initial_state(const TrainConfig& cfg, const AnchorSet& anchors) {
  cfg.validate();
  auto [chr, clr] = critic_configs(cfg);
  return create_model_state(cfg.generator, chr, clr, cfg.detector, anchors, cfg.seed);
}

// ------------------------------------------------------------- evaluation

ImageArray super_resolve(const ModelState& state, const ImageArray& lr) {
  ag::NoGradGuard no_grad;
  const HrGenerator gen(state.generator);
  const VarTable p = make_leaves(state.params, false, {"hr_gen."});
  return from_tensor(gen.forward(p, ag::Var(to_tensor(lr))).value(), 0, lr.peak());
}

std::vector<DetectionBox> detect(const ModelState& state, const ImageArray& image, double conf_threshold,
                                 double nms_iou) {
  ag::NoGradGuard no_grad;
  const Detector det(state.detector);
  const VarTable p = make_leaves(state.params, false, {"detector."});
  const AnchorGrid grid = build_anchor_grid(image.width(), image.height(), state.detector.strides, state.anchors);
  std::vector<Tensor> raw;
  for (const auto& v : det.forward(p, ag::Var(to_tensor(image)))) raw.push_back(v.value());
  return nms(decode_predictions(raw, grid, state.detector.n_classes, conf_threshold), nms_iou);
}

MetricsReport evaluate_with(const DatasetManifest& manifest, const std::filesystem::path& data_root,
                            const SuperResolveFn& super_resolve_fn, const DetectFn& detect_fn,
                            const EvalOptions& opt) {
  require(opt.scale == 2 || opt.scale == 4, "evaluation scale must be 2 or 4");
  require(!opt.iou_thresholds.empty(), "evaluation needs at least one IoU threshold");
  const auto entries = manifest.split_entries(opt.split);
  require(!entries.empty(), "evaluation split '" + std::string(to_string(opt.split)) + "' is empty");
  const int multiple = std::lcm(opt.scale, 16);

  MetricsReport r;
  r.split = std::string(to_string(opt.split));
  r.scale = opt.scale;
  r.images = entries.size();
  r.classes = manifest.scheme.classes;
  std::vector<GroundTruth> gts;
  std::vector<Prediction> preds_sr, preds_hr;
  std::set<std::string> ids;
  double ms = 0;
  for (const ManifestEntry* e : entries) {
    CroppedEntry c = load_cropped(*e, data_root, multiple);
    const ImageArray lr = synthesize_lr(c.hr, opt.scale);
    const auto t0 = std::chrono::steady_clock::now();
    const ImageArray sr = super_resolve_fn(lr, c.entry);
    require(sr.height() == c.hr.height() && sr.width() == c.hr.width() && sr.channels() == c.hr.channels(),
            "super-resolved image does not match the HR geometry");
    const auto boxes = detect_fn(sr, c.entry);
    ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    const IqaResult q = image_quality(sr, c.hr);
    const IqaResult qb = image_quality(resize_bicubic(lr, c.hr.height(), c.hr.width()), c.hr);
    r.sr.mse += q.mse;
    r.sr.psnr += q.psnr;
    r.sr.ssim += q.ssim;
    r.bicubic.mse += qb.mse;
    r.bicubic.psnr += qb.psnr;
    r.bicubic.ssim += qb.ssim;

    const std::string& id = e->image_path;
    ids.insert(id);
    for (const auto& a : c.entry.annotations)
      gts.push_back({id, a.class_id, yolo_to_pixel(a, c.hr.width(), c.hr.height())});
    for (const auto& b : boxes) preds_sr.push_back({id, b.class_id, b.confidence, b.box});
    if (opt.detect_on_hr)
      for (const auto& b : detect_fn(c.hr, c.entry)) preds_hr.push_back({id, b.class_id, b.confidence, b.box});
  }
  const double n = static_cast<double>(entries.size());
  for (IqaResult* q : {&r.sr, &r.bicubic}) {
    q->mse /= n;
    q->psnr /= n;
    q->ssim /= n;
  }
  r.ms_per_image = ms / n;
  for (double t : opt.iou_thresholds) {
    DetectionSummary d;
    d.iou_threshold = t;
    d.sr = evaluate_detections(preds_sr, gts, t, &ids);
    if (opt.detect_on_hr) d.hr = evaluate_detections(preds_hr, gts, t, &ids);
    r.detection.push_back(std::move(d));
  }
  return r;
}

MetricsReport evaluate(const ModelState& state, const DatasetManifest& manifest,
                       const std::filesystem::path& data_root, const EvalOptions& opt) {
  require(opt.scale == state.generator.scale,
          "model was trained for scale " + std::to_string(state.generator.scale) + ", not " +
              std::to_string(opt.scale));
  return evaluate_with(
      manifest, data_root, [&](const ImageArray& lr, const ManifestEntry&) { return super_resolve(state, lr); },
      [&](const ImageArray& img, const ManifestEntry&) {
        return detect(state, img, opt.conf_threshold, opt.nms_iou);
      },
      opt);
}

namespace {

json iqa_json(const IqaResult& q) { return {{"MSE", q.mse}, {"PSNR", q.psnr}, {"SSIM", q.ssim}}; }

json eval_json(const DetectionEval& e, const std::vector<std::string>& classes) {
  json ap = json::object();
  json curves = json::object();
  auto name = [&](int c) {
    return c >= 0 && c < static_cast<int>(classes.size()) ? classes[static_cast<std::size_t>(c)]
                                                          : std::to_string(c);
  };
  for (const auto& [c, v] : e.ap) ap[name(c)] = v;
  for (const auto& [c, pts] : e.curves) {
    json arr = json::array();
    for (const auto& p : pts) arr.push_back({p.recall, p.precision});
    curves[name(c)] = arr;
  }
  return {{"mAP", e.map}, {"ap", ap}, {"tp", e.tp}, {"fp", e.fp}, {"fn", e.fn}, {"pr_curves", curves}};
}

}  // namespace

json MetricsReport::to_json() const {
  const DetectionSummary& primary = detection.front();
  json t5 = {{"mAP_HR", nullptr}, {"mAP_SF2", nullptr}, {"mAP_SF4", nullptr}, {"ms_per_image", ms_per_image}};
  if (primary.hr) t5["mAP_HR"] = primary.hr->map;
  t5[scale == 2 ? "mAP_SF2" : "mAP_SF4"] = primary.sr.map;
  json det = json::array();
  for (const auto& d : detection) {
    json item = {{"iou_threshold", d.iou_threshold}, {"sr", eval_json(d.sr, classes)}};
    item["hr"] = d.hr ? eval_json(*d.hr, classes) : json(nullptr);
    det.push_back(std::move(item));
  }
  return {{"split", split},
          {"scale", scale},
          {"images", images},
          {"classes", classes},
          {"iou_threshold", primary.iou_threshold},
          {"table4", iqa_json(sr)},
          {"table5", t5},
          {"baseline", {{"bicubic", iqa_json(bicubic)}}},
          {"detection", det}};
}

// ------------------------------------------------------------------- runs

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("failed writing " + p.string());
}

// Keeps the records of an existing log up to and including `step`.
void truncate_log(const std::filesystem::path& p, std::int64_t step) {
  if (!std::filesystem::exists(p)) return;
  std::ifstream in(p, std::ios::binary);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.contains("step")) break;
    if (rec.at("step").get<std::int64_t>() > step) break;
    kept += line + "\n";
  }
  in.close();
  write_text(p, kept);
}

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const DatasetManifest& manifest, const std::filesystem::path& data_root,
                  const std::filesystem::path& run_dir, const TrainOptions& opt) {
  TrainConfig cfg = cfg_in;
  cfg.detector.n_classes = static_cast<int>(manifest.scheme.classes.size());
  cfg.validate();
  manifest.validate();
  require(!manifest.split_entries(Split::train).empty(), "manifest has no training entries");
  require(!manifest.split_entries(Split::val).empty(), "manifest has no validation entries");

  // Every image is read up front so unreadable data fails before any step.
  const std::vector<TrainingImage> images = load_training_images(manifest, Split::train, data_root, cfg.scale);
  for (const ManifestEntry* e : manifest.split_entries(Split::val)) load_cropped(*e, data_root, std::lcm(cfg.scale, 16));

  const json cfg_json = to_json(cfg);
  TrainResult result;
  if (opt.resume_from) {
    json extra;
    result.state = load_checkpoint(*opt.resume_from, &extra);
    require(extra.value("config", json()) == cfg_json, "checkpoint was written under a different training config");
    result.best_map = extra.value("best_map", -1.0);
  } else {
    result.state = initial_state(cfg, fit_anchors(images, cfg.detector));
  }
  ModelState& state = result.state;

  std::filesystem::create_directories(run_dir / "checkpoints");
  std::filesystem::create_directories(run_dir / "eval");
  write_text(run_dir / "config.json", cfg_json.dump(2) + "\n");
  const auto log_path = run_dir / "train_log.ndjson";
  const auto timing_path = run_dir / "timing.ndjson";
  if (opt.resume_from) {
    truncate_log(log_path, state.step);
    truncate_log(timing_path, state.step);
  } else {
    write_text(log_path, "");
    write_text(timing_path, "");
  }
  std::ofstream log(log_path, std::ios::binary | std::ios::app);
  std::ofstream timing(timing_path, std::ios::binary | std::ios::app);
  if (!log || !timing) throw IoError("cannot open run logs in " + run_dir.string());

  std::mt19937_64 rng = restore_rng(state.rng_state);
  auto save = [&](const std::filesystem::path& p) {
    state.rng_state = serialize_rng(rng);
    save_checkpoint(state, {{"config", cfg_json}, {"best_map", result.best_map}}, p);
  };

  const std::size_t n = images.size();
  const auto b = static_cast<std::size_t>(cfg.batch_size);
  bool out_of_steps = false;
  for (int epoch = state.epoch; epoch < cfg.epochs && !out_of_steps; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
    const double lr_scale = cfg.lr_halve_every ? std::pow(0.5, epoch / cfg.lr_halve_every) : 1.0;
    const StepOptions step_opt{epoch >= cfg.detector_warmup_epochs, lr_scale};

    for (std::size_t start = 0; start < n; start += b) {
      if (cfg.max_steps && state.step >= cfg.max_steps) {
        out_of_steps = true;
        break;
      }
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + b)));
      const Batch batch = sample_batch(images, idx, cfg, rng);
      const auto t0 = std::chrono::steady_clock::now();
      LossReport rep;
      try {
        rep = train_step(state, batch, cfg, rng, step_opt);
      } catch (const NumericError& e) {
        result.halted = true;
        result.halt_reason = e.what();
        save(run_dir / "checkpoints" / ("halt_" + step_name(state.step)));
        json rec = {{"event", "halt"}, {"step", state.step + 1}, {"epoch", epoch}, {"reason", e.what()}};
        log << rec.dump() << "\n";
        if (opt.on_record) opt.on_record(rec);
        result.steps = state.step;
        return result;
      }
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      json rec = {{"step", state.step},
                  {"epoch", epoch},
                  {"losses", to_json(rep)},
                  {"lr",
                   {{"generator", cfg.lr_generator * lr_scale},
                    {"critic", cfg.lr_critic * lr_scale},
                    {"detector", step_opt.detector_active ? cfg.lr_detector * lr_scale : 0.0}}}};
      log << rec.dump() << "\n";
      timing << json{{"step", state.step}, {"ms", ms}}.dump() << "\n";
      log.flush();
      timing.flush();
      if (opt.on_record) opt.on_record(rec);
    }
    state.epoch = epoch + 1;
    const bool last = state.epoch == cfg.epochs || out_of_steps;

    if (state.epoch % cfg.eval_every == 0 || last) {
      EvalOptions eo;
      eo.split = Split::val;
      eo.scale = cfg.scale;
      eo.iou_thresholds = cfg.eval_ious;
      eo.conf_threshold = cfg.conf_threshold;
      eo.nms_iou = cfg.nms_iou;
      const MetricsReport report = evaluate(state, manifest, data_root, eo);
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.json", state.epoch);
      write_text(run_dir / "eval" / name, report.to_json().dump(2) + "\n");
      const double map = report.detection.front().sr.map;
      json rec = {{"event", "eval"},   {"epoch", state.epoch},           {"step", state.step},
                  {"mAP", map},        {"PSNR", report.sr.psnr},        {"SSIM", report.sr.ssim},
                  {"PSNR_bicubic", report.bicubic.psnr}, {"SSIM_bicubic", report.bicubic.ssim}};
      if (opt.on_record) opt.on_record(rec);
      if (map > result.best_map) {
        result.best_map = map;
        save(run_dir / "checkpoints" / "best.ckpt");
      }
    }
    if (state.epoch % cfg.checkpoint_every == 0 || last) save(run_dir / "checkpoints" / step_name(state.step));
    if (opt.stop_after_epoch && state.epoch >= *opt.stop_after_epoch) break;
  }
  state.rng_state = serialize_rng(rng);
  result.steps = state.step;
  return result;
}

}  // namespace mcgr
