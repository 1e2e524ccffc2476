// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

// Anchor grids, target assignment, prediction decoding and NMS for the
// single-stage detection head. Raw grid channel layout per level:
// channel a * (5 + n_classes) + f, with f = tx, ty, tw, th, objectness,
// then class logits.

#pragma once

#include <array>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcgr/data.hpp"
#include "mcgr/models.hpp"

namespace mcgr {

inline constexpr double kDefaultConfThreshold = 0.05;
inline constexpr double kDefaultNmsIou = 0.45;

struct AnchorLevel {
  int stride = 8;
  std::vector<std::array<double, 2>> anchors;  // (w, h) pixels
  int rows = 0;
  int cols = 0;
};

struct AnchorGrid {
  int img_w = 0;
  int img_h = 0;
  std::vector<AnchorLevel> levels;
};

AnchorGrid build_anchor_grid(int img_w, int img_h, const std::vector<int>& strides, const AnchorSet& anchors);

struct Assignment {
  std::size_t gt_index = 0;
  int level = 0;
  int row = 0;
  int col = 0;
  int anchor = 0;
  int class_id = 0;
  std::array<double, 4> target{};  // normalized cx, cy, w, h
};

/// One positive per ground truth per level: the cell holding its centre and
/// the anchor of highest shape IoU (lowest index on ties). A contested
/// (level, cell, anchor) slot keeps the larger-area ground truth.
std::vector<Assignment> assign_targets(const std::vector<AnnotationRecord>& gt, const AnchorGrid& grid);

struct DetectionBox {
  int class_id = 0;
  double confidence = 0;
  PixelBox box;
};

/// Decodes batch item `batch_index` of the raw grids. Centre
/// (cell + sigmoid(t)) * stride, size anchor * exp(t) capped at the image,
/// confidence sigmoid(obj) * max sigmoid(class); boxes are clipped to the
/// image and those below conf_threshold dropped.
std::vector<DetectionBox> decode_predictions(const std::vector<Tensor>& raw, const AnchorGrid& grid,
                                             int n_classes, double conf_threshold, std::int64_t batch_index = 0);

/// Per-class greedy suppression of IoU > iou_threshold; output sorted by
/// descending confidence, ties in input order.
std::vector<DetectionBox> nms(const std::vector<DetectionBox>& boxes, double iou_threshold);

/// K-means (1 - IoU distance) over box sizes in pixels, deterministic
/// initialisation by area quantiles. Result sorted by area and dealt out to
/// levels in stride order. Falls back to stride-proportional anchors when
/// there are fewer boxes than clusters.
AnchorSet kmeans_anchors(const std::vector<std::array<double, 2>>& sizes, const std::vector<int>& strides,
                         int anchors_per_level, int iterations = 50);

struct DetectionLoss {
  ag::Var bbox;  // squared centre/size error over positive assignments
  ag::Var objectness;
  ag::Var classification;
};

/// Training terms for a batch of raw grids against per-image annotations.
/// Predicted boxes at assigned slots are (col + sigmoid(tx)) / cols, ...,
/// anchor_w * exp(tw) / img_w, ... in normalized units. bbox is summed per
/// image and averaged over the batch. Objectness is binary cross-entropy
/// averaged over every slot; classification is one-vs-all binary
/// cross-entropy averaged over positive slots and classes.
DetectionLoss detection_loss(const std::vector<ag::Var>& raw, const std::vector<std::vector<AnnotationRecord>>& gt,
                             const AnchorGrid& grid, int n_classes);

nlohmann::json to_json(const DetectionBox& d, const std::string& image_id);

}  // namespace mcgr
