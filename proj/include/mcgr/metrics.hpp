// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mcgr/data.hpp"
#include "mcgr/image.hpp"

namespace mcgr {

/// PSNR reported for identical images.
inline constexpr double kPsnrCap = 100.0;

double mse(const ImageArray& a, const ImageArray& b);
double psnr_from_mse(double mse_value, double peak);
double psnr(const ImageArray& a, const ImageArray& b, double peak);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over all fully contained Gaussian windows. Colour inputs are
/// reduced to luma first; `peak` sets C1 = (k1 peak)^2, C2 = (k2 peak)^2.
double ssim(const ImageArray& a, const ImageArray& b, double peak, const SsimOptions& opt = {});

struct IqaResult {
  double mse = 0;
  double psnr = 0;
  double ssim = 0;
};

/// Luma-channel IQA after rescaling both images to [0, 255].
IqaResult image_quality(const ImageArray& restored, const ImageArray& reference);

double iou(const PixelBox& a, const PixelBox& b);

struct GroundTruth {
  std::string image_id;
  int class_id = 0;
  PixelBox box;
};

struct Prediction {
  std::string image_id;
  int class_id = 0;
  double confidence = 0;
  PixelBox box;
};

struct PrPoint {
  double recall = 0;
  double precision = 0;
  bool operator==(const PrPoint&) const = default;
};

/// One operating point per confidence rank for `class_id`. Predictions are
/// ranked by descending confidence (stable), each greedily claiming the
/// unmatched same-image ground truth of highest IoU >= iou_threshold.
/// `known_images` defaults to the image ids present in `gts`.
std::vector<PrPoint> pr_curve(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, int class_id,
                              double iou_threshold, const std::set<std::string>* known_images = nullptr);

/// Area under the monotone precision envelope over all operating points.
double average_precision(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, int class_id,
                         double iou_threshold, const std::set<std::string>* known_images = nullptr);
double envelope_area(const std::vector<PrPoint>& curve);

struct DetectionEval {
  double iou_threshold = 0.5;
  std::map<int, double> ap;  // classes with at least one ground truth
  double map = 0;
  std::map<int, std::vector<PrPoint>> curves;
  std::size_t tp = 0, fp = 0, fn = 0;
};

DetectionEval evaluate_detections(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                                  double iou_threshold, const std::set<std::string>* known_images = nullptr);
double map_at(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, double iou_threshold,
              const std::set<std::string>* known_images = nullptr);

}  // namespace mcgr
