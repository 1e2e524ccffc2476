// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mcgr/error.hpp"

namespace mcgr {

namespace {

void require_same_size(const ImageArray& a, const ImageArray& b, const char* what) {
  require(a.channels() == b.channels() && a.height() == b.height() && a.width() == b.width(),
          std::string(what) + ": image shapes differ");
}

std::vector<double> luma_plane(const ImageArray& img) {
  std::vector<double> out(static_cast<std::size_t>(img.height()) * img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out[static_cast<std::size_t>(y) * img.width() + x] =
          img.channels() == 3 ? 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x)
                              : img.at(0, y, x);
  return out;
}

// Valid-mode separable filter of a row-major plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int h, int w, const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int oh = h - k + 1;
  const int ow = w - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * plane[static_cast<std::size_t>(y) * w + x + t];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * rows[static_cast<std::size_t>(y + t) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace

double mse(const ImageArray& a, const ImageArray& b) {
  require_same_size(a, b, "mse");
  double acc = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data().size());
}

double psnr_from_mse(double mse_value, double peak) {
  require(mse_value >= 0 && peak > 0, "psnr: invalid mse or peak");
  if (mse_value == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse_value));
}

double psnr(const ImageArray& a, const ImageArray& b, double peak) { return psnr_from_mse(mse(a, b), peak); }

double ssim(const ImageArray& a, const ImageArray& b, double peak, const SsimOptions& opt) {
  require(a.height() == b.height() && a.width() == b.width(), "ssim: image sizes differ");
  require(a.height() >= opt.window && a.width() >= opt.window, "ssim: image smaller than the window");
  const int h = a.height();
  const int w = a.width();
  std::vector<double> taps(static_cast<std::size_t>(opt.window));
  const double centre = (opt.window - 1) / 2.0;
  for (int i = 0; i < opt.window; ++i)
    taps[static_cast<std::size_t>(i)] = std::exp(-(i - centre) * (i - centre) / (2 * opt.sigma * opt.sigma));
  const double norm = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (double& t : taps) t /= norm;

  const auto pa = luma_plane(a);
  const auto pb = luma_plane(b);
  std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    aa[i] = pa[i] * pa[i];
    bb[i] = pb[i] * pb[i];
    ab[i] = pa[i] * pb[i];
  }
  const auto mu_a = filter_valid(pa, h, w, taps);
  const auto mu_b = filter_valid(pb, h, w, taps);
  const auto e_aa = filter_valid(aa, h, w, taps);
  const auto e_bb = filter_valid(bb, h, w, taps);
  const auto e_ab = filter_valid(ab, h, w, taps);
  const double c1 = (opt.k1 * peak) * (opt.k1 * peak);
  const double c2 = (opt.k2 * peak) * (opt.k2 * peak);
  double total = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    total += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
             ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

IqaResult image_quality(const ImageArray& restored, const ImageArray& reference) {
  require_same_size(restored, reference, "image_quality");
  const ImageArray a = to_luma255(restored);
  const ImageArray b = to_luma255(reference);
  IqaResult r;
  r.mse = mse(a, b);
  r.psnr = psnr_from_mse(r.mse, 255.0);
  r.ssim = ssim(a, b, 255.0);
  return r;
}

double iou(const PixelBox& a, const PixelBox& b) {
  require(a.x_min < a.x_max && a.y_min < a.y_max && b.x_min < b.x_max && b.y_min < b.y_max, "iou: degenerate box");
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace {

struct Ranked {
  std::vector<bool> is_tp;
  std::size_t n_gt = 0;
};

Ranked rank_and_match(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, int class_id,
                      double iou_threshold, const std::set<std::string>* known_images) {
  std::set<std::string> gt_images;
  if (!known_images) {
    for (const auto& g : gts) gt_images.insert(g.image_id);
    known_images = &gt_images;
  }
  std::map<std::string, std::vector<std::size_t>> gt_by_image;
  Ranked r;
  for (std::size_t i = 0; i < gts.size(); ++i)
    if (gts[i].class_id == class_id) {
      gt_by_image[gts[i].image_id].push_back(i);
      ++r.n_gt;
    }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!known_images->contains(preds[i].image_id))
      throw ContractError("prediction references unknown image '" + preds[i].image_id + "'");
    if (preds[i].class_id == class_id) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });
  std::vector<bool> matched(gts.size(), false);
  for (std::size_t p : order) {
    const auto& pred = preds[p];
    double best = -1;
    std::size_t best_gt = 0;
    auto it = gt_by_image.find(pred.image_id);
    if (it != gt_by_image.end())
      for (std::size_t g : it->second) {
        if (matched[g]) continue;
        const double v = iou(pred.box, gts[g].box);
        if (v >= iou_threshold && v > best) {
          best = v;
          best_gt = g;
        }
      }
    if (best >= 0) matched[best_gt] = true;
    r.is_tp.push_back(best >= 0);
  }
  return r;
}

std::vector<PrPoint> curve_of(const Ranked& r) {
  std::vector<PrPoint> out;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < r.is_tp.size(); ++k) {
    if (r.is_tp[k]) ++tp;
    const double recall = r.n_gt ? static_cast<double>(tp) / static_cast<double>(r.n_gt) : 0.0;
    out.push_back({recall, static_cast<double>(tp) / static_cast<double>(k + 1)});
  }
  return out;
}

}  // namespace

std::vector<PrPoint> pr_curve(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, int class_id,
                              double iou_threshold, const std::set<std::string>* known_images) {
  return curve_of(rank_and_match(preds, gts, class_id, iou_threshold, known_images));
}

double envelope_area(const std::vector<PrPoint>& curve) {
  std::vector<double> envelope(curve.size());
  double running = 0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    envelope[i] = running;
  }
  double area = 0;
  double prev_recall = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    area += (curve[i].recall - prev_recall) * envelope[i];
    prev_recall = curve[i].recall;
  }
  return area;
}

double average_precision(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, int class_id,
                         double iou_threshold, const std::set<std::string>* known_images) {
  return envelope_area(pr_curve(preds, gts, class_id, iou_threshold, known_images));
}

DetectionEval evaluate_detections(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                                  double iou_threshold, const std::set<std::string>* known_images) {
  DetectionEval e;
  e.iou_threshold = iou_threshold;
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  std::set<int> pred_classes;
  for (const auto& p : preds) pred_classes.insert(p.class_id);
  std::set<std::string> gt_images;
  if (!known_images) {
    for (const auto& g : gts) gt_images.insert(g.image_id);
    known_images = &gt_images;
  }
  for (int c : pred_classes) {
    if (classes.contains(c)) continue;
    auto r = rank_and_match(preds, gts, c, iou_threshold, known_images);
    e.fp += r.is_tp.size();
  }
  double sum = 0;
  for (int c : classes) {
    auto r = rank_and_match(preds, gts, c, iou_threshold, known_images);
    auto curve = curve_of(r);
    const std::size_t tp = static_cast<std::size_t>(std::count(r.is_tp.begin(), r.is_tp.end(), true));
    e.tp += tp;
    e.fp += r.is_tp.size() - tp;
    e.fn += r.n_gt - tp;
    e.ap[c] = envelope_area(curve);
    e.curves[c] = std::move(curve);
    sum += e.ap[c];
  }
  e.map = classes.empty() ? 0.0 : sum / static_cast<double>(classes.size());
  return e;
}

double map_at(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts, double iou_threshold,
              const std::set<std::string>* known_images) {
  return evaluate_detections(preds, gts, iou_threshold, known_images).map;
}

}  // namespace mcgr
