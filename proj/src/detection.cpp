// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/detection.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "mcgr/error.hpp"
#include "mcgr/losses.hpp"
#include "mcgr/metrics.hpp"

namespace mcgr {

AnchorGrid build_anchor_grid(int img_w, int img_h, const std::vector<int>& strides, const AnchorSet& anchors) {
  require(img_w > 0 && img_h > 0, "anchor grid needs a positive image size");
  require(anchors.size() == strides.size(), "one anchor list per stride required");
  AnchorGrid g{img_w, img_h, {}};
  for (std::size_t l = 0; l < strides.size(); ++l) {
    const int s = strides[l];
    require(s >= 1 && img_w % s == 0 && img_h % s == 0,
            "stride " + std::to_string(s) + " does not divide " + std::to_string(img_w) + "x" + std::to_string(img_h));
    require(!anchors[l].empty(), "each level needs at least one anchor");
    for (const auto& a : anchors[l]) require(a[0] > 0 && a[1] > 0, "anchors must be positive");
    g.levels.push_back({s, anchors[l], img_h / s, img_w / s});
  }
  return g;
}

namespace {

double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<Assignment> assign_targets(const std::vector<AnnotationRecord>& gt, const AnchorGrid& grid) {
  std::map<std::tuple<int, int, int, int>, Assignment> slots;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const auto& a = gt[i];
    const double w_px = a.w * grid.img_w;
    const double h_px = a.h * grid.img_h;
    for (std::size_t l = 0; l < grid.levels.size(); ++l) {
      const auto& level = grid.levels[l];
      const int row = std::clamp(static_cast<int>(std::floor(a.cy * level.rows)), 0, level.rows - 1);
      const int col = std::clamp(static_cast<int>(std::floor(a.cx * level.cols)), 0, level.cols - 1);
      int best = 0;
      double best_iou = -1;
      for (std::size_t k = 0; k < level.anchors.size(); ++k) {
        const double v = shape_iou(w_px, h_px, level.anchors[k][0], level.anchors[k][1]);
        if (v > best_iou) {
          best_iou = v;
          best = static_cast<int>(k);
        }
      }
      Assignment as{i, static_cast<int>(l), row, col, best, a.class_id, {a.cx, a.cy, a.w, a.h}};
      auto key = std::make_tuple(static_cast<int>(l), row, col, best);
      auto [it, inserted] = slots.try_emplace(key, as);
      if (!inserted && a.w * a.h > it->second.target[2] * it->second.target[3]) it->second = as;
    }
  }
  std::vector<Assignment> out;
  for (auto& [key, as] : slots) out.push_back(as);
  std::stable_sort(out.begin(), out.end(), [](const Assignment& x, const Assignment& y) {
    return std::tie(x.gt_index, x.level) < std::tie(y.gt_index, y.level);
  });
  return out;
}

namespace {

void check_raw(const std::vector<Shape>& shapes, const AnchorGrid& grid, int n_classes, std::int64_t batch) {
  require(shapes.size() == grid.levels.size(), "raw grids do not match the anchor grid level count");
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    const auto& level = grid.levels[l];
    const std::int64_t channels = static_cast<std::int64_t>(level.anchors.size()) * (5 + n_classes);
    require(s.size() == 4 && s[0] == batch && s[1] == channels && s[2] == level.rows && s[3] == level.cols,
            "raw grid " + to_string(s) + " does not match level geometry");
  }
}

}  // namespace

std::vector<DetectionBox> decode_predictions(const std::vector<Tensor>& raw, const AnchorGrid& grid, int n_classes,
                                             double conf_threshold, std::int64_t batch_index) {
  require(!raw.empty(), "decode_predictions: no raw grids");
  std::vector<Shape> shapes;
  for (const auto& t : raw) shapes.push_back(t.shape());
  check_raw(shapes, grid, n_classes, raw[0].dim(0));
  require(batch_index >= 0 && batch_index < raw[0].dim(0), "decode_predictions: batch index out of range");
  const int per = 5 + n_classes;
  std::vector<DetectionBox> out;
  for (std::size_t l = 0; l < raw.size(); ++l) {
    const auto& level = grid.levels[l];
    const Tensor& t = raw[l];
    for (int a = 0; a < static_cast<int>(level.anchors.size()); ++a)
      for (int r = 0; r < level.rows; ++r)
        for (int c = 0; c < level.cols; ++c) {
          auto field = [&](int f) { return t.at(batch_index, a * per + f, r, c); };
          const double obj = sigmoid(field(4));
          if (obj < conf_threshold) continue;
          int best = 0;
          for (int k = 1; k < n_classes; ++k)
            if (field(5 + k) > field(5 + best)) best = k;
          const double conf = obj * sigmoid(field(5 + best));
          if (conf < conf_threshold) continue;
          const double cx = (c + sigmoid(field(0))) * level.stride;
          const double cy = (r + sigmoid(field(1))) * level.stride;
          const double w = std::min(level.anchors[static_cast<std::size_t>(a)][0] * std::exp(field(2)),
                                    static_cast<double>(grid.img_w));
          const double h = std::min(level.anchors[static_cast<std::size_t>(a)][1] * std::exp(field(3)),
                                    static_cast<double>(grid.img_h));
          PixelBox box{std::clamp(cx - w / 2, 0.0, static_cast<double>(grid.img_w)),
                       std::clamp(cy - h / 2, 0.0, static_cast<double>(grid.img_h)),
                       std::clamp(cx + w / 2, 0.0, static_cast<double>(grid.img_w)),
                       std::clamp(cy + h / 2, 0.0, static_cast<double>(grid.img_h))};
          if (!(box.x_min < box.x_max && box.y_min < box.y_max) || !std::isfinite(conf)) continue;
          out.push_back({best, conf, box});
        }
  }
  return out;
}

std::vector<DetectionBox> nms(const std::vector<DetectionBox>& boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].confidence > boxes[b].confidence; });
  std::vector<DetectionBox> kept;
  for (std::size_t i : order) {
    const auto& cand = boxes[i];
    bool suppressed = false;
    for (const auto& k : kept)
      if (k.class_id == cand.class_id && iou(k.box, cand.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

AnchorSet kmeans_anchors(const std::vector<std::array<double, 2>>& sizes, const std::vector<int>& strides,
                         int anchors_per_level, int iterations) {
  require(!strides.empty() && anchors_per_level >= 1, "kmeans_anchors: invalid level layout");
  const std::size_t k = strides.size() * static_cast<std::size_t>(anchors_per_level);
  std::vector<std::array<double, 2>> centres;
  if (sizes.size() < k) {
    for (int s : strides)
      for (int a = 0; a < anchors_per_level; ++a) {
        const double base = s * (1.0 + a);
        centres.push_back({base, base});
      }
  } else {
    auto sorted = sizes;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& x, const auto& y) { return x[0] * x[1] < y[0] * y[1]; });
    for (std::size_t i = 0; i < k; ++i) centres.push_back(sorted[(2 * i + 1) * sorted.size() / (2 * k)]);
    for (int it = 0; it < iterations; ++it) {
      std::vector<std::array<double, 3>> acc(k, {0, 0, 0});
      for (const auto& s : sizes) {
        std::size_t best = 0;
        double best_iou = -1;
        for (std::size_t c = 0; c < k; ++c) {
          const double v = shape_iou(s[0], s[1], centres[c][0], centres[c][1]);
          if (v > best_iou) {
            best_iou = v;
            best = c;
          }
        }
        acc[best][0] += s[0];
        acc[best][1] += s[1];
        acc[best][2] += 1;
      }
      bool moved = false;
      for (std::size_t c = 0; c < k; ++c) {
        if (acc[c][2] == 0) continue;
        std::array<double, 2> next{acc[c][0] / acc[c][2], acc[c][1] / acc[c][2]};
        moved = moved || next != centres[c];
        centres[c] = next;
      }
      if (!moved) break;
    }
    std::stable_sort(centres.begin(), centres.end(),
                     [](const auto& x, const auto& y) { return x[0] * x[1] < y[0] * y[1]; });
  }
  AnchorSet out(strides.size());
  for (std::size_t i = 0; i < k; ++i) out[i / static_cast<std::size_t>(anchors_per_level)].push_back(centres[i]);
  return out;
}

DetectionLoss detection_loss(const std::vector<ag::Var>& raw, const std::vector<std::vector<AnnotationRecord>>& gt,
                             const AnchorGrid& grid, int n_classes) {
  require(!raw.empty(), "detection_loss: no raw grids");
  const std::int64_t batch = raw[0].shape()[0];
  require(static_cast<std::int64_t>(gt.size()) == batch, "detection_loss: one annotation list per image required");
  std::vector<Shape> shapes;
  for (const auto& v : raw) shapes.push_back(v.shape());
  check_raw(shapes, grid, n_classes, batch);
  const int per = 5 + n_classes;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  std::int64_t slots = 0, positives = 0;

  std::vector<ag::Var> bbox_terms, obj_terms, cls_terms;
  for (std::size_t l = 0; l < raw.size(); ++l) {
    const auto& level = grid.levels[l];
    const Shape& s = shapes[l];
    Tensor obj_target(s, 0.0);
    std::vector<std::int64_t> obj_index;
    std::vector<std::int64_t> xy_index, wh_index, cls_index;
    std::vector<double> xy_offset, wh_scale;
    std::vector<double> targets;
    std::vector<int> labels;
    auto flat = [&](std::int64_t b, std::int64_t ch, std::int64_t r, std::int64_t c) {
      return ((b * s[1] + ch) * s[2] + r) * s[3] + c;
    };
    for (std::int64_t b = 0; b < batch; ++b) {
      for (const auto& as : assign_targets(gt[static_cast<std::size_t>(b)], grid)) {
        if (as.level != static_cast<int>(l)) continue;
        const std::int64_t base = as.anchor * per;
        xy_index.push_back(flat(b, base + 0, as.row, as.col));
        xy_index.push_back(flat(b, base + 1, as.row, as.col));
        xy_offset.push_back(as.col);
        xy_offset.push_back(as.row);
        wh_index.push_back(flat(b, base + 2, as.row, as.col));
        wh_index.push_back(flat(b, base + 3, as.row, as.col));
        wh_scale.push_back(level.anchors[static_cast<std::size_t>(as.anchor)][0] / grid.img_w);
        wh_scale.push_back(level.anchors[static_cast<std::size_t>(as.anchor)][1] / grid.img_h);
        targets.insert(targets.end(), as.target.begin(), as.target.end());
        obj_target[flat(b, base + 4, as.row, as.col)] = 1.0;
        for (int k = 0; k < n_classes; ++k) cls_index.push_back(flat(b, base + 5 + k, as.row, as.col));
        labels.push_back(as.class_id);
      }
    }
    // Objectness over every slot of this level.
    for (std::int64_t b = 0; b < batch; ++b)
      for (int a = 0; a < static_cast<int>(level.anchors.size()); ++a)
        for (std::int64_t r = 0; r < s[2]; ++r)
          for (std::int64_t c = 0; c < s[3]; ++c) obj_index.push_back(flat(b, a * per + 4, r, c));
    const auto n_obj = static_cast<std::int64_t>(obj_index.size());
    slots += n_obj;
    Tensor obj_t({n_obj});
    for (std::int64_t i = 0; i < n_obj; ++i) obj_t[i] = obj_target[obj_index[static_cast<std::size_t>(i)]];
    obj_terms.push_back(ag::bce_with_logits_sum(ag::gather(raw[l], obj_index), obj_t, Tensor({n_obj}, 1.0)));

    const auto k = static_cast<std::int64_t>(labels.size());
    if (k == 0) continue;
    positives += k;
    // xy: (offset + sigmoid(t)) / cells; wh: scale * exp(t). Interleaved x, y per positive.
    Tensor xy_add({2 * k}), xy_div({2 * k}), wh_mul({2 * k});
    for (std::int64_t i = 0; i < 2 * k; ++i) {
      xy_add[i] = xy_offset[static_cast<std::size_t>(i)];
      xy_div[i] = 1.0 / (i % 2 == 0 ? level.cols : level.rows);
      wh_mul[i] = wh_scale[static_cast<std::size_t>(i)];
    }
    ag::Var xy = ag::mul_const(ag::add_const(ag::sigmoid(ag::gather(raw[l], xy_index)), xy_add), xy_div);
    ag::Var wh = ag::mul_const(ag::exp(ag::gather(raw[l], wh_index)), wh_mul);
    // Assemble (K, 4) rows of (x, y, w, h).
    std::vector<std::int64_t> xy_slots, wh_slots;
    for (std::int64_t i = 0; i < k; ++i) {
      xy_slots.push_back(4 * i);
      xy_slots.push_back(4 * i + 1);
      wh_slots.push_back(4 * i + 2);
      wh_slots.push_back(4 * i + 3);
    }
    ag::Var boxes = ag::reshape(ag::add(ag::scatter(xy, xy_slots, {4 * k}), ag::scatter(wh, wh_slots, {4 * k})), {k, 4});
    bbox_terms.push_back(bbox_loss(boxes, Tensor({k, 4}, targets)));
    Tensor one_hot({k * n_classes}, 0.0);
    for (std::int64_t i = 0; i < k; ++i) one_hot[i * n_classes + labels[static_cast<std::size_t>(i)]] = 1.0;
    cls_terms.push_back(
        ag::bce_with_logits_sum(ag::gather(raw[l], cls_index), one_hot, Tensor({k * n_classes}, 1.0)));
  }
  auto total = [&](const std::vector<ag::Var>& terms, double factor) {
    if (terms.empty()) return ag::Var(Tensor::scalar(0.0));
    ag::Var acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ag::add(acc, terms[i]);
    return ag::scale(acc, factor);
  };
  return {total(bbox_terms, inv_batch), total(obj_terms, 1.0 / static_cast<double>(slots)),
          total(cls_terms, positives > 0 ? 1.0 / static_cast<double>(positives * n_classes) : 0.0)};
}

nlohmann::json to_json(const DetectionBox& d, const std::string& image_id) {
  return {{"image_id", image_id},
          {"class_id", d.class_id},
          {"confidence", d.confidence},
          {"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}}};
}

}  // namespace mcgr
