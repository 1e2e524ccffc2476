// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations used only by tests. Each one is written from the
// definition, directly and slowly, without sharing code with the library.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcgr/autograd.hpp"
#include "mcgr/image.hpp"
#include "mcgr/metrics.hpp"
#include "mcgr/tensor.hpp"

namespace oracle {

// ------------------------------------------------------------ gradients

/// Central finite differences of a scalar function at x.
inline mcgr::Tensor numeric_gradient(const std::function<double(const mcgr::Tensor&)>& f, const mcgr::Tensor& x,
                                     double h = 1e-6) {
  mcgr::Tensor g(x.shape());
  mcgr::Tensor probe = x;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double up = f(probe);
    probe[i] = keep - h;
    const double down = f(probe);
    probe[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// ||a - b||_2 / max(||b||_2, 1e-4). The floor keeps finite-difference
/// rounding noise (~1e-10 per entry) from dominating vanishing gradients.
inline double relative_error(const mcgr::Tensor& a, const mcgr::Tensor& b) {
  double diff = 0, norm = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    norm += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(norm), 1e-4);
}

/// Worst relative error between autograd and finite differences over every
/// input of `f`, which maps leaves to a scalar Var.
inline double gradient_check(const std::function<mcgr::ag::Var(const std::vector<mcgr::ag::Var>&)>& f,
                             const std::vector<mcgr::Tensor>& inputs, double h = 1e-6) {
  std::vector<mcgr::ag::Var> leaves;
  for (const auto& t : inputs) leaves.emplace_back(t, true);
  const auto grads = mcgr::ag::grad(f(leaves), leaves);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto scalar = [&](const mcgr::Tensor& probe) {
      std::vector<mcgr::ag::Var> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) vs.emplace_back(j == k ? probe : inputs[j], false);
      // No NoGradGuard: f may itself differentiate (double backward).
      return f(vs).value().item();
    };
    worst = std::max(worst, relative_error(grads[k].value(), numeric_gradient(scalar, inputs[k], h)));
  }
  return worst;
}

// ------------------------------------------------------------- resampling

inline double keys_cubic(double t) {
  const double a = -0.5;
  const double x = std::fabs(t);
  if (x < 1) return (a + 2) * x * x * x - (a + 3) * x * x + 1;
  if (x < 2) return a * x * x * x - 5 * a * x * x + 8 * a * x - 4 * a;
  return 0;
}

inline int mirror(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
  return i;
}

/// Normalised 1-D weights over the whole reflected input axis for output o.
inline std::vector<double> bicubic_weights(int in, int out, int o) {
  const double s = static_cast<double>(out) / in;
  const double k = std::min(1.0, s);  // kernel squeeze when shrinking
  const double centre = (o + 0.5) / s - 0.5;
  std::vector<double> w(static_cast<std::size_t>(in), 0.0);
  double total = 0;
  for (int i = static_cast<int>(centre) - 4 * in / std::max(out, 1) - 8; i <= static_cast<int>(centre) + 4 * in / std::max(out, 1) + 8; ++i) {
    const double v = keys_cubic(k * (centre - i));
    w[static_cast<std::size_t>(mirror(i, in))] += v;
    total += v;
  }
  for (double& v : w) v /= total;
  return w;
}

/// Direct 2-D evaluation: every output pixel is a full double sum over the input.
inline mcgr::ImageArray bicubic_resize(const mcgr::ImageArray& img, int out_h, int out_w) {
  mcgr::ImageArray out(img.channels(), out_h, out_w, img.peak());
  for (int y = 0; y < out_h; ++y) {
    const auto wy = bicubic_weights(img.height(), out_h, y);
    for (int x = 0; x < out_w; ++x) {
      const auto wx = bicubic_weights(img.width(), out_w, x);
      for (int c = 0; c < img.channels(); ++c) {
        double acc = 0;
        for (int i = 0; i < img.height(); ++i)
          for (int j = 0; j < img.width(); ++j)
            acc += wy[static_cast<std::size_t>(i)] * wx[static_cast<std::size_t>(j)] * img.at(c, i, j);
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- IQA

inline double luma(const mcgr::ImageArray& img, int y, int x) {
  if (img.channels() == 1) return img.at(0, y, x);
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

inline double mse(const mcgr::ImageArray& a, const mcgr::ImageArray& b) {
  double acc = 0;
  std::size_t n = 0;
  for (int c = 0; c < a.channels(); ++c)
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x, ++n) acc += (a.at(c, y, x) - b.at(c, y, x)) * (a.at(c, y, x) - b.at(c, y, x));
  return acc / static_cast<double>(n);
}

inline double psnr(const mcgr::ImageArray& a, const mcgr::ImageArray& b, double peak) {
  const double m = oracle::mse(a, b);
  return m == 0 ? mcgr::kPsnrCap : 10 * std::log10(peak * peak / m);
}

/// Mean over every fully contained 11x11 window of the SSIM index, with the
/// 2-D Gaussian weights applied to each window explicitly.
inline double ssim(const mcgr::ImageArray& a, const mcgr::ImageArray& b, double peak) {
  const int n = 11;
  const double sigma = 1.5;
  double weights[11][11];
  double total = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) total += weights[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2 * sigma * sigma));
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  double sum = 0;
  int windows = 0;
  for (int y = 0; y + n <= a.height(); ++y)
    for (int x = 0; x + n <= a.width(); ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          ma += weights[i][j] / total * luma(a, y + i, x + j);
          mb += weights[i][j] / total * luma(b, y + i, x + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double w = weights[i][j] / total;
          const double da = luma(a, y + i, x + j) - ma;
          const double db = luma(b, y + i, x + j) - mb;
          va += w * da * da;
          vb += w * db * db;
          cov += w * da * db;
        }
      sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  return sum / windows;
}

// --------------------------------------------------------------- AP

inline double box_iou(const mcgr::PixelBox& a, const mcgr::PixelBox& b) {
  const double x0 = std::max(a.x_min, b.x_min), x1 = std::min(a.x_max, b.x_max);
  const double y0 = std::max(a.y_min, b.y_min), y1 = std::min(a.y_max, b.y_max);
  const double inter = std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
  const double uni = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter;
  return inter / uni;
}

/// For every cut k (the k most confident predictions) recompute precision
/// and recall from scratch; AP integrates, over each recall step, the best
/// precision reached at any cut with at least that recall.
inline double exhaustive_ap(const std::vector<mcgr::Prediction>& preds, const std::vector<mcgr::GroundTruth>& gts,
                            int cls, double thr) {
  std::vector<mcgr::Prediction> p;
  for (const auto& d : preds)
    if (d.class_id == cls) p.push_back(d);
  std::stable_sort(p.begin(), p.end(), [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
  std::vector<const mcgr::GroundTruth*> g;
  for (const auto& t : gts)
    if (t.class_id == cls) g.push_back(&t);
  if (g.empty() || p.empty()) return 0;
  std::vector<double> precision, recall;
  for (std::size_t k = 1; k <= p.size(); ++k) {
    std::vector<bool> used(g.size(), false);
    int tp = 0;
    for (std::size_t i = 0; i < k; ++i) {
      int best = -1;
      double best_iou = -1;
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (used[j] || g[j]->image_id != p[i].image_id) continue;
        const double v = box_iou(p[i].box, g[j]->box);
        if (v >= thr && v > best_iou) best_iou = v, best = static_cast<int>(j);
      }
      if (best >= 0) used[static_cast<std::size_t>(best)] = true, ++tp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(g.size()));
  }
  std::set<double> levels(recall.begin(), recall.end());
  double ap = 0, previous = 0;
  for (double r : levels) {
    double best = 0;
    for (std::size_t k = 0; k < recall.size(); ++k)
      if (recall[k] >= r) best = std::max(best, precision[k]);
    ap += (r - previous) * best;
    previous = r;
  }
  return ap;
}

// ------------------------------------------------------- JSON schema

/// Validator for the draft-07 subset used in schemas/: type, enum, required,
/// properties, additionalProperties, items, minItems, maxItems, minimum,
/// maximum, oneOf and local $ref. Appends one message per violation.
class SchemaValidator {
 public:
  explicit SchemaValidator(nlohmann::json root) : root_(std::move(root)) {}

  std::vector<std::string> validate(const nlohmann::json& doc) const {
    std::vector<std::string> errors;
    check(root_, doc, "$", errors);
    return errors;
  }

 private:
  const nlohmann::json& resolve(const nlohmann::json& s) const {
    if (!s.contains("$ref")) return s;
    return root_.at(nlohmann::json::json_pointer(s.at("$ref").get<std::string>().substr(1)));
  }

  static bool has_type(const nlohmann::json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "integer") return v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
    if (t == "number") return v.is_number();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    return false;
  }

  void check(const nlohmann::json& schema, const nlohmann::json& v, const std::string& path,
             std::vector<std::string>& errors) const {
    const nlohmann::json& s = resolve(schema);
    if (s.contains("type")) {
      bool ok = false;
      if (s["type"].is_array()) {
        for (const auto& t : s["type"]) ok = ok || has_type(v, t.get<std::string>());
      } else {
        ok = has_type(v, s["type"].get<std::string>());
      }
      if (!ok) {
        errors.push_back(path + ": wrong type");
        return;
      }
    }
    if (s.contains("enum") && std::find(s["enum"].begin(), s["enum"].end(), v) == s["enum"].end())
      errors.push_back(path + ": not in enum");
    if (s.contains("oneOf")) {
      int matches = 0;
      for (const auto& alt : s["oneOf"]) {
        std::vector<std::string> sub;
        check(alt, v, path, sub);
        matches += sub.empty() ? 1 : 0;
      }
      if (matches != 1) errors.push_back(path + ": matches " + std::to_string(matches) + " oneOf branches");
    }
    if (v.is_number()) {
      if (s.contains("minimum") && v.get<double>() < s["minimum"].get<double>()) errors.push_back(path + ": below minimum");
      if (s.contains("maximum") && v.get<double>() > s["maximum"].get<double>()) errors.push_back(path + ": above maximum");
    }
    if (v.is_object()) {
      if (s.contains("required"))
        for (const auto& key : s["required"])
          if (!v.contains(key.get<std::string>())) errors.push_back(path + ": missing " + key.get<std::string>());
      for (const auto& [key, item] : v.items()) {
        if (s.contains("properties") && s["properties"].contains(key)) {
          check(s["properties"][key], item, path + "." + key, errors);
        } else if (s.contains("additionalProperties")) {
          const auto& extra = s["additionalProperties"];
          if (extra.is_boolean()) {
            if (!extra.get<bool>()) errors.push_back(path + ": unexpected key " + key);
          } else {
            check(extra, item, path + "." + key, errors);
          }
        }
      }
    }
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) errors.push_back(path + ": too few items");
      if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) errors.push_back(path + ": too many items");
      if (s.contains("items"))
        for (std::size_t i = 0; i < v.size(); ++i) check(s["items"], v[i], path + "[" + std::to_string(i) + "]", errors);
    }
  }

  nlohmann::json root_;
};

}  // namespace oracle
