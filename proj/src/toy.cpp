// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/toy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>

#include "mcgr/error.hpp"

namespace mcgr {

namespace {

using Rgb = std::array<double, 3>;
using Mask = std::function<bool(double x, double y)>;

struct Rng {
  std::mt19937_64 gen;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen); }
};

void paint_background(ImageArray& img, Rng& rng) {
  const int n = img.width();
  const Rgb base{rng.uniform(90, 130), rng.uniform(100, 140), rng.uniform(80, 115)};
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<std::vector<Wave>, 3> waves;
  for (auto& ws : waves) {
    for (int i = 0; i < 4; ++i)
      ws.push_back({rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(0, 2 * std::numbers::pi), rng.uniform(5, 14)});
    for (int i = 0; i < 3; ++i)
      ws.push_back({rng.uniform(-16, 16), rng.uniform(-16, 16), rng.uniform(0, 2 * std::numbers::pi),
                    rng.uniform(2, 5)});
  }
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double v = base[static_cast<std::size_t>(c)];
        for (const auto& w : waves[static_cast<std::size_t>(c)])
          v += w.amp * std::sin(2 * std::numbers::pi * (w.fx * x + w.fy * y) / n + w.phase);
        img.at(c, y, x) = v;
      }
}

Rgb jitter(Rgb c, Rng& rng, double amount) {
  for (double& v : c) v = std::clamp(v + rng.uniform(-amount, amount), 0.0, 255.0);
  return c;
}

// Shape of class `cls` centred at the origin, plus its half extent for placement.
struct Shape2d {
  Mask inside;
  double half_w = 0;
  double half_h = 0;
  Rgb colour{};
};

Shape2d make_shape(int cls, Rng& rng) {
  Shape2d s;
  switch (cls) {
    case 0: {  // vehicle: small rectangle
      double w = rng.uniform(8, 14), h = rng.uniform(5, 8);
      if (rng.integer(0, 1)) std::swap(w, h);
      s.inside = [=](double x, double y) { return std::abs(x) <= w / 2 && std::abs(y) <= h / 2; };
      s.half_w = w / 2;
      s.half_h = h / 2;
      static const std::array<Rgb, 5> palette{
          Rgb{220, 40, 40}, Rgb{40, 60, 220}, Rgb{240, 240, 240}, Rgb{25, 25, 30}, Rgb{230, 200, 40}};
      s.colour = jitter(palette[static_cast<std::size_t>(rng.integer(0, 4))], rng, 15);
      break;
    }
    case 1: {  // tree: disc
      const double r = rng.uniform(4, 8);
      s.inside = [=](double x, double y) { return x * x + y * y <= r * r; };
      s.half_w = s.half_h = r;
      s.colour = jitter({30, 90, 35}, rng, 10);
      break;
    }
    case 2: {  // airplane: fuselage and wings
      const double len = rng.uniform(14, 22), span = len * rng.uniform(0.7, 0.9), t = 1.6;
      const double wing_y = -len * 0.1;
      const bool vertical = rng.integer(0, 1) == 1;
      s.inside = [=](double x, double y) {
        if (!vertical) std::swap(x, y);
        return (std::abs(x) <= t && std::abs(y) <= len / 2) || (std::abs(y - wing_y) <= t && std::abs(x) <= span / 2);
      };
      s.half_w = (vertical ? span : len) / 2;
      s.half_h = (vertical ? len : span) / 2;
      s.colour = jitter({200, 200, 205}, rng, 10);
      break;
    }
    case 3: {  // ship: elongated ellipse
      double a = rng.uniform(8, 12), b = rng.uniform(3, 5);
      if (rng.integer(0, 1)) std::swap(a, b);
      s.inside = [=](double x, double y) { return (x * x) / (a * a) + (y * y) / (b * b) <= 1; };
      s.half_w = a;
      s.half_h = b;
      s.colour = jitter({245, 245, 250}, rng, 8);
      break;
    }
    default: {  // low vegetation: clump of discs
      std::vector<std::array<double, 3>> discs;
      const int k = rng.integer(3, 4);
      for (int i = 0; i < k; ++i) discs.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(3, 6)});
      s.inside = [=](double x, double y) {
        for (const auto& d : discs)
          if ((x - d[0]) * (x - d[0]) + (y - d[1]) * (y - d[1]) <= d[2] * d[2]) return true;
        return false;
      };
      s.half_w = s.half_h = 11;
      s.colour = jitter({95, 150, 60}, rng, 10);
      break;
    }
  }
  return s;
}

bool overlaps(const PixelBox& a, const PixelBox& b, double margin) {
  return a.x_min - margin < b.x_max && b.x_min - margin < a.x_max && a.y_min - margin < b.y_max &&
         b.y_min - margin < a.y_max;
}

}  // namespace

ToyImage render_toy_image(const ToyOptions& opt, std::uint64_t image_seed) {
  require(opt.size >= 32, "toy images must be at least 32 pixels");
  require(opt.min_objects >= 0 && opt.max_objects >= opt.min_objects, "invalid toy object count range");
  Rng rng{std::mt19937_64(image_seed)};
  ToyImage out;
  out.image = ImageArray(3, opt.size, opt.size);
  paint_background(out.image, rng);
  const int n = opt.size;
  const int count = rng.integer(opt.min_objects, opt.max_objects);
  std::vector<PixelBox> placed;
  for (int i = 0; i < count; ++i) {
    const int cls = opt.single_class ? 0 : rng.integer(0, 4);
    const Shape2d s = make_shape(cls, rng);
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double cx = rng.uniform(s.half_w + 2, n - s.half_w - 2);
      const double cy = rng.uniform(s.half_h + 2, n - s.half_h - 2);
      int x0 = n, y0 = n, x1 = -1, y1 = -1;
      for (int y = std::max(0, static_cast<int>(cy - s.half_h) - 2); y <= std::min(n - 1, static_cast<int>(cy + s.half_h) + 2); ++y)
        for (int x = std::max(0, static_cast<int>(cx - s.half_w) - 2); x <= std::min(n - 1, static_cast<int>(cx + s.half_w) + 2); ++x)
          if (s.inside(x + 0.5 - cx, y + 0.5 - cy)) {
            x0 = std::min(x0, x);
            y0 = std::min(y0, y);
            x1 = std::max(x1, x);
            y1 = std::max(y1, y);
          }
      if (x1 < 0) continue;
      const PixelBox box{static_cast<double>(x0), static_cast<double>(y0), x1 + 1.0, y1 + 1.0};
      if (std::any_of(placed.begin(), placed.end(), [&](const PixelBox& p) { return overlaps(p, box, 3); })) continue;
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if (s.inside(x + 0.5 - cx, y + 0.5 - cy))
            for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = s.colour[static_cast<std::size_t>(c)];
      placed.push_back(box);
      out.annotations.push_back(pixel_to_yolo(box, cls, n, n));
      break;
    }
  }
  out.image = out.image.quantized();
  return out;
}

DatasetManifest write_toy_corpus(const std::filesystem::path& out_dir, const ToyOptions& opt) {
  require(opt.train >= 0 && opt.val >= 0 && opt.test >= 0 && opt.train + opt.val + opt.test > 0,
          "toy corpus needs at least one image");
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "labels");
  DatasetManifest m;
  m.scheme = opt.single_class ? ClassScheme::one_class() : ClassScheme::base();
  m.seed = opt.seed;
  std::mt19937_64 seeds(opt.seed);
  const int total = opt.train + opt.val + opt.test;
  for (int i = 0; i < total; ++i) {
    const ToyImage t = render_toy_image(opt, seeds());
    char stem[32];
    std::snprintf(stem, sizeof stem, "toy_%03d", i);
    const std::string rel = std::string("images/") + stem + ".png";
    save_png(t.image, out_dir / rel);
    std::ofstream labels(out_dir / "labels" / (std::string(stem) + ".txt"), std::ios::binary | std::ios::trunc);
    labels << format_yolo_annotations(t.annotations);
    if (!labels) throw IoError("cannot write labels for " + rel);
    ManifestEntry e;
    e.image_path = rel;
    e.width = e.height = opt.size;
    e.annotations = t.annotations;
    e.split = i < opt.train ? Split::train : i < opt.train + opt.val ? Split::val : Split::test;
    m.entries.push_back(std::move(e));
  }
  m.validate();
  save_manifest(m, out_dir / "manifest.ndjson");
  return m;
}

}  // namespace mcgr
