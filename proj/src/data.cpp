// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "mcgr/error.hpp"

namespace mcgr {

using nlohmann::json;

void validate(const AnnotationRecord& rec) {
  require(rec.class_id >= 0, "negative class id");
  require(std::isfinite(rec.cx) && std::isfinite(rec.cy) && std::isfinite(rec.w) && std::isfinite(rec.h),
          "non-finite annotation");
  require(rec.cx >= 0 && rec.cx <= 1 && rec.cy >= 0 && rec.cy <= 1, "annotation centre outside [0, 1]");
  require(rec.w > 0 && rec.w <= 1 && rec.h > 0 && rec.h <= 1, "annotation size outside (0, 1]");
}

PixelBox yolo_to_pixel(const AnnotationRecord& rec, double img_w, double img_h) {
  require(img_w > 0 && img_h > 0, "image size must be positive");
  return {(rec.cx - rec.w / 2) * img_w, (rec.cy - rec.h / 2) * img_h, (rec.cx + rec.w / 2) * img_w,
          (rec.cy + rec.h / 2) * img_h};
}

AnnotationRecord pixel_to_yolo(const PixelBox& box, int class_id, double img_w, double img_h) {
  require(img_w > 0 && img_h > 0, "image size must be positive");
  return {class_id, (box.x_min + box.x_max) / 2 / img_w, (box.y_min + box.y_max) / 2 / img_h,
          (box.x_max - box.x_min) / img_w, (box.y_max - box.y_min) / img_h};
}

namespace {

double parse_number(std::string_view field, std::size_t line) {
  double value = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value))
    throw FormatError("non-numeric field '" + std::string(field) + "'", line);
  return value;
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

std::vector<AnnotationRecord> parse_yolo_annotations(std::string_view text, int class_count) {
  std::vector<AnnotationRecord> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    auto fields = split_whitespace(line);
    if (fields.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (fields.size() != 5)
      throw FormatError("expected 5 fields 'class cx cy w h', got " + std::to_string(fields.size()), line_no);
    const double cls = parse_number(fields[0], line_no);
    if (cls != std::floor(cls) || cls < 0) throw FormatError("class id must be a non-negative integer", line_no);
    if (cls >= class_count)
      throw FormatError("class id " + std::string(fields[0]) + " >= class count " + std::to_string(class_count),
                        line_no);
    AnnotationRecord rec{static_cast<int>(cls), parse_number(fields[1], line_no), parse_number(fields[2], line_no),
                         parse_number(fields[3], line_no), parse_number(fields[4], line_no)};
    try {
      validate(rec);
    } catch (const ContractError& e) {
      throw FormatError(e.what(), line_no);
    }
    out.push_back(rec);
    if (end == text.size()) break;
  }
  return out;
}

std::string format_yolo_annotations(const std::vector<AnnotationRecord>& records) {
  std::string out;
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %.17g\n", r.class_id, r.cx, r.cy, r.w, r.h);
    out += buf;
  }
  return out;
}

void ClassScheme::validate() const {
  require(!classes.empty(), "class scheme '" + name + "' is empty");
  std::set<int> targets;
  for (const auto& [base, idx] : mapping) {
    require(base >= 0 && base < static_cast<int>(kBaseClasses.size()), "class scheme maps an unknown base class");
    require(idx >= 0 && idx < static_cast<int>(classes.size()), "class scheme maps outside its class list");
    targets.insert(idx);
  }
  require(targets.size() == classes.size(), "class scheme mapping must cover every class index");
}

ClassScheme ClassScheme::base() {
  ClassScheme s{"base5", {}, {}};
  for (std::size_t i = 0; i < kBaseClasses.size(); ++i) {
    s.classes.emplace_back(kBaseClasses[i]);
    s.mapping[static_cast<int>(i)] = static_cast<int>(i);
  }
  return s;
}

ClassScheme ClassScheme::four_class() {
  return {"four_class", {"vehicle", "tree", "airplane", "ship"}, {{0, 0}, {1, 1}, {2, 2}, {3, 3}}};
}

ClassScheme ClassScheme::two_class() { return {"two_class", {"vehicle", "tree"}, {{0, 0}, {1, 1}}}; }

ClassScheme ClassScheme::one_class() { return {"one_class", {"vehicle"}, {{0, 0}}}; }

ClassScheme ClassScheme::named(std::string_view name) {
  if (name == "base5") return base();
  if (name == "four_class") return four_class();
  if (name == "two_class") return two_class();
  if (name == "one_class") return one_class();
  throw ContractError("unknown class scheme '" + std::string(name) + "'");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: return "unassigned";
  }
  return "unassigned";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned") return Split::unassigned;
  throw FormatError("unknown split '" + std::string(s) + "'");
}

void DatasetManifest::validate() const {
  scheme.validate();
  for (const auto& e : entries) {
    require(e.width > 0 && e.height > 0, "manifest entry '" + e.image_path + "' has a non-positive size");
    for (const auto& a : e.annotations) {
      mcgr::validate(a);
      require(a.class_id < static_cast<int>(scheme.classes.size()),
              "manifest entry '" + e.image_path + "' has class id outside the scheme");
    }
  }
}

std::size_t DatasetManifest::instance_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.annotations.size();
  return n;
}

std::vector<const ManifestEntry*> DatasetManifest::split_entries(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

std::string write_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& e : manifest.entries) {
    json anns = json::array();
    for (const auto& a : e.annotations) anns.push_back({a.class_id, a.cx, a.cy, a.w, a.h});
    json rec{{"image", e.image_path},
             {"width", e.width},
             {"height", e.height},
             {"split", to_string(e.split)},
             {"annotations", anns},
             {"scheme", manifest.scheme.name},
             {"classes", manifest.scheme.classes},
             {"seed", manifest.seed}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

DatasetManifest read_manifest(std::string_view ndjson) {
  DatasetManifest m;
  bool first = true;
  std::size_t line_no = 0;
  std::istringstream in{std::string(ndjson)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json rec = json::parse(line);
      ManifestEntry e;
      e.image_path = rec.at("image").get<std::string>();
      e.width = rec.at("width").get<int>();
      e.height = rec.at("height").get<int>();
      e.split = parse_split(rec.at("split").get<std::string>());
      for (const auto& a : rec.at("annotations"))
        e.annotations.push_back({a.at(0).get<int>(), a.at(1).get<double>(), a.at(2).get<double>(),
                                 a.at(3).get<double>(), a.at(4).get<double>()});
      const auto name = rec.at("scheme").get<std::string>();
      const auto classes = rec.at("classes").get<std::vector<std::string>>();
      const auto seed = rec.at("seed").get<std::uint64_t>();
      if (first) {
        m.scheme.name = name;
        m.scheme.classes = classes;
        m.scheme.mapping.clear();
        // Mapping is recovered by name against the base classes.
        for (std::size_t i = 0; i < classes.size(); ++i)
          for (std::size_t b = 0; b < kBaseClasses.size(); ++b)
            if (classes[i] == kBaseClasses[b]) m.scheme.mapping[static_cast<int>(b)] = static_cast<int>(i);
        m.seed = seed;
        first = false;
      } else if (name != m.scheme.name || classes != m.scheme.classes) {
        throw FormatError("entries disagree on the class scheme", line_no);
      }
      m.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed manifest record: ") + e.what(), line_no);
    }
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << write_manifest(manifest);
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return read_manifest(ss.str());
}

std::vector<PatchWindow> patch_windows(int tile_h, int tile_w, const std::string& tile_name, int patch_size,
                                       int overlap) {
  require(patch_size >= 1, "patch size must be positive");
  require(overlap >= 0 && overlap < patch_size, "overlap must satisfy 0 <= overlap < patch size");
  require(patch_size <= std::min(tile_h, tile_w), "patch size " + std::to_string(patch_size) + " exceeds tile " +
                                                      std::to_string(tile_w) + "x" + std::to_string(tile_h));
  const int stride = patch_size - overlap;
  std::vector<PatchWindow> out;
  int index = 1;
  char suffix[16];
  for (int top = 0; top + patch_size <= tile_h; top += stride)
    for (int left = 0; left + patch_size <= tile_w; left += stride) {
      std::snprintf(suffix, sizeof suffix, "%02d", index++);
      out.push_back({tile_name + suffix, top, left});
    }
  return out;
}

std::vector<Patch> extract_patches(const ImageArray& tile, const std::string& tile_name, int patch_size,
                                   int overlap) {
  std::vector<Patch> out;
  for (const PatchWindow& w : patch_windows(tile.height(), tile.width(), tile_name, patch_size, overlap))
    out.push_back({tile.crop(w.top, w.left, patch_size, patch_size), w.name, w.top, w.left});
  return out;
}

std::vector<AnnotationRecord> annotations_in_window(const std::vector<AnnotationRecord>& tile_annotations,
                                                    int tile_w, int tile_h, int top, int left, int win_h,
                                                    int win_w) {
  std::vector<AnnotationRecord> out;
  for (const auto& a : tile_annotations) {
    const PixelBox b = yolo_to_pixel(a, tile_w, tile_h);
    const double cx = (b.x_min + b.x_max) / 2 - left;
    const double cy = (b.y_min + b.y_max) / 2 - top;
    if (cx < 0 || cx >= win_w || cy < 0 || cy >= win_h) continue;
    PixelBox clipped{std::max(0.0, b.x_min - left), std::max(0.0, b.y_min - top),
                     std::min<double>(win_w, b.x_max - left), std::min<double>(win_h, b.y_max - top)};
    if (clipped.width() <= 0 || clipped.height() <= 0) continue;
    out.push_back(pixel_to_yolo(clipped, a.class_id, win_w, win_h));
  }
  return out;
}

SplitCounts split_counts(std::size_t n, const SplitRatios& r) {
  require(r.train > 0 && r.val > 0 && r.test > 0, "split ratios must be positive");
  require(std::fabs(r.train + r.val + r.test - 1.0) < 1e-9, "split ratios must sum to 1");
  require(n >= 3, "need at least 3 entries to populate train/val/test, got " + std::to_string(n));
  const double nd = static_cast<double>(n);
  SplitCounts c;
  c.val = static_cast<std::size_t>(std::floor(r.val * nd + 1e-9));
  c.test = static_cast<std::size_t>(std::llround(r.test * nd));
  require(c.val + c.test <= n, "split ratios leave no room for training entries");
  c.train = n - c.val - c.test;
  return c;
}

DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed) {
  for (const auto& e : manifest.entries)
    require(e.split == Split::unassigned, "split_dataset expects unassigned entries ('" + e.image_path + "')");
  const SplitCounts counts = split_counts(manifest.entries.size(), ratios);
  DatasetManifest out = manifest;
  out.seed = seed;
  // Shuffle a canonical order so the result depends only on the entry set.
  std::vector<std::size_t> order(out.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.entries[a].image_path < out.entries[b].image_path;
  });
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  for (std::size_t k = 0; k < order.size(); ++k) {
    Split s = k < counts.train ? Split::train : (k < counts.train + counts.val ? Split::val : Split::test);
    out.entries[order[k]].split = s;
  }
  return out;
}

DatasetManifest regroup_classes(const DatasetManifest& manifest, const ClassScheme& scheme) {
  scheme.validate();
  require(manifest.scheme.classes.size() == kBaseClasses.size() &&
              std::equal(kBaseClasses.begin(), kBaseClasses.end(), manifest.scheme.classes.begin()),
          "regroup_classes expects a manifest in the five-class base scheme");
  DatasetManifest out = manifest;
  out.scheme = scheme;
  for (auto& e : out.entries) {
    std::vector<AnnotationRecord> kept;
    for (const auto& a : e.annotations) {
      auto it = scheme.mapping.find(a.class_id);
      if (it == scheme.mapping.end()) continue;
      AnnotationRecord r = a;
      r.class_id = it->second;
      kept.push_back(r);
    }
    e.annotations = std::move(kept);
  }
  return out;
}

namespace {
std::size_t bin_of(double v, int bins) {
  const int b = static_cast<int>(std::floor(v * bins));
  return static_cast<std::size_t>(std::clamp(b, 0, bins - 1));
}
}  // namespace

DatasetStats compute_statistics(const DatasetManifest& manifest, int bins) {
  require(bins >= 1, "histogram bin count must be positive");
  DatasetStats s;
  s.bins = bins;
  s.classes = manifest.scheme.classes;
  const std::size_t nc = s.classes.size();
  for (auto& row : s.counts) row.assign(nc, 0);
  s.class_totals.assign(nc, 0);
  s.location.assign(static_cast<std::size_t>(bins), std::vector<std::size_t>(static_cast<std::size_t>(bins), 0));
  s.size = s.location;
  s.images = manifest.entries.size();
  for (const auto& e : manifest.entries) {
    const auto split = static_cast<std::size_t>(e.split);
    for (const auto& a : e.annotations) {
      require(a.class_id >= 0 && static_cast<std::size_t>(a.class_id) < nc, "annotation class outside the scheme");
      s.counts[split][static_cast<std::size_t>(a.class_id)]++;
      s.class_totals[static_cast<std::size_t>(a.class_id)]++;
      s.total++;
      s.location[bin_of(a.cy, bins)][bin_of(a.cx, bins)]++;
      s.size[bin_of(a.h, bins)][bin_of(a.w, bins)]++;
    }
  }
  return s;
}

json to_json(const DatasetStats& s) {
  json per_split = json::object();
  for (Split sp : {Split::train, Split::val, Split::test, Split::unassigned}) {
    json row = json::object();
    for (std::size_t c = 0; c < s.classes.size(); ++c) row[s.classes[c]] = s.counts[static_cast<std::size_t>(sp)][c];
    per_split[std::string(to_string(sp))] = row;
  }
  json totals = json::object();
  for (std::size_t c = 0; c < s.classes.size(); ++c) totals[s.classes[c]] = s.class_totals[c];
  return {{"classes", s.classes}, {"class_counts", totals}, {"split_counts", per_split}, {"total", s.total},
          {"images", s.images},  {"bins", s.bins},          {"location_histogram", s.location},
          {"size_histogram", s.size}};
}

json export_coco(const DatasetManifest& manifest) {
  json images = json::array();
  json annotations = json::array();
  json categories = json::array();
  for (std::size_t c = 0; c < manifest.scheme.classes.size(); ++c)
    categories.push_back({{"id", c + 1}, {"name", manifest.scheme.classes[c]}});
  std::size_t ann_id = 1;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    images.push_back({{"id", i + 1}, {"file_name", e.image_path}, {"width", e.width}, {"height", e.height}});
    for (const auto& a : e.annotations) {
      const PixelBox b = yolo_to_pixel(a, e.width, e.height);
      annotations.push_back({{"id", ann_id++},
                             {"image_id", i + 1},
                             {"category_id", a.class_id + 1},
                             {"bbox", {b.x_min, b.y_min, b.width(), b.height()}},
                             {"area", b.area()},
                             {"iscrowd", 0}});
    }
  }
  return {{"images", images}, {"annotations", annotations}, {"categories", categories}};
}

DatasetManifest import_coco(const json& coco) {
  DatasetManifest m;
  m.scheme.name = "coco";
  m.scheme.classes.clear();
  m.scheme.mapping.clear();
  std::map<std::int64_t, int> category_index;
  std::vector<std::pair<std::int64_t, std::string>> cats;
  for (const auto& c : coco.at("categories")) cats.emplace_back(c.at("id").get<std::int64_t>(), c.at("name"));
  std::sort(cats.begin(), cats.end());
  for (const auto& [id, name] : cats) {
    category_index[id] = static_cast<int>(m.scheme.classes.size());
    for (std::size_t b = 0; b < kBaseClasses.size(); ++b)
      if (name == kBaseClasses[b]) m.scheme.mapping[static_cast<int>(b)] = static_cast<int>(m.scheme.classes.size());
    m.scheme.classes.push_back(name);
  }
  if (m.scheme.classes == ClassScheme::base().classes) m.scheme = ClassScheme::base();
  std::map<std::int64_t, std::size_t> image_index;
  for (const auto& img : coco.at("images")) {
    image_index[img.at("id").get<std::int64_t>()] = m.entries.size();
    m.entries.push_back({img.at("file_name"), img.at("width"), img.at("height"), {}, Split::unassigned});
  }
  for (const auto& a : coco.at("annotations")) {
    auto img = image_index.find(a.at("image_id").get<std::int64_t>());
    if (img == image_index.end()) throw FormatError("COCO annotation references an unknown image");
    auto cat = category_index.find(a.at("category_id").get<std::int64_t>());
    if (cat == category_index.end()) throw FormatError("COCO annotation references an unknown category");
    auto& e = m.entries[img->second];
    const auto& bb = a.at("bbox");
    PixelBox box{bb.at(0), bb.at(1), bb.at(0).get<double>() + bb.at(2).get<double>(),
                 bb.at(1).get<double>() + bb.at(3).get<double>()};
    e.annotations.push_back(pixel_to_yolo(box, cat->second, e.width, e.height));
  }
  return m;
}

}  // namespace mcgr
