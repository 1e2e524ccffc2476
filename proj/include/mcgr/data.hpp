// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset construction: tiling, YOLO/COCO annotation formats, class
// regrouping, splitting, statistics and the newline-delimited JSON manifest.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcgr/image.hpp"

namespace mcgr {

/// One labelled object, centre-format box in fractions of the image size.
struct AnnotationRecord {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;

  bool operator==(const AnnotationRecord&) const = default;
};

/// Corner box in pixels.
struct PixelBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
};

void validate(const AnnotationRecord& rec);

PixelBox yolo_to_pixel(const AnnotationRecord& rec, double img_w, double img_h);
AnnotationRecord pixel_to_yolo(const PixelBox& box, int class_id, double img_w, double img_h);

std::vector<AnnotationRecord> parse_yolo_annotations(std::string_view text, int class_count);
std::string format_yolo_annotations(const std::vector<AnnotationRecord>& records);

inline constexpr std::array<std::string_view, 5> kBaseClasses{"vehicle", "tree", "airplane", "ship",
                                                              "low-vegetation"};

struct ClassScheme {
  std::string name;
  std::vector<std::string> classes;
  /// base class index -> index in `classes`; unmapped base classes are dropped.
  std::map<int, int> mapping;

  void validate() const;
  bool operator==(const ClassScheme&) const = default;

  static ClassScheme base();       // five classes, identity mapping
  static ClassScheme four_class();  // drops low-vegetation
  static ClassScheme two_class();   // vehicle, tree
  static ClassScheme one_class();   // vehicle
  /// "base5" / "four_class" / "two_class" / "one_class".
  static ClassScheme named(std::string_view name);
};

enum class Split { train, val, test, unassigned };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct ManifestEntry {
  std::string image_path;
  int width = 0;
  int height = 0;
  std::vector<AnnotationRecord> annotations;
  Split split = Split::unassigned;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  ClassScheme scheme = ClassScheme::base();
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t instance_count() const;
  std::vector<const ManifestEntry*> split_entries(Split s) const;
  bool operator==(const DatasetManifest&) const = default;
};

/// One JSON object per entry; each carries the scheme and seed.
std::string write_manifest(const DatasetManifest& manifest);
DatasetManifest read_manifest(std::string_view ndjson);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct Patch {
  ImageArray image;
  std::string name;
  int top = 0;
  int left = 0;
};

struct PatchWindow {
  std::string name;  // tile name + two-digit 1-based index
  int top = 0;
  int left = 0;
};

/// Row-major grid of patch_size squares at stride patch_size - overlap;
/// trailing remainders that cannot hold a full patch are dropped.
std::vector<PatchWindow> patch_windows(int tile_h, int tile_w, const std::string& tile_name, int patch_size = 1000,
                                       int overlap = 100);

/// The windows of patch_windows cut out of `tile`.
std::vector<Patch> extract_patches(const ImageArray& tile, const std::string& tile_name, int patch_size = 1000,
                                   int overlap = 100);

/// Annotations of a tile re-expressed in a patch window: boxes whose centre
/// lies in the window are kept, clipped to it.
std::vector<AnnotationRecord> annotations_in_window(const std::vector<AnnotationRecord>& tile_annotations,
                                                    int tile_w, int tile_h, int top, int left, int win_h, int win_w);

struct SplitRatios {
  double train = 0.70, val = 0.20, test = 0.10;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  bool operator==(const SplitCounts&) const = default;
};

/// val = floor(r_val N), test = round(r_test N), train = the rest.
SplitCounts split_counts(std::size_t n, const SplitRatios& ratios);
DatasetManifest split_dataset(const DatasetManifest& manifest, const SplitRatios& ratios, std::uint64_t seed);

DatasetManifest regroup_classes(const DatasetManifest& manifest, const ClassScheme& scheme);

struct DatasetStats {
  std::vector<std::string> classes;
  /// counts[split][class], split order train, val, test, unassigned.
  std::array<std::vector<std::size_t>, 4> counts;
  std::vector<std::size_t> class_totals;
  std::size_t total = 0;
  std::size_t images = 0;
  int bins = 9;
  /// location[row = cy bin][col = cx bin]; size[row = h bin][col = w bin].
  std::vector<std::vector<std::size_t>> location;
  std::vector<std::vector<std::size_t>> size;
};

DatasetStats compute_statistics(const DatasetManifest& manifest, int bins = 9);
nlohmann::json to_json(const DatasetStats& stats);

nlohmann::json export_coco(const DatasetManifest& manifest);
/// Reverse of export_coco (categories map to class ids in id order).
DatasetManifest import_coco(const nlohmann::json& coco);

}  // namespace mcgr
