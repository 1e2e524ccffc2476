// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural toy corpus: smooth textured backgrounds with non-overlapping
// shapes standing in for the five base classes, with exact boxes.

#pragma once

#include <cstdint>
#include <filesystem>

#include "mcgr/data.hpp"

namespace mcgr {

struct ToyOptions {
  int train = 16;
  int val = 4;
  int test = 0;
  int size = 128;
  int min_objects = 2;
  int max_objects = 5;
  /// Vehicles only, under the one-class scheme.
  bool single_class = false;
  std::uint64_t seed = 7;
};

/// One image with its annotations (base-class ids, or 0 in single-class mode).
struct ToyImage {
  ImageArray image;
  std::vector<AnnotationRecord> annotations;
};

ToyImage render_toy_image(const ToyOptions& opt, std::uint64_t image_seed);

/// Writes images/toy_NNN.png, labels/toy_NNN.txt and manifest.ndjson under
/// out_dir; manifest paths are relative to out_dir.
DatasetManifest write_toy_corpus(const std::filesystem::path& out_dir, const ToyOptions& opt);

}  // namespace mcgr
