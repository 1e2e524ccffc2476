// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "mcgr/image.hpp"
#include "mcgr/tensor.hpp"

namespace testutil {

inline mcgr::Tensor random_tensor(const mcgr::Shape& shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  mcgr::Tensor t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline mcgr::ImageArray random_image(int c, int h, int w, std::mt19937_64& rng, double peak = 255.0) {
  mcgr::ImageArray img(c, h, w, peak);
  std::uniform_real_distribution<double> u(0, peak);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mcgr_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testutil
