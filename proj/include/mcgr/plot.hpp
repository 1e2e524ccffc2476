// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

// Static SVG charts for PR curves, training curves and dataset statistics.

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace mcgr::plot {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  std::vector<Series> series;
  bool step = false;  // draw as a staircase (PR curves)
};

std::string render(const LineChart& chart);

struct BarChart {
  std::string title;
  std::vector<std::string> labels;
  std::vector<double> values;
};

std::string render(const BarChart& chart);

struct Heatmap {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::vector<double>> cells;  // [row][col], row 0 at the top
};

std::string render(const Heatmap& chart);

/// PR chart over [0, 1]^2 from a {class: [[recall, precision], ...]} object.
LineChart pr_chart(const nlohmann::json& curves, const std::string& title);

/// Writes every chart derivable from `input` into out_dir and returns the
/// files written. Recognised inputs: a metrics report, a statistics document,
/// a bare PR-curve document, or a run directory (mAP per epoch).
std::vector<std::filesystem::path> plot_input(const std::filesystem::path& input, const std::filesystem::path& out_dir);

}  // namespace mcgr::plot
