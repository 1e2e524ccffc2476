// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include "mcgr/error.hpp"

namespace mcgr::plot {

using nlohmann::json;

namespace {

constexpr double kWidth = 640, kHeight = 480;
constexpr double kLeft = 70, kRight = 150, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string header(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
  return os.str();
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

}  // namespace

std::string render(const LineChart& c) {
  require(c.x_max > c.x_min && c.y_max > c.y_min, "plot axes must have positive extent");
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double x) { return kLeft + (x - c.x_min) / (c.x_max - c.x_min) * pw; };
  auto sy = [&](double y) { return kTop + ph - (y - c.y_min) / (c.y_max - c.y_min) * ph; };
  std::ostringstream os;
  os << header(c.title);
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = c.x_min + (c.x_max - c.x_min) * i / 5.0;
    const double yv = c.y_min + (c.y_max - c.y_min) * i / 5.0;
    os << "<line x1=\"" << num(sx(xv)) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(sx(xv)) << "\" y2=\""
       << num(kTop + ph + 5) << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << num(sx(xv)) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">"
       << tick_label(xv) << "</text>\n"
       << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(sy(yv)) << "\" x2=\"" << num(kLeft) << "\" y2=\""
       << num(sy(yv)) << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(sy(yv) + 4) << "\" text-anchor=\"end\">"
       << tick_label(yv) << "</text>\n";
  }
  os << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 15) << "\" text-anchor=\"middle\">"
     << escape(c.x_label) << "</text>\n"
     << "<text transform=\"translate(18 " << num(kTop + ph / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(c.y_label) << "</text>\n";
  for (std::size_t i = 0; i < c.series.size(); ++i) {
    const auto& s = c.series[i];
    const char* colour = kPalette[i % std::size(kPalette)];
    std::string path;
    for (std::size_t k = 0; k < s.points.size(); ++k) {
      const auto [x, y] = s.points[k];
      if (k == 0) {
        path += "M" + num(sx(x)) + " " + num(sy(y));
      } else if (c.step) {
        path += " H" + num(sx(x)) + " V" + num(sy(y));
      } else {
        path += " L" + num(sx(x)) + " " + num(sy(y));
      }
    }
    if (!path.empty())
      os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"/>\n";
    const double ly = kTop + 10 + 18 * static_cast<double>(i);
    os << "<line x1=\"" << num(kWidth - kRight + 10) << "\" y1=\"" << num(ly) << "\" x2=\""
       << num(kWidth - kRight + 30) << "\" y2=\"" << num(ly) << "\" stroke=\"" << colour
       << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << num(kWidth - kRight + 35) << "\" y=\"" << num(ly + 4) << "\">" << escape(s.label)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string render(const BarChart& c) {
  require(c.labels.size() == c.values.size(), "bar chart needs one value per label");
  const double pw = kWidth - kLeft - 30, ph = kHeight - kTop - kBottom;
  const double peak = c.values.empty() ? 1.0 : std::max(1.0, *std::max_element(c.values.begin(), c.values.end()));
  std::ostringstream os;
  os << header(c.title);
  os << "<line x1=\"" << kLeft << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(kLeft + pw) << "\" y2=\""
     << num(kTop + ph) << "\" stroke=\"black\"/>\n";
  const double slot = c.values.empty() ? pw : pw / static_cast<double>(c.values.size());
  for (std::size_t i = 0; i < c.values.size(); ++i) {
    const double h = c.values[i] / peak * ph;
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(kTop + ph - h) << "\" width=\"" << num(slot * 0.7)
       << "\" height=\"" << num(h) << "\" fill=\"" << kPalette[i % std::size(kPalette)] << "\"/>\n"
       << "<text x=\"" << num(x + slot * 0.35) << "\" y=\"" << num(kTop + ph - h - 4)
       << "\" text-anchor=\"middle\">" << tick_label(c.values[i]) << "</text>\n"
       << "<text x=\"" << num(x + slot * 0.35) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">"
       << escape(c.labels[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string render(const Heatmap& c) {
  const std::size_t rows = c.cells.size();
  const std::size_t cols = rows ? c.cells[0].size() : 0;
  for (const auto& r : c.cells) require(r.size() == cols, "heatmap rows must have equal length");
  const double side = std::min(kWidth - kLeft - 40, kHeight - kTop - kBottom);
  double peak = 0;
  for (const auto& r : c.cells)
    for (double v : r) peak = std::max(peak, v);
  std::ostringstream os;
  os << header(c.title);
  for (std::size_t y = 0; y < rows; ++y)
    for (std::size_t x = 0; x < cols; ++x) {
      const double cw = side / static_cast<double>(cols), ch = side / static_cast<double>(rows);
      const double t = peak > 0 ? c.cells[y][x] / peak : 0.0;
      const int shade = static_cast<int>(std::lround(255 * (1 - t)));
      os << "<rect x=\"" << num(kLeft + cw * static_cast<double>(x)) << "\" y=\""
         << num(kTop + ch * static_cast<double>(y)) << "\" width=\"" << num(cw) << "\" height=\"" << num(ch)
         << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" stroke=\"#ccc\"/>\n";
    }
  os << "<text x=\"" << num(kLeft + side / 2) << "\" y=\"" << num(kTop + side + 25) << "\" text-anchor=\"middle\">"
     << escape(c.x_label) << "</text>\n"
     << "<text transform=\"translate(40 " << num(kTop + side / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(c.y_label) << "</text>\n</svg>\n";
  return os.str();
}

LineChart pr_chart(const json& curves, const std::string& title) {
  require(curves.is_object(), "PR curves must be an object of class -> [[recall, precision], ...]");
  LineChart c;
  c.title = title;
  c.x_label = "recall";
  c.y_label = "precision";
  c.step = true;
  for (const auto& [name, pts] : curves.items()) {
    Series s;
    s.label = name;
    for (const auto& p : pts) {
      require(p.is_array() && p.size() == 2, "PR points must be [recall, precision] pairs");
      const double r = p[0], pr = p[1];
      require(r >= 0 && r <= 1 && pr >= 0 && pr <= 1, "PR points must lie in [0, 1]");
      s.points.emplace_back(r, pr);
    }
    c.series.push_back(std::move(s));
  }
  return c;
}

namespace {

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write(const std::filesystem::path& p, const std::string& svg, std::vector<std::filesystem::path>& written) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << svg;
  if (!out) throw IoError("cannot write " + p.string());
  written.push_back(p);
}

}  // namespace

std::vector<std::filesystem::path> plot_input(const std::filesystem::path& input, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  if (std::filesystem::is_directory(input)) {
    const auto eval_dir = input / "eval";
    require(std::filesystem::is_directory(eval_dir), input.string() + " has no eval/ directory");
    std::map<int, json> reports;
    const std::regex name("epoch_(\\d+)\\.json");
    for (const auto& f : std::filesystem::directory_iterator(eval_dir)) {
      std::smatch m;
      const std::string fname = f.path().filename().string();
      if (std::regex_match(fname, m, name)) reports[std::stoi(m[1])] = read_json(f.path());
    }
    require(!reports.empty(), "no epoch reports under " + eval_dir.string());
    LineChart c;
    c.title = "mAP per epoch";
    c.x_label = "epoch";
    c.y_label = "mAP";
    c.x_min = 0;
    c.x_max = std::max(1, reports.rbegin()->first);
    std::map<std::string, Series> by_iou;
    for (const auto& [epoch, r] : reports)
      for (const auto& d : r.at("detection")) {
        const std::string label = "IoU " + tick_label(d.at("iou_threshold").get<double>());
        by_iou[label].label = label;
        by_iou[label].points.emplace_back(epoch, d.at("sr").at("mAP").get<double>());
      }
    for (auto& [k, s] : by_iou) c.series.push_back(std::move(s));
    write(out_dir / "map_per_epoch.svg", render(c), written);
    return written;
  }

  const json doc = read_json(input);
  require(doc.is_object(), input.string() + " is not a JSON object");
  if (doc.contains("detection")) {
    for (const auto& d : doc.at("detection")) {
      const std::string t = tick_label(d.at("iou_threshold").get<double>());
      write(out_dir / ("pr_sr_iou" + t + ".svg"), render(pr_chart(d.at("sr").at("pr_curves"), "PR curves (SR), IoU " + t)),
            written);
      if (!d.at("hr").is_null())
        write(out_dir / ("pr_hr_iou" + t + ".svg"),
              render(pr_chart(d.at("hr").at("pr_curves"), "PR curves (HR), IoU " + t)), written);
    }
  } else if (doc.contains("pr_curves")) {
    write(out_dir / "pr.svg", render(pr_chart(doc.at("pr_curves"), doc.value("title", std::string("PR curves")))),
          written);
  } else if (doc.contains("class_counts") && doc.contains("classes")) {
    BarChart bars;
    bars.title = "Instances per class";
    for (const auto& name : doc.at("classes")) {
      bars.labels.push_back(name);
      bars.values.push_back(doc.at("class_counts").at(name.get<std::string>()).get<double>());
    }
    write(out_dir / "class_counts.svg", render(bars), written);
    auto grid = [](const json& j) { return j.get<std::vector<std::vector<double>>>(); };
    write(out_dir / "location_histogram.svg",
          render(Heatmap{"Object centres", "x (fraction of width)", "y (fraction of height)",
                         grid(doc.at("location_histogram"))}),
          written);
    write(out_dir / "size_histogram.svg",
          render(Heatmap{"Object sizes", "width (fraction)", "height (fraction)", grid(doc.at("size_histogram"))}),
          written);
  } else {
    throw ContractError(input.string() + " is not a metrics report, statistics document or PR-curve document");
  }
  return written;
}

}  // namespace mcgr::plot
