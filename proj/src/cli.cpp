// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mcgr/data.hpp"
#include "mcgr/error.hpp"
#include "mcgr/plot.hpp"
#include "mcgr/toy.hpp"
#include "mcgr/training.hpp"

namespace mcgr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  bool json_out = false;
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

// Relative paths that do not exist locally fall back to MCGR_DATA_DIR.
fs::path data_path(const std::string& p) {
  fs::path path(p);
  if (path.is_relative() && !fs::exists(path))
    if (const char* root = std::getenv("MCGR_DATA_DIR"); root && *root) return fs::path(root) / path;
  return path;
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::vector<AnnotationRecord> read_labels(const fs::path& p, int classes) {
  if (!fs::exists(p)) return {};
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_yolo_annotations(ss.str(), classes);
  } catch (const FormatError& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

// ------------------------------------------------------------ subcommands

int cmd_prepare(const Common& c, const std::string& tiles_dir, int patch, int overlap, std::ostream& out,
                std::ostream& err) {
  require(!c.out.empty(), "prepare needs --out");
  require(patch >= 1 && overlap >= 0 && overlap < patch, "overlap must satisfy 0 <= overlap < patch size");
  const fs::path src = data_path(tiles_dir);
  require(fs::is_directory(src), "tiles directory " + src.string() + " does not exist");
  const fs::path dst(c.out);
  fs::create_directories(dst / "images");
  std::vector<fs::path> tiles;
  for (const auto& f : fs::directory_iterator(src))
    if (f.path().extension() == ".png") tiles.push_back(f.path());
  std::sort(tiles.begin(), tiles.end());
  DatasetManifest m;
  int failures = 0;
  for (const auto& t : tiles) {
    try {
      const ImageArray tile = load_png(t);
      const auto ann = read_labels(fs::path(t).replace_extension(".txt"), static_cast<int>(kBaseClasses.size()));
      for (const Patch& p : extract_patches(tile, t.stem().string(), patch, overlap)) {
        const std::string rel = "images/" + p.name + ".png";
        save_png(p.image, dst / rel);
        ManifestEntry e;
        e.image_path = rel;
        e.width = p.image.width();
        e.height = p.image.height();
        e.annotations =
            annotations_in_window(ann, tile.width(), tile.height(), p.top, p.left, p.image.height(), p.image.width());
        m.entries.push_back(std::move(e));
      }
    } catch (const Error& e) {
      ++failures;
      err << "prepare: tile " << t.filename().string() << " failed: " << e.what() << "\n";
    }
  }
  save_manifest(m, dst / "manifest.ndjson");
  if (c.json_out)
    out << json{{"tiles", tiles.size()}, {"failed", failures}, {"patches", m.entries.size()}}.dump() << "\n";
  else
    out << "tiles: " << tiles.size() << "  failed: " << failures << "  patches: " << m.entries.size() << "\n";
  return failures ? kExitFailure : 0;
}

int cmd_degrade(const Common& c, const std::string& manifest_path, int scale, std::ostream& out) {
  require(!c.out.empty(), "degrade needs --out");
  const fs::path mp = data_path(manifest_path);
  const DatasetManifest m = load_manifest(mp);
  const fs::path dst(c.out);
  DatasetManifest lr_m = m;
  for (auto& e : lr_m.entries) {
    const ImageArray hr = load_png(mp.parent_path() / e.image_path);
    const ImageArray lr = synthesize_lr(hr, scale);
    fs::create_directories((dst / e.image_path).parent_path());
    save_png(lr, dst / e.image_path);
    e.width = lr.width();
    e.height = lr.height();
  }
  save_manifest(lr_m, dst / "manifest.ndjson");
  if (c.json_out)
    out << json{{"images", lr_m.entries.size()}, {"scale", scale}}.dump() << "\n";
  else
    out << "degraded " << lr_m.entries.size() << " images by " << scale << "x\n";
  return 0;
}

int cmd_split(const Common& c, const std::string& manifest_path, const std::vector<double>& ratios,
              std::ostream& out) {
  require(ratios.size() == 3, "--ratios takes train,val,test");
  const DatasetManifest m = load_manifest(data_path(manifest_path));
  const std::uint64_t seed = c.seed.value_or(m.seed);
  const DatasetManifest s = split_dataset(m, {ratios[0], ratios[1], ratios[2]}, seed);
  const fs::path dst = c.out.empty() ? data_path(manifest_path) : fs::path(c.out);
  save_manifest(s, dst);
  const auto n = [&](Split sp) { return s.split_entries(sp).size(); };
  if (c.json_out)
    out << json{{"train", n(Split::train)}, {"val", n(Split::val)}, {"test", n(Split::test)}, {"seed", seed}}.dump()
        << "\n";
  else
    out << "train " << n(Split::train) << "  val " << n(Split::val) << "  test " << n(Split::test) << "\n";
  return 0;
}

int cmd_stats(const Common& c, const std::string& manifest_path, int bins, std::ostream& out) {
  const DatasetStats s = compute_statistics(load_manifest(data_path(manifest_path)), bins);
  const json j = to_json(s);
  if (!c.out.empty()) write_file(c.out, j.dump(2) + "\n");
  if (c.json_out) {
    out << j.dump() << "\n";
    return 0;
  }
  out << std::left << std::setw(16) << "class" << std::right << std::setw(8) << "train" << std::setw(8) << "val"
      << std::setw(8) << "test" << std::setw(8) << "total" << "\n";
  for (std::size_t k = 0; k < s.classes.size(); ++k)
    out << std::left << std::setw(16) << s.classes[k] << std::right << std::setw(8) << s.counts[0][k]
        << std::setw(8) << s.counts[1][k] << std::setw(8) << s.counts[2][k] << std::setw(8) << s.class_totals[k]
        << "\n";
  out << "instances " << s.total << " in " << s.images << " images\n";
  return 0;
}

int cmd_export_coco(const Common& c, const std::string& manifest_path, std::ostream& out) {
  const json coco = export_coco(load_manifest(data_path(manifest_path)));
  if (c.out.empty()) {
    out << coco.dump(c.json_out ? -1 : 2) << "\n";
  } else {
    write_file(c.out, coco.dump(2) + "\n");
    if (c.json_out)
      out << json{{"images", coco.at("images").size()}, {"annotations", coco.at("annotations").size()}}.dump() << "\n";
    else
      out << "wrote " << c.out << "\n";
  }
  return 0;
}

struct RunFile {
  TrainConfig train;
  fs::path manifest;
  fs::path data_root;
  fs::path run_dir;
};

RunFile load_run_file(const Common& c) {
  require(!c.config.empty(), "train needs --config");
  const fs::path cfg_path = data_path(c.config);
  const json j = read_json_file(cfg_path);
  require(j.is_object(), "run config must be a JSON object");
  for (const auto& [k, v] : j.items())
    require(k == "paths" || k == "train", "unknown key '" + k + "' in run config");
  RunFile r;
  r.train = train_config_from_json(j.value("train", json::object()));
  const json paths = j.value("paths", json::object());
  for (const auto& [k, v] : paths.items())
    require(k == "manifest" || k == "data_root" || k == "run_dir", "unknown key '" + k + "' in paths");
  require(paths.contains("manifest"), "run config needs paths.manifest");
  const fs::path base = cfg_path.parent_path();
  auto rel = [&](const std::string& p) {
    const fs::path path(p);
    if (path.is_absolute()) return path;
    if (fs::exists(base / path)) return base / path;
    return data_path(p);
  };
  r.manifest = rel(paths.at("manifest"));
  r.data_root = paths.contains("data_root") ? rel(paths.at("data_root")) : r.manifest.parent_path();
  r.run_dir = paths.contains("run_dir") ? fs::path(paths.at("run_dir").get<std::string>()) : fs::path("runs/mcgr");
  if (!c.out.empty()) r.run_dir = c.out;
  if (c.seed) r.train.seed = *c.seed;
  r.train.validate();
  return r;
}

int cmd_train(const Common& c, const std::string& resume, int stop_after, std::ostream& out) {
  const RunFile r = load_run_file(c);
  const DatasetManifest m = load_manifest(r.manifest);
  TrainOptions opt;
  if (!resume.empty()) opt.resume_from = fs::path(resume);
  if (stop_after > 0) opt.stop_after_epoch = stop_after;
  opt.on_record = [&](const json& rec) {
    if (c.json_out) {
      out << rec.dump() << "\n";
    } else if (rec.contains("event") && rec.at("event") == "eval") {
      out << "epoch " << rec.at("epoch") << "  step " << rec.at("step") << "  mAP " << fixed(rec.at("mAP"), 4)
          << "  PSNR " << fixed(rec.at("PSNR"), 2) << " (bicubic " << fixed(rec.at("PSNR_bicubic"), 2) << ")\n";
    } else if (rec.contains("event")) {
      out << rec.dump() << "\n";
    }
    out.flush();
  };
  const TrainResult res = train(r.train, m, r.data_root, r.run_dir, opt);
  const json summary = {{"run_dir", r.run_dir.string()}, {"steps", res.steps},     {"best_map", res.best_map},
                        {"halted", res.halted},           {"reason", res.halt_reason}};
  if (c.json_out)
    out << summary.dump() << "\n";
  else
    out << "finished " << res.steps << " steps in " << r.run_dir.string() << (res.halted ? " (halted)" : "") << "\n";
  return res.halted ? kExitFailure : 0;
}

int cmd_infer(const Common& c, const std::string& checkpoint, const std::vector<std::string>& images, double conf,
              double nms_iou, std::ostream& out) {
  require(!images.empty(), "infer needs at least one image");
  const ModelState state = load_checkpoint(data_path(checkpoint));
  if (!c.out.empty()) fs::create_directories(c.out);
  for (const auto& p : images) {
    const fs::path path = data_path(p);
    const ImageArray lr = load_png(path);
    const ImageArray sr = super_resolve(state, lr);
    const int stride = *std::max_element(state.detector.strides.begin(), state.detector.strides.end());
    const ImageArray view = sr.center_crop_to_multiple(stride);
    const double dx = (sr.width() - view.width()) / 2, dy = (sr.height() - view.height()) / 2;
    json dets = json::array();
    for (auto d : detect(state, view, conf, nms_iou)) {
      d.box = {d.box.x_min + dx, d.box.y_min + dy, d.box.x_max + dx, d.box.y_max + dy};
      dets.push_back(to_json(d, path.filename().string()));
    }
    const json doc = {{"image", path.filename().string()},
                      {"width", sr.width()},
                      {"height", sr.height()},
                      {"detections", dets}};
    if (!c.out.empty()) {
      save_png(sr, fs::path(c.out) / (path.stem().string() + "_sr.png"));
      write_file(fs::path(c.out) / (path.stem().string() + ".json"), doc.dump(2) + "\n");
    }
    if (c.json_out)
      out << doc.dump() << "\n";
    else
      out << path.filename().string() << ": " << dets.size() << " detections\n";
  }
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& manifest_path,
             const std::string& split, std::vector<double> ious, int scale, double conf, double nms_iou, bool no_hr,
             std::ostream& out) {
  const ModelState state = load_checkpoint(data_path(checkpoint));
  const fs::path mp = data_path(manifest_path);
  const DatasetManifest m = load_manifest(mp);
  EvalOptions opt;
  opt.split = parse_split(split);
  opt.scale = scale ? scale : state.generator.scale;
  if (!ious.empty()) opt.iou_thresholds = ious;
  opt.conf_threshold = conf;
  opt.nms_iou = nms_iou;
  opt.detect_on_hr = !no_hr;
  const json report = evaluate(state, m, mp.parent_path(), opt).to_json();
  if (!c.out.empty()) write_file(c.out, report.dump(2) + "\n");
  if (c.json_out) {
    out << report.dump() << "\n";
    return 0;
  }
  const json& t4 = report.at("table4");
  const json& t5 = report.at("table5");
  auto cell = [&](const json& v) { return v.is_null() ? std::string("-") : fixed(v.get<double>(), 3); };
  out << "split " << report.at("split").get<std::string>() << ", " << report.at("images") << " images, scale "
      << report.at("scale") << "\n";
  out << std::setw(10) << "MSE" << std::setw(10) << "PSNR" << std::setw(10) << "SSIM" << "\n"
      << std::setw(10) << fixed(t4.at("MSE"), 2) << std::setw(10) << fixed(t4.at("PSNR"), 2) << std::setw(10)
      << fixed(t4.at("SSIM"), 4) << "\n";
  out << "mAP@" << report.at("iou_threshold").get<double>() << ":" << std::setw(10) << "HR" << std::setw(10) << "SF2"
      << std::setw(10) << "SF4" << std::setw(12) << "ms/image" << "\n"
      << std::setw(18) << cell(t5.at("mAP_HR")) << std::setw(10) << cell(t5.at("mAP_SF2")) << std::setw(10)
      << cell(t5.at("mAP_SF4")) << std::setw(12) << fixed(t5.at("ms_per_image"), 1) << "\n";
  return 0;
}

int cmd_plot(const Common& c, const std::vector<std::string>& inputs, std::ostream& out) {
  require(!c.out.empty(), "plot needs --out");
  json written = json::array();
  for (const auto& in : inputs)
    for (const auto& p : plot::plot_input(data_path(in), c.out)) written.push_back(p.string());
  if (c.json_out)
    out << json{{"written", written}}.dump() << "\n";
  else
    for (const auto& p : written) out << p.get<std::string>() << "\n";
  return 0;
}

int cmd_toy(const Common& c, ToyOptions opt, std::ostream& out) {
  require(!c.out.empty(), "toy needs --out");
  if (c.seed) opt.seed = *c.seed;
  const DatasetManifest m = write_toy_corpus(c.out, opt);
  if (c.json_out)
    out << json{{"images", m.entries.size()}, {"instances", m.instance_count()}}.dump() << "\n";
  else
    out << "wrote " << m.entries.size() << " images (" << m.instance_count() << " objects) to " << c.out << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cyclic super-resolution GAN with an auxiliary detector"};
  app.name("mcgr");
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  std::uint64_t seed = 0;
  app.add_flag("--json", c.json_out, "Machine-readable JSON on stdout");
  auto* seed_opt = app.add_option("--seed", seed, "Seed override");
  app.add_option("--config", c.config, "Run config file");
  app.add_option("--out", c.out, "Output path");

  std::string tiles, manifest, checkpoint, split = "val", resume;
  int patch = 1000, overlap = 100, scale = 0, bins = 9, stop_after = 0;
  std::vector<double> ratios{0.70, 0.20, 0.10}, ious;
  std::vector<std::string> images, inputs;
  double conf = kDefaultConfThreshold, nms_iou = kDefaultNmsIou;
  bool no_hr = false;
  ToyOptions toy;

  auto* prepare = app.add_subcommand("prepare", "Tile large images into overlapping patches");
  prepare->add_option("--tiles", tiles, "Directory of PNG tiles with optional YOLO labels")->required();
  prepare->add_option("--patch", patch, "Patch size in pixels");
  prepare->add_option("--overlap", overlap, "Overlap between neighbouring patches");

  auto* degrade = app.add_subcommand("degrade", "Synthesize bicubic low-resolution copies");
  degrade->add_option("--manifest", manifest)->required();
  degrade->add_option("--scale", scale)->required()->check(CLI::IsMember({2, 4}));

  auto* split_cmd = app.add_subcommand("split", "Assign train/val/test splits");
  split_cmd->add_option("--manifest", manifest)->required();
  split_cmd->add_option("--ratios", ratios, "train val test")->expected(3);

  auto* stats = app.add_subcommand("stats", "Class counts and location/size histograms");
  stats->add_option("--manifest", manifest)->required();
  stats->add_option("--bins", bins)->check(CLI::Range(1, 1000));

  auto* coco = app.add_subcommand("export-coco", "Convert a manifest to COCO JSON");
  coco->add_option("--manifest", manifest)->required();

  auto* train_cmd = app.add_subcommand("train", "Train from a run config");
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");
  train_cmd->add_option("--stop-after-epoch", stop_after, "Stop once this epoch completes")->check(CLI::PositiveNumber);

  auto* infer = app.add_subcommand("infer", "Super-resolve images and detect objects");
  infer->add_option("--checkpoint", checkpoint)->required();
  infer->add_option("images", images, "Low-resolution PNG images")->required();
  infer->add_option("--conf", conf)->check(CLI::Range(0.0, 1.0));
  infer->add_option("--nms", nms_iou)->check(CLI::Range(0.0, 1.0));

  auto* eval_cmd = app.add_subcommand("eval", "Image quality and detection report");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--manifest", manifest)->required();
  eval_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--iou", ious, "IoU thresholds (repeatable)")->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--scale", scale)->check(CLI::IsMember({2, 4}));
  eval_cmd->add_option("--conf", conf)->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--nms", nms_iou)->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_flag("--no-hr", no_hr, "Skip detection on ground-truth HR images");

  auto* plot_cmd = app.add_subcommand("plot", "Render SVG charts");
  plot_cmd->add_option("inputs", inputs, "Reports, statistics, PR-curve JSON or run directories")->required();

  auto* toy_cmd = app.add_subcommand("toy", "Generate the synthetic toy corpus");
  toy_cmd->add_option("--train", toy.train);
  toy_cmd->add_option("--val", toy.val);
  toy_cmd->add_option("--test", toy.test);
  toy_cmd->add_option("--size", toy.size);
  toy_cmd->add_flag("--single-class", toy.single_class);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : kExitUsage;
  }
  if (*seed_opt) c.seed = seed;

  try {
    if (*prepare) return cmd_prepare(c, tiles, patch, overlap, out, err);
    if (*degrade) return cmd_degrade(c, manifest, scale, out);
    if (*split_cmd) return cmd_split(c, manifest, ratios, out);
    if (*stats) return cmd_stats(c, manifest, bins, out);
    if (*coco) return cmd_export_coco(c, manifest, out);
    if (*train_cmd) return cmd_train(c, resume, stop_after, out);
    if (*infer) return cmd_infer(c, checkpoint, images, conf, nms_iou, out);
    if (*eval_cmd) return cmd_eval(c, checkpoint, manifest, split, ious, scale, conf, nms_iou, no_hr, out);
    if (*plot_cmd) return cmd_plot(c, inputs, out);
    if (*toy_cmd) return cmd_toy(c, toy, out);
  } catch (const ContractError& e) {
    err << "mcgr: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "mcgr: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mcgr::cli
