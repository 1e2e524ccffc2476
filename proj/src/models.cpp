// Copyright 2026 The MCGR Authors
// SPDX-License-Identifier: Apache-2.0

#include "mcgr/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mcgr/error.hpp"
#include "mcgr/image.hpp"

namespace mcgr {

using nlohmann::json;

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_int(int v) {
  int n = 0;
  while (v > 1) {
    v >>= 1;
    ++n;
  }
  return n;
}

double he_std(std::int64_t fan_in) {
  return std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope)) / std::sqrt(static_cast<double>(fan_in));
}

void conv_params(std::vector<ParamSpec>& out, const std::string& name, int cin, int cout, int k, double gain = 1.0) {
  out.push_back({name + ".weight", {cout, cin, k, k}, gain * he_std(static_cast<std::int64_t>(cin) * k * k), 0.0});
  out.push_back({name + ".bias", {cout}, 0.0, 0.0});
}

const ag::Var& lookup(const VarTable& p, const std::string& key) {
  auto it = p.find(key);
  require(it != p.end(), "missing parameter '" + key + "'");
  return it->second;
}

// Bicubic resize of an image batch by `scale`, up or down.
ag::Var resampled(const ag::Var& x, int scale, bool up) {
  const auto h = static_cast<int>(x.shape()[2]);
  const auto w = static_cast<int>(x.shape()[3]);
  const int oh = up ? h * scale : h / scale;
  const int ow = up ? w * scale : w / scale;
  return ag::separable_linear(x, bicubic_matrix(h, oh), bicubic_matrix(w, ow));
}

ag::Var conv(const VarTable& p, const std::string& name, const ag::Var& x, int stride, int pad) {
  return ag::add_channel_bias(ag::conv2d(x, lookup(p, name + ".weight"), {stride, pad}), lookup(p, name + ".bias"));
}

void require_finite(const ag::Var& x, const char* where) {
  if (!all_finite(x.value())) throw NumericError(std::string(where) + ": non-finite input");
}

void require_image_batch(const ag::Var& x, int channels, const char* where) {
  require(x.shape().size() == 4, std::string(where) + ": expected (B, C, H, W), got " + to_string(x.shape()));
  require(x.shape()[1] == channels, std::string(where) + ": expected " + std::to_string(channels) +
                                        " channels, got " + std::to_string(x.shape()[1]));
}

}  // namespace

void GeneratorConfig::validate() const {
  require(n_rfa_blocks >= 1 && width >= 1 && units_per_block >= 1, "generator sizes must be positive");
  require(kernel >= 1 && kernel % 2 == 1, "generator kernel must be odd");
  require(is_power_of_two(scale) && scale >= 2, "generator scale must be a power of two >= 2");
  require(channels == 1 || channels == 3, "generator channels must be 1 or 3");
}

void CriticConfig::validate() const {
  require(base_width >= 1 && stages >= 1 && kernel % 2 == 1, "invalid critic config");
  require(channels == 1 || channels == 3, "critic channels must be 1 or 3");
  require(height >= 1 && width >= 1 && height % (1 << stages) == 0 && width % (1 << stages) == 0,
          "critic input size must be divisible by 2^stages");
}

void DetectorConfig::validate() const {
  require(n_classes >= 1, "detector needs at least one class");
  require(!strides.empty(), "detector needs at least one stride level");
  for (std::size_t i = 0; i < strides.size(); ++i) {
    require(is_power_of_two(strides[i]) && strides[i] >= 2, "detector strides must be powers of two >= 2");
    if (i) require(strides[i] > strides[i - 1], "detector strides must increase");
  }
  require(anchors_per_level >= 1 && width >= 1, "invalid detector config");
}

std::int64_t parameter_count(const std::vector<ParamSpec>& specs) {
  std::int64_t n = 0;
  for (const auto& s : specs) n += numel(s.shape);
  return n;
}

void initialize(const std::vector<ParamSpec>& specs, ParamTable& table, std::mt19937_64& rng) {
  for (const auto& s : specs) {
    Tensor t(s.shape, s.init_fill);
    if (s.init_std > 0) {
      std::normal_distribution<double> normal(0.0, s.init_std);
      for (double& v : t.data()) v += normal(rng);
    }
    table[s.name] = std::move(t);
  }
}

VarTable make_leaves(const ParamTable& table, bool requires_grad, const std::vector<std::string>& prefixes) {
  VarTable out;
  for (const auto& [name, value] : table) {
    bool take = prefixes.empty();
    for (const auto& p : prefixes)
      if (name.compare(0, p.size(), p) == 0) take = true;
    if (take) out.emplace(name, ag::Var(value, requires_grad));
  }
  return out;
}

std::vector<ParamSpec> rfa_block_params(const std::string& prefix, const GeneratorConfig& cfg) {
  std::vector<ParamSpec> out;
  for (int u = 0; u < cfg.units_per_block; ++u) {
    const std::string unit = prefix + ".units." + std::to_string(u);
    conv_params(out, unit + ".conv1", cfg.width, cfg.width, cfg.kernel);
    conv_params(out, unit + ".conv2", cfg.width, cfg.width, cfg.kernel);
  }
  conv_params(out, prefix + ".fusion", cfg.width * cfg.units_per_block, cfg.width, 1, 0.1);
  return out;
}

ag::Var rfa_block_forward(const VarTable& p, const std::string& prefix, const ag::Var& x, const GeneratorConfig& cfg) {
  require(x.shape().size() == 4 && x.shape()[1] == cfg.width,
          "RFA block expects " + std::to_string(cfg.width) + " channels, got " + to_string(x.shape()));
  const int pad = cfg.kernel / 2;
  std::vector<ag::Var> unit_outputs;
  ag::Var h = x;
  for (int u = 0; u < cfg.units_per_block; ++u) {
    const std::string unit = prefix + ".units." + std::to_string(u);
    ag::Var r = ag::leaky_relu(conv(p, unit + ".conv1", h, 1, pad), kLeakySlope);
    r = conv(p, unit + ".conv2", r, 1, pad);
    h = ag::add(h, r);
    unit_outputs.push_back(h);
  }
  ag::Var fused = conv(p, prefix + ".fusion", ag::concat_channels(unit_outputs), 1, 0);
  return ag::add(x, fused);
}

HrGenerator::HrGenerator(GeneratorConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) {
  cfg_.validate();
}

std::vector<ParamSpec> HrGenerator::parameters() const {
  std::vector<ParamSpec> out;
  conv_params(out, prefix_ + ".head", cfg_.channels, cfg_.width, cfg_.kernel);
  for (int b = 0; b < cfg_.n_rfa_blocks; ++b) {
    auto block = rfa_block_params(prefix_ + ".blocks." + std::to_string(b), cfg_);
    out.insert(out.end(), block.begin(), block.end());
  }
  for (int s = 0; s < log2_int(cfg_.scale); ++s)
    conv_params(out, prefix_ + ".upsample." + std::to_string(s), cfg_.width, cfg_.width * 4, cfg_.kernel);
  conv_params(out, prefix_ + ".tail", cfg_.width, cfg_.channels, cfg_.kernel, cfg_.resample_skip ? 0.0 : 1.0);
  return out;
}

ag::Var HrGenerator::forward(const VarTable& p, const ag::Var& lr) const {
  require_image_batch(lr, cfg_.channels, "hr_generator");
  require_finite(lr, "hr_generator");
  const int pad = cfg_.kernel / 2;
  ag::Var head = conv(p, prefix_ + ".head", lr, 1, pad);
  ag::Var h = head;
  for (int b = 0; b < cfg_.n_rfa_blocks; ++b) h = rfa_block_forward(p, prefix_ + ".blocks." + std::to_string(b), h, cfg_);
  h = ag::add(h, head);
  for (int s = 0; s < log2_int(cfg_.scale); ++s)
    h = ag::pixel_shuffle(conv(p, prefix_ + ".upsample." + std::to_string(s), h, 1, pad), 2);
  ag::Var out = conv(p, prefix_ + ".tail", h, 1, pad);
  return cfg_.resample_skip ? ag::add(out, resampled(lr, cfg_.scale, true)) : out;
}

std::int64_t HrGenerator::expected_parameter_count(const GeneratorConfig& c) {
  const std::int64_t k2 = static_cast<std::int64_t>(c.kernel) * c.kernel;
  const std::int64_t w = c.width;
  const std::int64_t head = c.channels * w * k2 + w;
  const std::int64_t block = c.units_per_block * 2 * (w * w * k2 + w) + (c.units_per_block * w * w + w);
  const std::int64_t up = log2_int(c.scale) * (w * 4 * w * k2 + 4 * w);
  const std::int64_t tail = w * c.channels * k2 + c.channels;
  return head + c.n_rfa_blocks * block + up + tail;
}

LrGenerator::LrGenerator(GeneratorConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) {
  cfg_.validate();
}

std::vector<ParamSpec> LrGenerator::parameters() const {
  std::vector<ParamSpec> out;
  conv_params(out, prefix_ + ".head", cfg_.channels, cfg_.width, cfg_.kernel);
  for (int s = 0; s < log2_int(cfg_.scale); ++s)
    conv_params(out, prefix_ + ".reduce." + std::to_string(s), cfg_.width, cfg_.width, cfg_.kernel);
  for (int b = 0; b < cfg_.n_rfa_blocks; ++b) {
    auto block = rfa_block_params(prefix_ + ".blocks." + std::to_string(b), cfg_);
    out.insert(out.end(), block.begin(), block.end());
  }
  conv_params(out, prefix_ + ".tail", cfg_.width, cfg_.channels, cfg_.kernel, cfg_.resample_skip ? 0.0 : 1.0);
  return out;
}

ag::Var LrGenerator::forward(const VarTable& p, const ag::Var& hr) const {
  require_image_batch(hr, cfg_.channels, "lr_generator");
  require(hr.shape()[2] % cfg_.scale == 0 && hr.shape()[3] % cfg_.scale == 0,
          "lr_generator: input " + to_string(hr.shape()) + " not divisible by scale " + std::to_string(cfg_.scale));
  require_finite(hr, "lr_generator");
  const int pad = cfg_.kernel / 2;
  ag::Var h = conv(p, prefix_ + ".head", hr, 1, pad);
  for (int s = 0; s < log2_int(cfg_.scale); ++s)
    h = ag::leaky_relu(conv(p, prefix_ + ".reduce." + std::to_string(s), h, 2, pad), kLeakySlope);
  ag::Var trunk_in = h;
  for (int b = 0; b < cfg_.n_rfa_blocks; ++b) h = rfa_block_forward(p, prefix_ + ".blocks." + std::to_string(b), h, cfg_);
  h = ag::add(h, trunk_in);
  ag::Var out = conv(p, prefix_ + ".tail", h, 1, pad);
  return cfg_.resample_skip ? ag::add(out, resampled(hr, cfg_.scale, false)) : out;
}

std::int64_t LrGenerator::expected_parameter_count(const GeneratorConfig& c) {
  const std::int64_t k2 = static_cast<std::int64_t>(c.kernel) * c.kernel;
  const std::int64_t w = c.width;
  const std::int64_t head = c.channels * w * k2 + w;
  const std::int64_t reduce = log2_int(c.scale) * (w * w * k2 + w);
  const std::int64_t block = c.units_per_block * 2 * (w * w * k2 + w) + (c.units_per_block * w * w + w);
  const std::int64_t tail = w * c.channels * k2 + c.channels;
  return head + reduce + c.n_rfa_blocks * block + tail;
}

Critic::Critic(CriticConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) { cfg_.validate(); }

std::vector<ParamSpec> Critic::parameters() const {
  std::vector<ParamSpec> out;
  int cin = cfg_.channels;
  for (int s = 0; s < cfg_.stages; ++s) {
    const int cout = cfg_.base_width << s;
    conv_params(out, prefix_ + ".stages." + std::to_string(s), cin, cout, cfg_.kernel);
    cin = cout;
  }
  out.push_back({prefix_ + ".score.weight", {1, cin, 1, 1}, 1.0 / std::sqrt(static_cast<double>(cin)), 0.0});
  out.push_back({prefix_ + ".score.bias", {1}, 0.0, 0.0});
  return out;
}

ag::Var Critic::forward(const VarTable& p, const ag::Var& image) const {
  require_image_batch(image, cfg_.channels, "critic");
  require(image.shape()[2] == cfg_.height && image.shape()[3] == cfg_.width,
          "critic '" + prefix_ + "' scores " + std::to_string(cfg_.width) + "x" + std::to_string(cfg_.height) +
              " images, got " + to_string(image.shape()));
  ag::Var h = image;
  for (int s = 0; s < cfg_.stages; ++s)
    h = ag::leaky_relu(conv(p, prefix_ + ".stages." + std::to_string(s), h, 2, cfg_.kernel / 2), kLeakySlope);
  h = conv(p, prefix_ + ".score", ag::spatial_mean(h), 1, 0);
  return ag::reshape(h, {image.shape()[0]});
}

Detector::Detector(DetectorConfig cfg, std::string prefix) : cfg_(std::move(cfg)), prefix_(std::move(prefix)) {
  cfg_.validate();
}

namespace {
int stage_width(int base, int stage) { return base << std::min(stage, 3); }
}  // namespace

std::vector<ParamSpec> Detector::parameters() const {
  std::vector<ParamSpec> out;
  const int stages = log2_int(cfg_.strides.back());
  int cin = cfg_.channels;
  for (int s = 0; s < stages; ++s) {
    const int cout = stage_width(cfg_.width, s);
    const std::string stage = prefix_ + ".backbone." + std::to_string(s);
    conv_params(out, stage + ".down", cin, cout, 3);
    conv_params(out, stage + ".conv", cout, cout, 3);
    cin = cout;
  }
  const int per_anchor = cfg_.outputs_per_anchor();
  for (std::size_t l = 0; l < cfg_.strides.size(); ++l) {
    const int c = stage_width(cfg_.width, log2_int(cfg_.strides[l]) - 1);
    const std::string head = prefix_ + ".head." + std::to_string(l);
    out.push_back({head + ".weight", {cfg_.anchors_per_level * per_anchor, c, 1, 1}, 0.01, 0.0});
    out.push_back({head + ".bias", {cfg_.anchors_per_level * per_anchor}, 0.0, 0.0});
  }
  return out;
}

std::vector<ag::Var> Detector::forward(const VarTable& p, const ag::Var& image) const {
  require_image_batch(image, cfg_.channels, "detector");
  for (int stride : cfg_.strides)
    require(image.shape()[2] % stride == 0 && image.shape()[3] % stride == 0,
            "detector: input " + to_string(image.shape()) + " not divisible by stride " + std::to_string(stride));
  const int stages = log2_int(cfg_.strides.back());
  std::vector<ag::Var> grids;
  std::size_t level = 0;
  ag::Var h = image;
  for (int s = 0; s < stages; ++s) {
    const std::string stage = prefix_ + ".backbone." + std::to_string(s);
    h = ag::leaky_relu(conv(p, stage + ".down", h, 2, 1), kLeakySlope);
    h = ag::leaky_relu(conv(p, stage + ".conv", h, 1, 1), kLeakySlope);
    if (level < cfg_.strides.size() && (2 << s) == cfg_.strides[level]) {
      grids.push_back(conv(p, prefix_ + ".head." + std::to_string(level), h, 1, 0));
      ++level;
    }
  }
  return grids;
}

bool ModelState::operator==(const ModelState& o) const {
  return to_json(generator) == to_json(o.generator) && to_json(critic_hr) == to_json(o.critic_hr) &&
         to_json(critic_lr) == to_json(o.critic_lr) && to_json(detector) == to_json(o.detector) &&
         anchors == o.anchors && params == o.params && adam.m == o.adam.m && adam.v == o.adam.v && step == o.step &&
         epoch == o.epoch && rng_state == o.rng_state;
}

Networks::Networks(const ModelState& s)
    : hr_gen(s.generator),
      lr_gen(s.generator),
      critic_hr(s.critic_hr, "critic_hr"),
      critic_lr(s.critic_lr, "critic_lr"),
      detector(s.detector) {}

std::vector<ParamSpec> Networks::all_parameters() const {
  std::vector<ParamSpec> out;
  for (auto part : {hr_gen.parameters(), lr_gen.parameters(), critic_hr.parameters(), critic_lr.parameters(),
                    detector.parameters()})
    out.insert(out.end(), part.begin(), part.end());
  return out;
}

ModelState create_model_state(const GeneratorConfig& gen, const CriticConfig& critic_hr, const CriticConfig& critic_lr,
                              const DetectorConfig& det, const AnchorSet& anchors, std::uint64_t seed) {
  ModelState s;
  s.generator = gen;
  s.critic_hr = critic_hr;
  s.critic_lr = critic_lr;
  s.detector = det;
  require(anchors.size() == det.strides.size(), "one anchor list per detector level required");
  for (const auto& level : anchors) {
    require(static_cast<int>(level.size()) == det.anchors_per_level, "anchor count per level mismatch");
    for (const auto& a : level) require(a[0] > 0 && a[1] > 0, "anchors must be positive");
  }
  s.anchors = anchors;
  Networks nets(s);
  std::mt19937_64 rng(seed);
  auto specs = nets.all_parameters();
  initialize(specs, s.params, rng);
  // Objectness starts at a low prior so early detections are sparse.
  for (std::size_t l = 0; l < det.strides.size(); ++l) {
    Tensor& bias = s.params.at("detector.head." + std::to_string(l) + ".bias");
    for (int a = 0; a < det.anchors_per_level; ++a) bias[a * det.outputs_per_anchor() + 4] = -4.0;
  }
  for (const auto& [name, value] : s.params) {
    s.adam.m[name] = Tensor(value.shape());
    s.adam.v[name] = Tensor(value.shape());
  }
  std::ostringstream os;
  os << rng;
  s.rng_state = os.str();
  return s;
}

json to_json(const GeneratorConfig& c) {
  return {{"n_rfa_blocks", c.n_rfa_blocks}, {"width", c.width}, {"kernel", c.kernel},
          {"scale", c.scale}, {"units_per_block", c.units_per_block}, {"channels", c.channels},
          {"resample_skip", c.resample_skip}};
}

json to_json(const CriticConfig& c) {
  return {{"base_width", c.base_width}, {"stages", c.stages}, {"kernel", c.kernel},
          {"channels", c.channels}, {"height", c.height}, {"width", c.width}};
}

json to_json(const DetectorConfig& c) {
  return {{"n_classes", c.n_classes}, {"strides", c.strides}, {"anchors_per_level", c.anchors_per_level},
          {"width", c.width}, {"channels", c.channels}};
}

GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c;
  c.n_rfa_blocks = j.at("n_rfa_blocks");
  c.width = j.at("width");
  c.kernel = j.at("kernel");
  c.scale = j.at("scale");
  c.units_per_block = j.at("units_per_block");
  c.channels = j.at("channels");
  c.resample_skip = j.value("resample_skip", false);
  c.validate();
  return c;
}

CriticConfig critic_config_from_json(const json& j) {
  CriticConfig c;
  c.base_width = j.at("base_width");
  c.stages = j.at("stages");
  c.kernel = j.at("kernel");
  c.channels = j.at("channels");
  c.height = j.at("height");
  c.width = j.at("width");
  c.validate();
  return c;
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig c;
  c.n_classes = j.at("n_classes");
  c.strides = j.at("strides").get<std::vector<int>>();
  c.anchors_per_level = j.at("anchors_per_level");
  c.width = j.at("width");
  c.channels = j.at("channels");
  c.validate();
  return c;
}

namespace {

constexpr char kMagic[8] = {'M', 'C', 'G', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

std::map<std::string, const Tensor*> archive_arrays(const ModelState& s) {
  std::map<std::string, const Tensor*> arrays;
  for (const auto& [k, v] : s.params) arrays["param." + k] = &v;
  for (const auto& [k, v] : s.adam.m) arrays["adam.m." + k] = &v;
  for (const auto& [k, v] : s.adam.v) arrays["adam.v." + k] = &v;
  return arrays;
}

}  // namespace

void save_checkpoint(const ModelState& s, const json& extra, const std::filesystem::path& path) {
  const auto arrays = archive_arrays(s);
  json index = json::array();
  for (const auto& [key, t] : arrays) index.push_back({{"key", key}, {"shape", t->shape()}});
  json meta{{"format_version", kFormatVersion},
            {"generator", to_json(s.generator)},
            {"critic_hr", to_json(s.critic_hr)},
            {"critic_lr", to_json(s.critic_lr)},
            {"detector", to_json(s.detector)},
            {"anchors", s.anchors},
            {"step", s.step},
            {"epoch", s.epoch},
            {"rng_state", s.rng_state},
            {"arrays", index},
            {"extra", extra}};
  const std::string text = meta.dump();
  // Written beside the target and renamed, so a killed process never leaves
  // a truncated checkpoint under the final name.
  auto tmp = path;
  tmp += ".partial";
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [key, t] : arrays)
    out.write(reinterpret_cast<const char*>(t->raw()), static_cast<std::streamsize>(t->size() * sizeof(double)));
  out.close();
  if (!out) throw IoError("failed writing checkpoint " + path.string());
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

ModelState load_checkpoint(const std::filesystem::path& path, json* extra) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("not a checkpoint: " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("truncated checkpoint header: " + path.string());
  json meta = json::parse(text);
  if (meta.at("format_version").get<std::uint32_t>() != kFormatVersion)
    throw FormatError("unsupported checkpoint version in " + path.string());
  ModelState s;
  s.generator = generator_config_from_json(meta.at("generator"));
  s.critic_hr = critic_config_from_json(meta.at("critic_hr"));
  s.critic_lr = critic_config_from_json(meta.at("critic_lr"));
  s.detector = detector_config_from_json(meta.at("detector"));
  s.anchors = meta.at("anchors").get<AnchorSet>();
  s.step = meta.at("step");
  s.epoch = meta.at("epoch");
  s.rng_state = meta.at("rng_state");
  for (const auto& entry : meta.at("arrays")) {
    const std::string key = entry.at("key");
    Tensor t(entry.at("shape").get<Shape>());
    in.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw FormatError("truncated checkpoint array '" + key + "' in " + path.string());
    if (key.rfind("param.", 0) == 0) s.params[key.substr(6)] = std::move(t);
    else if (key.rfind("adam.m.", 0) == 0) s.adam.m[key.substr(7)] = std::move(t);
    else if (key.rfind("adam.v.", 0) == 0) s.adam.v[key.substr(7)] = std::move(t);
    else throw FormatError("unknown checkpoint array '" + key + "'");
  }
  if (extra) *extra = meta.at("extra");
  return s;
}

}  // namespace mcgr
