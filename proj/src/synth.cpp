#include "asiseg/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "asiseg/error.hpp"
#include "asiseg/knowledge_bank.hpp"
#include "asiseg/seed.hpp"

namespace asiseg {

namespace fs = std::filesystem;
using std::numbers::pi;

namespace {

constexpr double kMinVisibleFraction = 0.5;
constexpr double kShapeMargin = 14.0;
constexpr std::array<double, 3> kTissue = {0.62, 0.30, 0.28};
constexpr double kStripeDepth = 0.2;

// Relative amplitudes of the first three harmonics, per class (cycled for K > 7).
constexpr std::array<std::array<double, 3>, 7> kHarmonics = {{{1.0, 0.5, 0.25},
                                                             {1.0, 0.0, 0.6},
                                                             {1.0, 0.7, 0.0},
                                                             {0.6, 1.0, 0.3},
                                                             {1.0, 0.3, 0.6},
                                                             {0.8, 0.0, 0.9},
                                                             {1.0, 0.8, 0.5}}};
constexpr double kBaseF0 = 220.0;
constexpr double kF0Step = 1.26;  // about four semitones between neighbouring classes
constexpr double kCommandPeak = 0.5;
constexpr double kCommandNoise = 0.01;

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  double normal(double stddev) { return std::normal_distribution<double>(0.0, stddev)(gen_); }
  int64_t integer(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(gen_); }

 private:
  std::mt19937_64 gen_;
};

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h -= std::floor(h);
  const double scaled = h * 6.0;
  const int i = static_cast<int>(scaled) % 6;
  const double f = scaled - std::floor(scaled);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

uint64_t split_tag(const std::string& split) { return fnv1a64(split); }

std::string sample_id(int64_t index) {
  auto digits = std::to_string(index);
  return std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

}  // namespace

void SynthConfig::validate() const {
  check(num_classes >= 1, ErrorCode::kConfig, "num_classes must be >= 1");
  check(image_size >= 2 * kShapeMargin + 1 && image_size % 8 == 0, ErrorCode::kConfig,
        "image_size must be a multiple of 8 and at least 32");
  check(n_train >= 0 && n_val >= 0, ErrorCode::kConfig, "split sizes must be non-negative");
  check(max_instruments >= 1 && max_instruments <= num_classes, ErrorCode::kConfig,
        "max_instruments must be in [1, num_classes]");
  check(noise_level >= 0, ErrorCode::kConfig, "noise_level must be non-negative");
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"num_classes", c.num_classes}, {"image_size", c.image_size}, {"n_train", c.n_train},
          {"n_val", c.n_val},             {"max_instruments", c.max_instruments},
          {"noise_level", c.noise_level}, {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.num_classes = j.at("num_classes").get<int>();
    c.image_size = j.at("image_size").get<int64_t>();
    c.n_train = j.at("n_train").get<int64_t>();
    c.n_val = j.at("n_val").get<int64_t>();
    c.max_instruments = j.at("max_instruments").get<int>();
    c.noise_level = j.at("noise_level").get<double>();
    c.seed = j.at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const SceneSpec& spec) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& s : spec.shapes) {
    shapes.push_back({{"class_index", s.class_index}, {"cx", s.cx}, {"cy", s.cy}, {"radius", s.radius},
                      {"rotation", s.rotation}, {"aspect", s.aspect}, {"hue", s.hue},
                      {"saturation", s.saturation}, {"value", s.value}});
  }
  return {{"shapes", shapes},
          {"shade_fx", spec.shade_fx},
          {"shade_fy", spec.shade_fy},
          {"shade_phase", spec.shade_phase},
          {"noise_seed", spec.noise_seed}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec spec;
  try {
    for (const auto& s : j.at("shapes")) {
      spec.shapes.push_back({s.at("class_index").get<int>(), s.at("cx").get<double>(), s.at("cy").get<double>(),
                             s.at("radius").get<double>(), s.at("rotation").get<double>(),
                             s.at("aspect").get<double>(), s.at("hue").get<double>(),
                             s.at("saturation").get<double>(), s.at("value").get<double>()});
    }
    spec.shade_fx = j.at("shade_fx").get<double>();
    spec.shade_fy = j.at("shade_fy").get<double>();
    spec.shade_phase = j.at("shade_phase").get<double>();
    spec.noise_seed = j.at("noise_seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, std::string("scene spec: ") + e.what());
  }
  return spec;
}

torch::Tensor polygon_mask(const ShapeParams& shape, int64_t size) {
  const int sides = shape.class_index + 3;
  const double apothem = shape.radius * std::cos(pi / sides);
  const double c = std::cos(shape.rotation), s = std::sin(shape.rotation);
  std::vector<std::pair<double, double>> normals;
  for (int i = 0; i < sides; ++i) {
    const double a = 2 * pi * (i + 0.5) / sides;
    normals.emplace_back(std::cos(a), std::sin(a));
  }
  auto mask = torch::zeros({size, size}, torch::kBool);
  auto acc = mask.accessor<bool, 2>();
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double dx = x + 0.5 - shape.cx, dy = y + 0.5 - shape.cy;
      const double u = (dx * c + dy * s) / shape.aspect;
      const double w = -dx * s + dy * c;
      bool inside = true;
      for (const auto& [nx, ny] : normals) inside = inside && (u * nx + w * ny <= apothem);
      acc[y][x] = inside;
    }
  }
  return mask;
}

namespace {

// Full and visible masks in drawing order.
std::pair<std::vector<torch::Tensor>, std::vector<torch::Tensor>> layered_masks(const SceneSpec& spec, int64_t size) {
  std::vector<torch::Tensor> full, visible;
  for (const auto& s : spec.shapes) full.push_back(polygon_mask(s, size));
  for (size_t i = 0; i < full.size(); ++i) {
    auto v = full[i].clone();
    for (size_t j = i + 1; j < full.size(); ++j) v &= full[j].logical_not();
    visible.push_back(v);
  }
  return {full, visible};
}

}  // namespace

torch::Tensor render_masks(const SceneSpec& spec, int num_classes, int64_t size) {
  auto masks = torch::zeros({num_classes, size, size}, torch::kUInt8);
  auto [full, visible] = layered_masks(spec, size);
  for (size_t i = 0; i < spec.shapes.size(); ++i) {
    const int k = spec.shapes[i].class_index;
    check(k >= 0 && k < num_classes, ErrorCode::kArgument, "shape class out of range");
    masks[k] = visible[i].to(torch::kUInt8);
  }
  return masks;
}

SceneSpec sample_scene(uint64_t seed, const SynthConfig& config) {
  Rng rng(seed);
  const double size = static_cast<double>(config.image_size);
  const int64_t count = rng.integer(1, config.max_instruments);
  std::vector<int> classes(config.num_classes);
  for (int k = 0; k < config.num_classes; ++k) classes[k] = k;
  for (int64_t i = 0; i < count; ++i) std::swap(classes[i], classes[rng.integer(i, config.num_classes - 1)]);
  classes.resize(count);

  SceneSpec spec;
  while (true) {
    spec.shapes.clear();
    for (int k : classes) {
      ShapeParams s;
      s.class_index = k;
      s.cx = rng.uniform(kShapeMargin, size - kShapeMargin);
      s.cy = rng.uniform(kShapeMargin, size - kShapeMargin);
      s.radius = rng.uniform(11.0, 17.0);
      s.rotation = rng.uniform(0.0, 2 * pi);
      s.aspect = rng.uniform(1.0, 1.6);
      spec.shapes.push_back(s);
    }
    auto [full, visible] = layered_masks(spec, config.image_size);
    bool ok = true;
    for (size_t i = 0; i < full.size(); ++i) {
      ok = ok && visible[i].sum().item<int64_t>() >= kMinVisibleFraction * full[i].sum().item<int64_t>();
    }
    if (ok) break;
  }
  for (auto& s : spec.shapes) {
    s.hue = 0.12 + 0.8 * s.class_index / config.num_classes + rng.uniform(-0.02, 0.02);
    s.saturation = rng.uniform(0.55, 0.8);
    s.value = rng.uniform(0.75, 0.95);
  }
  spec.shade_fx = rng.uniform(0.05, 0.15);
  spec.shade_fy = rng.uniform(0.05, 0.15);
  spec.shade_phase = rng.uniform(0.0, 2 * pi);
  spec.noise_seed = splitmix64(seed ^ 0x5eedULL);
  return spec;
}

SceneSample render_scene(const SceneSpec& spec, const SynthConfig& config, const std::string& id) {
  const int64_t size = config.image_size;
  std::vector<double> rgb(size * size * 3);
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double shade =
          0.85 + 0.15 * std::sin(spec.shade_fx * (x + 0.5) + spec.shade_phase) * std::cos(spec.shade_fy * (y + 0.5));
      for (int c = 0; c < 3; ++c) rgb[(y * size + x) * 3 + c] = kTissue[c] * shade;
    }
  }
  auto [full, visible] = layered_masks(spec, size);
  for (size_t i = 0; i < spec.shapes.size(); ++i) {
    const auto& s = spec.shapes[i];
    const auto colour = hsv_to_rgb(s.hue, s.saturation, s.value);
    const double angle = pi * s.class_index / config.num_classes;
    const double period = 4.0 + 2.0 * (s.class_index % 3);
    auto m = full[i].accessor<bool, 2>();
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        if (!m[y][x]) continue;
        const double phase = 2 * pi * ((x + 0.5) * std::cos(angle) + (y + 0.5) * std::sin(angle)) / period;
        const double stripe = std::sin(phase) > 0 ? 1.0 : 0.0;
        for (int c = 0; c < 3; ++c) rgb[(y * size + x) * 3 + c] = colour[c] * (1 - kStripeDepth * stripe);
      }
    }
  }
  Rng noise(spec.noise_seed);
  auto image = torch::empty({size, size, 3}, torch::kUInt8);
  auto* out = image.data_ptr<uint8_t>();
  for (size_t i = 0; i < rgb.size(); ++i) {
    const double v = std::clamp(rgb[i] + noise.normal(config.noise_level), 0.0, 1.0);
    out[i] = static_cast<uint8_t>(std::floor(v * 255.0 + 0.5));
  }
  SceneSample sample;
  sample.id = id;
  sample.image = image;
  sample.masks = render_masks(spec, config.num_classes, size);
  sample.present_classes = present_classes_of(sample.masks);
  return sample;
}

AudioClip synth_command_audio(int class_index, uint64_t seed, double level, int num_classes) {
  check(class_index >= 0 && class_index < num_classes, ErrorCode::kArgument,
        "class index " + std::to_string(class_index) + " outside [0, " + std::to_string(num_classes) + ")");
  check(level >= 0, ErrorCode::kArgument, "mispronunciation level must be non-negative");
  Rng rng(seed);
  const int n = kSampleRateHz;
  const int segment = n / 3;
  const double f0 = kBaseF0 * std::pow(kF0Step, class_index);
  const auto& harmonics = kHarmonics[class_index % kHarmonics.size()];
  const std::array<double, 3> contour = {1.0, 1.0 + 0.05 * ((class_index % 3) - 1),
                                         1.0 - 0.04 * ((class_index % 2) * 2 - 1)};
  const double pitch = rng.uniform(0.985, 1.015);
  std::array<int, 3> order = {0, 1, 2};
  if (level > 0 && rng.uniform(0.0, 1.0) < level) {
    const int64_t i = rng.integer(0, 2);
    const int64_t j = (i + rng.integer(1, 2)) % 3;
    std::swap(order[i], order[j]);
  }
  std::vector<double> signal(n, 0.0);
  for (int si = 0; si < 3; ++si) {
    double f = f0 * contour[order[si]] * pitch;
    if (level > 0) f *= 1 + 0.1 * level * rng.uniform(-1.0, 1.0);
    for (size_t h = 0; h < harmonics.size(); ++h) {
      const double phase = rng.uniform(0.0, 2 * pi);
      for (int t = 0; t < segment; ++t) {
        const double env = std::sqrt(std::sin(pi * t / segment));
        signal[si * segment + t] +=
            env * harmonics[h] * std::sin(2 * pi * f * (h + 1) * t / kSampleRateHz + phase);
      }
    }
  }
  double peak = 0.0;
  for (double v : signal) peak = std::max(peak, std::abs(v));
  AudioClip clip;
  clip.samples.resize(n);
  for (int t = 0; t < n; ++t) {
    const double v = kCommandPeak * signal[t] / (peak + 1e-9) + rng.normal(kCommandNoise);
    clip.samples[t] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return clip;
}

namespace {

std::pair<SceneSpec, SceneSample> make_sample(const SynthConfig& config, uint64_t tag, int64_t index) {
  const auto i = static_cast<uint64_t>(index);
  auto spec = sample_scene(derive_seed(config.seed, {tag, i}), config);
  auto sample = render_scene(spec, config, sample_id(index));
  for (int k : sample.present_classes) {
    const uint64_t audio_seed = derive_seed(config.seed, {tag, i, 1000u + static_cast<uint64_t>(k)});
    sample.audio_per_class[k] = synth_command_audio(k, audio_seed, 0.0, config.num_classes);
  }
  return {std::move(spec), std::move(sample)};
}

}  // namespace

Dataset synthesize_split(const SynthConfig& config, const std::string& split) {
  config.validate();
  check(split == "train" || split == "val", ErrorCode::kArgument, "unknown split '" + split + "'");
  const int64_t n = split == "train" ? config.n_train : config.n_val;
  Dataset d{split, config.num_classes, {}};
  for (int64_t i = 0; i < n; ++i) d.samples.push_back(make_sample(config, split_tag(split), i).second);
  return d;
}

std::vector<DatasetManifest> generate_dataset(const SynthConfig& config, const std::string& root) {
  config.validate();
  std::vector<DatasetManifest> manifests;
  for (const std::string split : {"train", "val"}) {
    const auto dir = (fs::path(root) / split).string();
    try {
      fs::create_directories(dir);
    } catch (const fs::filesystem_error& e) {
      fail(ErrorCode::kIo, e.what());
    }
    const int64_t n = split == "train" ? config.n_train : config.n_val;
    const uint64_t tag = split_tag(split);
    DatasetManifest m;
    m.root = root;
    m.split = split;
    nlohmann::json scenes = nlohmann::json::object();
    for (int64_t i = 0; i < n; ++i) {
      auto [spec, sample] = make_sample(config, tag, i);
      auto files = write_sample(dir, sample);
      m.files.insert(m.files.end(), files.begin(), files.end());
      m.ids.push_back(sample.id);
      scenes[sample.id] = to_json(spec);
    }
    auto write_json = [&](const std::string& name, const nlohmann::json& j) {
      std::ofstream out(fs::path(dir) / name);
      check(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + (fs::path(dir) / name).string());
      out << j.dump(2) << "\n";
    };
    write_json("scenes.json", {{"config", to_json(config)}, {"scenes", scenes}});
    m.checksum = compute_checksum(dir, m.files);
    write_json("manifest.json", to_json(m));
    manifests.push_back(m);
  }
  return manifests;
}

}  // namespace asiseg
