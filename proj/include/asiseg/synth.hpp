#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "asiseg/audio.hpp"
#include "asiseg/dataset.hpp"
#include "json.hpp"

namespace asiseg {

struct SynthConfig {
  int num_classes = 7;
  int64_t image_size = 64;
  int64_t n_train = 300;
  int64_t n_val = 60;
  int max_instruments = 3;
  double noise_level = 0.04;
  uint64_t seed = 7;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& j);

// Class k is drawn as a regular (k + 3)-gon stretched by `aspect` along its
// rotation axis, filled with a class hue and a class-specific stripe texture.
struct ShapeParams {
  int class_index = 0;
  double cx = 0, cy = 0, radius = 0, rotation = 0, aspect = 1;
  double hue = 0, saturation = 0, value = 0;
};

struct SceneSpec {
  std::vector<ShapeParams> shapes;  // drawing order; later shapes occlude earlier ones
  double shade_fx = 0, shade_fy = 0, shade_phase = 0;
  uint64_t noise_seed = 0;
};

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j);

// [size, size] bool, pixel centres at integer + 0.5.
torch::Tensor polygon_mask(const ShapeParams& shape, int64_t size);

// Visible (occlusion-resolved) masks [K, size, size] uint8 in {0, 1}.
torch::Tensor render_masks(const SceneSpec& spec, int num_classes, int64_t size);

// Draws 1..max_instruments distinct classes; placements are resampled until
// every shape keeps at least half of its area visible.
SceneSpec sample_scene(uint64_t seed, const SynthConfig& config);
SceneSample render_scene(const SceneSpec& spec, const SynthConfig& config, const std::string& id);

// One-second command: three syllables on a class-specific fundamental and
// harmonic pattern. level > 0 swaps a syllable pair with probability `level`
// and jitters each syllable's pitch by up to 10% * level.
AudioClip synth_command_audio(int class_index, uint64_t seed, double mispronounce_level = 0.0,
                              int num_classes = 7);

// Writes <root>/{train,val}; returns the two manifests.
std::vector<DatasetManifest> generate_dataset(const SynthConfig& config, const std::string& root);

// In-memory equivalent of one split of generate_dataset.
Dataset synthesize_split(const SynthConfig& config, const std::string& split);

}  // namespace asiseg
