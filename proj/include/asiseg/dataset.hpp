#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "asiseg/audio.hpp"
#include "json.hpp"

namespace asiseg {

struct SceneSample {
  std::string id;
  torch::Tensor image;  // [H, W, 3] uint8
  torch::Tensor masks;  // [K, H, W] uint8 in {0, 1}
  std::vector<int> present_classes;
  std::map<int, AudioClip> audio_per_class;
};

struct Dataset {
  std::string split;
  int num_classes = 0;
  std::vector<SceneSample> samples;

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

// Sorted classes with at least one mask pixel.
std::vector<int> present_classes_of(const torch::Tensor& masks);

struct DatasetManifest {
  std::string root;
  std::string split;
  std::vector<std::string> ids;
  std::vector<std::string> files;  // relative to <root>/<split>
  uint32_t checksum = 0;           // CRC-32 over (path, NUL, bytes) of every listed file
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& root, const std::string& split);
uint32_t compute_checksum(const std::string& split_dir, const std::vector<std::string>& files);
// kManifest when a listed file is missing or the checksum differs.
void verify_manifest(const DatasetManifest& manifest);

std::string image_path(const std::string& split_dir, const std::string& id);
std::string mask_path(const std::string& split_dir, int class_index, const std::string& id);
std::string audio_path(const std::string& split_dir, int class_index, const std::string& id);

// Writes images, masks (0/255) and any audio for one sample; returns the
// relative paths written, in a fixed order.
std::vector<std::string> write_sample(const std::string& split_dir, const SceneSample& sample);

// 8-bit mask file -> [H, W] uint8 {0, 1}; values other than 0 and 255 are
// rejected with kValidation.
torch::Tensor read_mask(const std::string& path);

// Verified load of a generated split, audio included.
Dataset load_split(const std::string& root, const std::string& split, int num_classes);

// EndoVis-style layout: <root>/<split>/images/<id>.png and
// <root>/<split>/masks/<k>/<id>.png. split_spec is JSON {"split": name,
// "ids": [...]}. Audio is left empty.
Dataset load_endovis(const std::string& root, const std::string& split_spec, int num_classes);

}  // namespace asiseg
