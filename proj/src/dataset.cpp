#include "asiseg/dataset.hpp"

#include <zlib.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>

#include "asiseg/error.hpp"
#include "asiseg/image_io.hpp"

namespace asiseg {

namespace fs = std::filesystem;

std::vector<int> present_classes_of(const torch::Tensor& masks) {
  auto any = masks.flatten(1).any(1).contiguous();
  std::vector<int> out;
  for (int64_t k = 0; k < any.size(0); ++k) {
    if (any[k].item<bool>()) out.push_back(static_cast<int>(k));
  }
  return out;
}

std::string image_path(const std::string& split_dir, const std::string& id) {
  return (fs::path(split_dir) / "images" / (id + ".png")).string();
}

std::string mask_path(const std::string& split_dir, int class_index, const std::string& id) {
  return (fs::path(split_dir) / "masks" / std::to_string(class_index) / (id + ".png")).string();
}

std::string audio_path(const std::string& split_dir, int class_index, const std::string& id) {
  return (fs::path(split_dir) / "audio" / std::to_string(class_index) / (id + ".wav")).string();
}

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), ErrorCode::kManifest, "listed file is missing: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string relative(const std::string& split_dir, const std::string& path) {
  return fs::path(path).lexically_relative(split_dir).generic_string();
}

nlohmann::json read_json(const std::string& path, ErrorCode missing) {
  std::ifstream in(path);
  check(static_cast<bool>(in), missing, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, path + ": " + e.what());
  }
}

}  // namespace

uint32_t compute_checksum(const std::string& split_dir, const std::vector<std::string>& files) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& f : files) {
    const auto bytes = read_bytes((fs::path(split_dir) / f).string());
    crc = crc32(crc, reinterpret_cast<const Bytef*>(f.data()), static_cast<uInt>(f.size() + 1));  // includes NUL
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  }
  return static_cast<uint32_t>(crc);
}

nlohmann::json to_json(const DatasetManifest& m) {
  return {{"split", m.split}, {"ids", m.ids}, {"files", m.files}, {"checksum", m.checksum}};
}

DatasetManifest read_manifest(const std::string& root, const std::string& split) {
  const auto path = (fs::path(root) / split / "manifest.json").string();
  auto j = read_json(path, ErrorCode::kManifest);
  DatasetManifest m;
  m.root = root;
  try {
    m.split = j.at("split").get<std::string>();
    m.ids = j.at("ids").get<std::vector<std::string>>();
    m.files = j.at("files").get<std::vector<std::string>>();
    m.checksum = j.at("checksum").get<uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, path + ": " + e.what());
  }
  check(m.split == split, ErrorCode::kManifest, path + " describes split '" + m.split + "'");
  return m;
}

void verify_manifest(const DatasetManifest& m) {
  const auto dir = (fs::path(m.root) / m.split).string();
  for (const auto& f : m.files) {
    check(fs::exists(fs::path(dir) / f), ErrorCode::kManifest, "listed file is missing: " + f);
  }
  check(compute_checksum(dir, m.files) == m.checksum, ErrorCode::kManifest,
        "checksum mismatch in split '" + m.split + "'");
}

std::vector<std::string> write_sample(const std::string& split_dir, const SceneSample& s) {
  std::vector<std::string> written;
  auto put = [&](const std::string& path) {
    fs::create_directories(fs::path(path).parent_path());
    written.push_back(relative(split_dir, path));
    return path;
  };
  try {
    write_png(put(image_path(split_dir, s.id)), s.image);
    for (int64_t k = 0; k < s.masks.size(0); ++k) {
      write_png(put(mask_path(split_dir, static_cast<int>(k), s.id)), (s.masks[k] * 255).to(torch::kUInt8));
    }
    for (const auto& [k, clip] : s.audio_per_class) write_wav(put(audio_path(split_dir, k, s.id)), clip);
  } catch (const fs::filesystem_error& e) {
    fail(ErrorCode::kIo, e.what());
  }
  return written;
}

torch::Tensor read_mask(const std::string& path) {
  auto m = read_png(path);
  check(m.size(2) == 1, ErrorCode::kValidation, path + " is not a single-channel mask");
  m = m.squeeze(2);
  check(((m == 0) | (m == 255)).all().item<bool>(), ErrorCode::kValidation, path + " is not a binary 0/255 mask");
  return (m == 255).to(torch::kUInt8);
}

namespace {

SceneSample load_frame(const std::string& split_dir, const std::string& id, int num_classes, bool with_audio) {
  SceneSample s;
  s.id = id;
  const auto img = image_path(split_dir, id);
  check(fs::exists(img), ErrorCode::kManifest, "missing image for frame " + id);
  s.image = read_png(img);
  check(s.image.size(2) == 3, ErrorCode::kValidation, img + " is not an RGB image");
  std::vector<torch::Tensor> masks;
  for (int k = 0; k < num_classes; ++k) {
    const auto mp = mask_path(split_dir, k, id);
    check(fs::exists(mp), ErrorCode::kManifest, "missing mask for class " + std::to_string(k) + " of frame " + id);
    masks.push_back(read_mask(mp));
    check(masks.back().size(0) == s.image.size(0) && masks.back().size(1) == s.image.size(1), ErrorCode::kShape,
          mp + " does not match the image size");
  }
  s.masks = torch::stack(masks);
  s.present_classes = present_classes_of(s.masks);
  if (with_audio) {
    for (int k : s.present_classes) {
      const auto ap = audio_path(split_dir, k, id);
      if (fs::exists(ap)) s.audio_per_class[k] = read_wav(ap);
    }
  }
  return s;
}

}  // namespace

Dataset load_split(const std::string& root, const std::string& split, int num_classes) {
  auto manifest = read_manifest(root, split);
  verify_manifest(manifest);
  Dataset d{split, num_classes, {}};
  const auto dir = (fs::path(root) / split).string();
  for (const auto& id : manifest.ids) d.samples.push_back(load_frame(dir, id, num_classes, true));
  return d;
}

Dataset load_endovis(const std::string& root, const std::string& split_spec, int num_classes) {
  auto j = read_json(split_spec, ErrorCode::kIo);
  Dataset d;
  d.num_classes = num_classes;
  std::vector<std::string> ids;
  try {
    d.split = j.at("split").get<std::string>();
    ids = j.at("ids").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, split_spec + ": " + e.what());
  }
  if (ids.empty()) {
    std::cerr << "warning: split '" << d.split << "' in " << split_spec << " lists no frames\n";
    return d;
  }
  const auto dir = (fs::path(root) / d.split).string();
  for (const auto& id : ids) d.samples.push_back(load_frame(dir, id, num_classes, false));
  return d;
}

}  // namespace asiseg
