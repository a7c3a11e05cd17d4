#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "asiseg/dataset.hpp"
#include "asiseg/image_io.hpp"
#include "asiseg/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace asiseg;
using testutil::error_of;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return files;
}

SynthConfig small_config() {
  SynthConfig sc;
  sc.n_train = 10;
  sc.n_val = 4;
  sc.seed = 21;
  return sc;
}

// 3 frames, 2 classes, 8 x 8 images; class 1 is absent from frame "c".
void write_endovis_fixture(const fs::path& root) {
  const auto dir = (root / "val").string();
  fs::create_directories(root / "val" / "images");
  for (int k = 0; k < 2; ++k) fs::create_directories(root / "val" / "masks" / std::to_string(k));
  const std::vector<std::string> ids{"a", "b", "c"};
  for (size_t i = 0; i < ids.size(); ++i) {
    write_png(image_path(dir, ids[i]), torch::full({8, 8, 3}, static_cast<int>(40 * i), torch::kUInt8));
    auto m0 = torch::zeros({8, 8}, torch::kUInt8);
    m0.slice(0, 0, 2 + static_cast<int64_t>(i)).fill_(255);
    write_png(mask_path(dir, 0, ids[i]), m0);
    auto m1 = torch::zeros({8, 8}, torch::kUInt8);
    if (ids[i] != "c") m1.slice(1, 6, 8).fill_(255);
    write_png(mask_path(dir, 1, ids[i]), m1);
  }
  std::ofstream(root / "val.json") << R"({"split": "val", "ids": ["a", "b", "c"]})";
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("generation is byte-identical for the same seed") {
  testutil::TempDir a("gen_a"), b("gen_b");
  auto ma = generate_dataset(small_config(), a.path().string());
  auto mb = generate_dataset(small_config(), b.path().string());
  REQUIRE(ma.size() == 2);
  CHECK(ma[0].checksum == mb[0].checksum);
  CHECK(ma[1].checksum == mb[1].checksum);
  CHECK(read_tree(a.path()) == read_tree(b.path()));

  auto other = small_config();
  other.seed = 22;
  testutil::TempDir c("gen_c");
  generate_dataset(other, c.path().string());
  CHECK(read_tree(a.path()) != read_tree(c.path()));
}

TEST_CASE("default training split covers every class") {
  auto data = synthesize_split(SynthConfig{}, "train");
  REQUIRE(data.size() == 300);
  std::vector<int> frames_with(7, 0);
  for (const auto& s : data.samples) {
    CHECK_FALSE(s.present_classes.empty());
    CHECK(s.present_classes.size() <= 3);
    for (int k : s.present_classes) ++frames_with[k];
    CHECK(s.audio_per_class.size() == s.present_classes.size());
  }
  for (int k = 0; k < 7; ++k) CHECK(frames_with[k] >= 15);
}

TEST_CASE("stored masks equal masks re-rendered from the scene parameters") {
  testutil::TempDir dir("render");
  const auto config = small_config();
  generate_dataset(config, dir.path().string());
  auto data = load_split(dir.path().string(), "train", 7);
  std::ifstream in(dir.path() / "train" / "scenes.json");
  auto scenes = nlohmann::json::parse(in).at("scenes");
  REQUIRE(data.size() == 10);
  for (const auto& s : data.samples) {
    auto spec = scene_spec_from_json(scenes.at(s.id));
    CHECK(testutil::bitwise_equal(render_masks(spec, 7, config.image_size), s.masks));
  }
  // The in-memory split matches the files.
  auto memory = synthesize_split(config, "train");
  for (size_t i = 0; i < data.size(); ++i) {
    CHECK(testutil::bitwise_equal(memory.samples[i].image, data.samples[i].image));
    CHECK(memory.samples[i].present_classes == data.samples[i].present_classes);
  }
}

TEST_CASE("a single corrupted byte fails manifest verification") {
  testutil::TempDir dir("corrupt");
  generate_dataset(small_config(), dir.path().string());
  auto m = read_manifest(dir.path().string(), "val");
  verify_manifest(m);
  const auto victim = dir.path() / "val" / m.files[1];
  std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(20);
  char c = 0;
  f.read(&c, 1);
  f.seekp(20);
  c = static_cast<char>(c ^ 0x01);
  f.write(&c, 1);
  f.close();
  CHECK(error_of([&] { verify_manifest(m); }) == ErrorCode::kManifest);
  CHECK(error_of([&] { load_split(dir.path().string(), "val", 7); }) == ErrorCode::kManifest);

  fs::remove(dir.path() / "train" / m.files[0]);
  CHECK(error_of([&] { load_split(dir.path().string(), "train", 7); }) == ErrorCode::kManifest);
  CHECK(error_of([&] { read_manifest((dir.path() / "missing").string(), "train"); }) == ErrorCode::kManifest);
}

TEST_CASE("EndoVis-style loader") {
  testutil::TempDir dir("endovis");
  write_endovis_fixture(dir.path());
  const auto spec = (dir.path() / "val.json").string();
  auto data = load_endovis(dir.path().string(), spec, 2);
  REQUIRE(data.size() == 3);
  CHECK(data.samples[0].masks.sizes() == torch::IntArrayRef({2, 8, 8}));
  CHECK(data.samples[0].masks[0].sum().item<int64_t>() == 16);
  CHECK(data.samples[2].present_classes == std::vector<int>{0});
  CHECK(data.samples[1].present_classes == std::vector<int>{0, 1});
  CHECK(data.samples[0].audio_per_class.empty());

  std::ofstream(dir.path() / "empty.json") << R"({"split": "val", "ids": []})";
  CHECK(load_endovis(dir.path().string(), (dir.path() / "empty.json").string(), 2).empty());

  auto grey = torch::zeros({8, 8}, torch::kUInt8);
  grey[0][0] = 128;
  write_png(mask_path((dir.path() / "val").string(), 1, "b"), grey);
  CHECK(error_of([&] { load_endovis(dir.path().string(), spec, 2); }) == ErrorCode::kValidation);

  fs::remove(mask_path((dir.path() / "val").string(), 1, "b"));
  CHECK(error_of([&] { load_endovis(dir.path().string(), spec, 2); }) == ErrorCode::kManifest);
  CHECK(error_of([&] { load_endovis(dir.path().string(), (dir.path() / "none.json").string(), 2); }) ==
        ErrorCode::kIo);
}

TEST_CASE("read_mask maps 0/255 to 0/1") {
  testutil::TempDir dir("mask");
  const auto path = (dir.path() / "m.png").string();
  auto m = torch::zeros({3, 4}, torch::kUInt8);
  m[1][2] = 255;
  write_png(path, m);
  auto back = read_mask(path);
  CHECK(back.sum().item<int64_t>() == 1);
  CHECK(back[1][2].item<int>() == 1);
}

TEST_CASE("PNG round trip") {
  testutil::TempDir dir("png");
  torch::manual_seed(2);
  auto rgb = torch::randint(0, 256, {5, 7, 3}, torch::kUInt8);
  write_png((dir.path() / "rgb.png").string(), rgb);
  CHECK(testutil::bitwise_equal(read_png((dir.path() / "rgb.png").string()), rgb));
  auto grey = torch::randint(0, 256, {4, 6}, torch::kUInt8);
  write_png((dir.path() / "g.png").string(), grey);
  CHECK(testutil::bitwise_equal(read_png((dir.path() / "g.png").string()), grey.unsqueeze(2)));
  std::ofstream(dir.path() / "junk.png") << "not a png";
  CHECK(error_of([&] { read_png((dir.path() / "junk.png").string()); }) == ErrorCode::kIo);
  CHECK(error_of([&] { write_png((dir.path() / "f.png").string(), torch::zeros({2, 2})); }) == ErrorCode::kArgument);
}

TEST_CASE("command audio is deterministic and class-specific") {
  auto a = synth_command_audio(2, 5);
  CHECK(a.samples == synth_command_audio(2, 5).samples);
  CHECK(a.samples.size() == 16000);
  CHECK(a.samples != synth_command_audio(2, 6).samples);
  CHECK(error_of([] { synth_command_audio(7, 1); }) == ErrorCode::kArgument);
  CHECK(error_of([] { synth_command_audio(0, 1, -0.1); }) == ErrorCode::kArgument);
  for (float v : synth_command_audio(4, 1, 1.0).samples) {
    CHECK(v >= -1.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("synth configuration validation") {
  SynthConfig bad;
  bad.max_instruments = 9;
  CHECK(error_of([&] { bad.validate(); }) == ErrorCode::kConfig);
  bad = SynthConfig{};
  bad.image_size = 60;
  CHECK(error_of([&] { bad.validate(); }) == ErrorCode::kConfig);
  CHECK(error_of([] { synthesize_split(SynthConfig{}, "test"); }) == ErrorCode::kArgument);
  auto j = to_json(small_config());
  CHECK(to_json(synth_config_from_json(j)) == j);
}

}  // TEST_SUITE
