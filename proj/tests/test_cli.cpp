#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "asiseg/checkpoint.hpp"
#include "asiseg/cli.hpp"
#include "asiseg/dataset.hpp"
#include "asiseg/image_io.hpp"
#include "asiseg/synth.hpp"
#include "asiseg/train.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace asiseg;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

nlohmann::json last_json_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
  }
  return nlohmann::json::parse(last);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 2 with a JSON error line") {
  auto r = cli({"train", "--bogus"});
  CHECK(r.code == 2);
  auto j = last_json_line(r.err);
  CHECK(j["error"] == "usage_error");
  CHECK(cli({}).code == 2);
  CHECK(cli({"eval", "--mode", "sideways"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("bank validate") {
  testutil::TempDir dir("cli_bank");
  const auto good = (dir.path() / "good.json").string();
  std::ofstream(good) << default_bank().to_json().dump();
  auto ok = cli({"bank", "validate", "--file", good});
  CHECK(ok.code == 0);
  CHECK(last_json_line(ok.out)["K"] == 7);
  CHECK(cli({"bank", "validate", "--file", good, "--classes", "5"}).code == 3);

  auto dup = default_bank().to_json();
  dup[2]["class_index"] = 1;
  const auto bad = (dir.path() / "dup.json").string();
  std::ofstream(bad) << dup.dump();
  auto r = cli({"bank", "validate", "--file", bad});
  CHECK(r.code == 5);
  CHECK(last_json_line(r.err)["error"].is_string());
  CHECK(cli({"bank", "validate", "--file", (dir.path() / "none.json").string()}).code == 4);
}

TEST_CASE("missing data directory is a data error") {
  testutil::TempDir dir("cli_nodata");
  CHECK(cli({"train", "--data", dir.path().string(), "--epochs", "1"}).code == 5);
}

TEST_CASE("gen-data, train, eval, intent and segment") {
  testutil::TempDir dir("cli_pipeline");
  const auto data = dir.path().string();
  auto gen = cli({"gen-data", "--out", data, "--n-train", "8", "--n-val", "4", "--seed", "3"});
  REQUIRE(gen.code == 0);
  CHECK(last_json_line(gen.out)["splits"].size() == 2);

  const auto log = (dir.path() / "log.jsonl").string();
  auto tr = cli({"train", "--data", data, "--epochs", "2", "--batch-size", "4", "--lr", "1e-3", "--log", log});
  REQUIRE(tr.code == 0);
  CHECK(last_json_line(tr.out)["epoch"] == 1);  // epochs count from 0
  CHECK(fs::exists(dir.path() / "asiseg.ckpt"));
  CHECK(slurp(log).find("\"dice\"") != std::string::npos);

  auto ev = cli({"eval", "--data", data, "--mode", "intention"});
  REQUIRE(ev.code == 0);
  auto report = last_json_line(ev.out);
  CHECK(report["mode"] == "intention");
  CHECK(report["mc_iou"].get<double>() >= 0.0);
  CHECK(report["n_frames"] == 4);
  CHECK(cli({"eval", "--data", data, "--mode", "semantic", "--format", "table"}).out.find("challenge") !=
        std::string::npos);
  auto rob = cli({"eval", "--data", data, "--mode", "robustness", "--kinds", "noise", "segment_swap", "--magnitudes",
                  "0", "0.5"});
  REQUIRE(rob.code == 0);
  CHECK(last_json_line(rob.out).size() == 4);
  CHECK(cli({"eval", "--data", data, "--perturb", "wobble", "--magnitude", "0.1"}).code == 2);

  auto val = load_split(data, "val", 7);
  const auto& s = val.samples[0];
  const int k = s.present_classes[0];
  const auto val_dir = (dir.path() / "val").string();
  auto in = cli({"intent", "--data", data, "--audio", audio_path(val_dir, k, s.id)});
  REQUIRE(in.code == 0);
  auto label = last_json_line(in.out);
  CHECK(label["probabilities"].size() == 7);
  CHECK(label["class_index"].get<int>() >= 0);

  const auto mask = (dir.path() / "mask.png").string();
  auto seg = cli({"segment", "--data", data, "--image", image_path(val_dir, s.id), "--audio",
                  audio_path(val_dir, k, s.id), "--out", mask});
  REQUIRE(seg.code == 0);
  auto png = read_png(mask);
  CHECK(png.sizes() == torch::IntArrayRef({64, 64, 1}));
  CHECK(((png == 0) | (png == 255)).all().item<bool>());
  CHECK(last_json_line(seg.out)["foreground_pixels"] == (png == 255).sum().item<int64_t>());

  // Bank with K = 5 against a K = 7 checkpoint.
  auto five = default_bank().to_json();
  five.erase(five.begin() + 5, five.end());
  const auto five_path = (dir.path() / "five.json").string();
  std::ofstream(five_path) << five.dump();
  CHECK(cli({"segment", "--data", data, "--image", image_path(val_dir, s.id), "--audio", audio_path(val_dir, k, s.id),
             "--out", mask, "--bank", five_path})
            .code == 3);

  // A checkpoint from a different format version.
  auto bytes = slurp(dir.path() / "asiseg.ckpt");
  const auto at = bytes.find("\"format_version\":1");
  REQUIRE(at != std::string::npos);
  bytes[at + 17] = '9';
  const auto future = (dir.path() / "future.ckpt").string();
  std::ofstream(future, std::ios::binary) << bytes;
  CHECK(cli({"eval", "--data", data, "--checkpoint", future}).code == 6);
  CHECK(cli({"eval", "--data", data, "--checkpoint", (dir.path() / "none.ckpt").string()}).code == 4);
}

TEST_CASE("checkpoint round trip reproduces segmentation bitwise") {
  testutil::TempDir dir("ckpt");
  SynthConfig sc;
  sc.n_train = 4;
  sc.n_val = 2;
  auto data = synthesize_split(sc, "train");
  ModelConfig mc;
  mc.seed = 12;
  AsiSeg model(mc, default_bank());
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  train(model, data, tc);

  const auto path = (dir.path() / "m.ckpt").string();
  save_checkpoint(path, model);
  auto back = load_checkpoint(path);
  CHECK(to_json(back->config()) == to_json(model.config()));
  CHECK(parameter_checksum(*back) == parameter_checksum(model));
  CHECK(back->bank().to_json() == model.bank().to_json());
  const auto& s = data.samples[0];
  const auto& clip = s.audio_per_class.begin()->second;
  CHECK(testutil::bitwise_equal(back->segment(s.image, 3).values, model.segment(s.image, 3).values));
  CHECK(back->infer_intent(clip).probabilities == model.infer_intent(clip).probabilities);

  auto header = read_checkpoint_header(path);
  CHECK(header["K"] == 7);
  CHECK(header["d"] == 64);

  auto bytes = slurp(path);
  std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK(testutil::error_of([&] { load_checkpoint(path); }) == ErrorCode::kSchema);
  std::ofstream(path, std::ios::binary) << "XXXXXXXXXXXX";
  CHECK(testutil::error_of([&] { load_checkpoint(path); }) == ErrorCode::kVersion);
}

}  // TEST_SUITE
