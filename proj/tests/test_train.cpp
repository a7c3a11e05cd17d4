#include <cmath>

#include "asiseg/synth.hpp"
#include "asiseg/train.hpp"
#include "doctest.h"
#include "gradient_suite.hpp"
#include "test_util.hpp"

using namespace asiseg;
using testutil::error_of;

namespace {

Dataset small_split(uint64_t seed, int64_t n, const std::string& split = "train") {
  SynthConfig sc;
  sc.n_train = n;
  sc.n_val = n;
  sc.seed = seed;
  return synthesize_split(sc, split);
}

ModelConfig model_config(uint64_t seed) {
  ModelConfig mc;
  mc.seed = seed;
  return mc;
}

TrainConfig train_config(double lr, int64_t epochs, uint64_t seed) {
  TrainConfig tc;
  tc.learning_rate = lr;
  tc.epochs = epochs;
  tc.batch_size = 4;
  tc.seed = seed;
  return tc;
}

// Mean objective over one pass at fixed parameters.
double objective(AsiSeg& model, const Dataset& data, uint64_t seed) {
  return train(model, data, train_config(0.0, 1, seed)).back().total;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("total_loss examples") {
  auto t = [](double a, double b) {
    return total_loss(torch::tensor(a, torch::kFloat64), torch::tensor(b, torch::kFloat64)).item<double>();
  };
  CHECK(t(0.3, 0.7) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(t(0.0, 0.0) == 0.0);
  CHECK(t(1.0 / 3, std::log(2.0)) == doctest::Approx(1.0 / 3 + std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("one epoch lowers the objective for at least 9 of 10 seeds") {
  int lowered = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    auto data = small_split(seed, 8);
    AsiSeg model(model_config(seed), default_bank());
    const double before = objective(model, data, seed);
    train(model, data, train_config(1e-4, 1, seed));
    const double after = objective(model, data, seed);
    MESSAGE("seed " << seed << ": " << before << " -> " << after);
    lowered += after < before;
  }
  CHECK(lowered >= 9);
}

TEST_CASE("frozen encoders keep their checksum and the partition covers every parameter") {
  auto data = small_split(3, 6);
  AsiSeg model(model_config(3), default_bank());
  const auto before = model.encoder_checksum();
  train(model, data, train_config(1e-3, 2, 3));
  CHECK(model.encoder_checksum() == before);

  auto part = model.partition(true);
  size_t counted = 0;
  for (const auto& g : part.frozen) counted += g.parameters.size();
  for (const auto& g : part.trainable) counted += g.parameters.size();
  CHECK(counted == model.named_parameters(true).size());
  CHECK_FALSE(part.frozen.empty());
  CHECK(model.partition(false).frozen.empty());
}

TEST_CASE("learning rate zero leaves every parameter unchanged") {
  auto data = small_split(4, 6);
  AsiSeg model(model_config(4), default_bank());
  train(model, data, train_config(0.0, 1, 4));  // fits the mel statistics
  const auto before = parameter_checksum(model);
  train(model, data, train_config(0.0, 2, 4));
  CHECK(parameter_checksum(model) == before);
}

TEST_CASE("a NaN parameter raises kNumeric naming the epoch and batch") {
  auto data = small_split(5, 4);
  AsiSeg model(model_config(5), default_bank());
  {
    torch::NoGradGuard g;
    model.prompt_projection->weight.fill_(std::nan(""));
  }
  try {
    train(model, data, train_config(1e-4, 1, 5));
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNumeric);
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("batch") != std::string::npos);
  }
}

TEST_CASE("configuration and data errors") {
  auto data = small_split(6, 4);
  AsiSeg model(model_config(6), default_bank());
  CHECK(error_of([&] { train(model, data, train_config(-1.0, 1, 1)); }) == ErrorCode::kConfig);
  Dataset empty{"train", 7, {}};
  CHECK(error_of([&] { train(model, empty, train_config(1e-4, 1, 1)); }) == ErrorCode::kEmptyDataset);
}

TEST_CASE("training is deterministic and logs one entry per epoch") {
  auto data = small_split(7, 6);
  auto run = [&] {
    AsiSeg model(model_config(7), default_bank());
    std::vector<int64_t> seen;
    auto logs = train(model, data, train_config(1e-3, 2, 7), [&](const EpochLog& e) { seen.push_back(e.epoch); });
    CHECK(seen == std::vector<int64_t>{0, 1});
    return std::make_pair(logs, parameter_checksum(model));
  };
  auto [a, ca] = run();
  auto [b, cb] = run();
  CHECK(ca == cb);
  REQUIRE(a.size() == 2);
  for (size_t i = 0; i < a.size(); ++i) CHECK(to_json(a[i]).dump() == to_json(b[i]).dump());
  auto j = to_json(a[0]);
  for (const char* key : {"epoch", "dice", "cl", "total", "lr"}) CHECK(j.contains(key));
}

TEST_CASE("evaluation commands depend only on seed, frame and class") {
  auto data = small_split(8, 3, "val");
  const auto& s = data.samples[0];
  const int k = s.present_classes[0];
  AudioCondition clean;
  auto stored = evaluation_command(s, 0, k, 7, clean);
  CHECK(stored.samples == s.audio_per_class.at(k).samples);
  AudioCondition noisy{0.3, PerturbKind::kNoise, 0.1, 99};
  auto a = evaluation_command(s, 0, k, 7, noisy);
  CHECK(a.samples == evaluation_command(s, 0, k, 7, noisy).samples);
  CHECK(a.samples != evaluation_command(s, 1, k, 7, noisy).samples);
}

TEST_CASE("robustness sweep: one row per setting, magnitude 0 equals the clean run") {
  auto train_data = small_split(9, 6);
  auto val = small_split(9, 4, "val");
  AsiSeg model(model_config(9), default_bank());
  train(model, train_data, train_config(1e-3, 1, 9));
  const auto clean = evaluate_intention(model, val);
  auto rows = robustness_sweep(model, val, {PerturbKind::kNoise, PerturbKind::kTimeWarp}, {0.0, 0.2});
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    if (r.magnitude == 0.0) {
      CHECK(r.mc_iou == clean.mc_iou);
      CHECK(r.intent_accuracy == clean.intent_accuracy);
    }
  }
  auto semantic = evaluate_semantic(model, val);
  CHECK(semantic.challenge_iou >= 0.0);
  CHECK(semantic.challenge_iou <= 1.0);
  CHECK(semantic.n_frames == static_cast<int64_t>(val.size()));
}

TEST_CASE("autograd gradients match central differences in float64") {
  for (const auto& r : gradsuite::run_gradient_suite(4, 3)) {
    INFO(r.name);
    CHECK(r.worst_relative_error <= 1e-4);
  }
}

}  // TEST_SUITE
