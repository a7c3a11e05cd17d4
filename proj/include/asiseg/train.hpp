#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "asiseg/audio.hpp"
#include "asiseg/dataset.hpp"
#include "asiseg/metrics.hpp"
#include "asiseg/model.hpp"
#include "json.hpp"

namespace asiseg {

struct TrainConfig {
  double learning_rate = 1e-4;
  int64_t batch_size = 8;
  int64_t epochs = 30;
  double tau = 0.07;
  uint64_t seed = 7;
  bool freeze_encoders = true;
  bool use_contrastive = true;  // false: dice-only segmentation objective
  double intent_weight = 1.0;   // cross-entropy on the intent classifier, which only it receives

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);

struct EpochLog {
  int64_t epoch = 0;
  double dice = 0, cl = 0, intent_ce = 0, total = 0, lr = 0;
};

nlohmann::json to_json(const EpochLog& log);

// L = L_DICE + L_CL
torch::Tensor total_loss(const torch::Tensor& dice, const torch::Tensor& cl);

// Items are (frame, present class) pairs. Fits the mel normalisation on the
// training commands when the model has none. Throws kNumeric (naming epoch
// and batch) on a non-finite loss, kEmptyDataset when there is nothing to fit.
std::vector<EpochLog> train(AsiSeg& model, const Dataset& data, const TrainConfig& config,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

// How evaluation commands are produced for a (frame, class) pair.
struct AudioCondition {
  double mispronounce = 0.0;  // > 0: regenerate the command at this level
  std::optional<PerturbKind> perturb;
  double magnitude = 0.0;
  uint64_t seed = 1234;
};

// Stored clip when available and mispronounce == 0, else a synthesised
// command; then the optional perturbation. Seeds depend only on (seed, frame, class).
AudioClip evaluation_command(const SceneSample& sample, int64_t frame, int class_index, int num_classes,
                             const AudioCondition& condition);

// For every frame and every class present in it: issue that class's command,
// segment with the predicted intent, IoU against the commanded class's mask.
MetricsReport evaluate_intention(AsiSeg& model, const Dataset& data, const AudioCondition& condition = {});

// Per-class logits for every class, composed by argmax with background where
// all logits <= 0.
MetricsReport evaluate_semantic(AsiSeg& model, const Dataset& data);

struct RobustnessRow {
  PerturbKind kind;
  double magnitude = 0;
  double intent_accuracy = 0;
  double mc_iou = 0;
};

std::vector<RobustnessRow> robustness_sweep(AsiSeg& model, const Dataset& data, const std::vector<PerturbKind>& kinds,
                                            const std::vector<double>& magnitudes, const AudioCondition& base = {});

nlohmann::json to_json(const RobustnessRow& row);

// Fits NormStats over the log-mels of every stored training command.
NormStats fit_command_norm(const Dataset& data, const MelConfig& mel);

}  // namespace asiseg
