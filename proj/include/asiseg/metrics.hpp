#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "asiseg/mask_decoder.hpp"
#include "json.hpp"

namespace asiseg {

// |pred & gt| / |pred | gt|, 1 when both are empty.
double compute_iou(const BinaryMask& pred, const BinaryMask& gt);

struct MetricsReport {
  double challenge_iou = 0.0;
  double iou = 0.0;
  double mc_iou = 0.0;
  std::vector<std::optional<double>> per_class_iou;  // nullopt: class never evaluated
  int64_t n_frames = 0;
  std::optional<double> intent_accuracy;  // intention mode only
};

// One (frame, class) evaluation: the IoU of the prediction for `class_index`
// on frame `frame`.
struct PairIou {
  int64_t frame = 0;
  int class_index = 0;
  double iou = 0.0;
};

// Aggregates pair IoUs. challenge_iou: mean over frames of the mean over that
// frame's pairs; iou: mean over all pairs; per_class_iou: mean per class;
// mc_iou: mean of per_class_iou over classes that were evaluated.
MetricsReport aggregate(const std::vector<PairIou>& pairs, int num_classes);

// logits [K, H, W] -> label map [H, W] int64: argmax (lowest index on ties),
// -1 where every logit is <= threshold.
torch::Tensor compose_label_map(const torch::Tensor& logits, double threshold = 0.0);

// IoU of (labels == k) against gt[k] for every class present in gt [K, H, W].
std::vector<PairIou> semantic_frame_ious(const torch::Tensor& labels, const torch::Tensor& gt, int64_t frame);

nlohmann::json to_json(const MetricsReport& report);
std::string format_table(const MetricsReport& report, const std::vector<std::string>& class_names);

}  // namespace asiseg
