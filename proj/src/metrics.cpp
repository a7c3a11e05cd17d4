#include "asiseg/metrics.hpp"

#include <cstdio>
#include <map>

#include "asiseg/error.hpp"

namespace asiseg {

double compute_iou(const BinaryMask& pred, const BinaryMask& gt) {
  check(pred.values.sizes() == gt.values.sizes(), ErrorCode::kShape, "IoU operands differ in shape");
  auto p = pred.values.to(torch::kBool), g = gt.values.to(torch::kBool);
  const int64_t uni = (p | g).sum().item<int64_t>();
  if (uni == 0) return 1.0;
  const int64_t inter = (p & g).sum().item<int64_t>();
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MetricsReport aggregate(const std::vector<PairIou>& pairs, int num_classes) {
  MetricsReport r;
  r.per_class_iou.assign(num_classes, std::nullopt);
  std::vector<double> class_sum(num_classes, 0.0);
  std::vector<int64_t> class_count(num_classes, 0);
  std::map<int64_t, std::pair<double, int64_t>> frames;  // ordered: fixed reduction order
  double total = 0.0;
  for (const auto& p : pairs) {
    check(p.class_index >= 0 && p.class_index < num_classes, ErrorCode::kArgument, "class index out of range");
    class_sum[p.class_index] += p.iou;
    ++class_count[p.class_index];
    auto& f = frames[p.frame];
    f.first += p.iou;
    ++f.second;
    total += p.iou;
  }
  r.n_frames = static_cast<int64_t>(frames.size());
  if (pairs.empty()) return r;
  r.iou = total / static_cast<double>(pairs.size());
  double challenge = 0.0;
  for (const auto& [frame, f] : frames) challenge += f.first / static_cast<double>(f.second);
  r.challenge_iou = challenge / static_cast<double>(frames.size());
  double mc = 0.0;
  int evaluated = 0;
  for (int k = 0; k < num_classes; ++k) {
    if (class_count[k] == 0) continue;
    r.per_class_iou[k] = class_sum[k] / static_cast<double>(class_count[k]);
    mc += *r.per_class_iou[k];
    ++evaluated;
  }
  r.mc_iou = mc / evaluated;
  return r;
}

torch::Tensor compose_label_map(const torch::Tensor& logits, double threshold) {
  check(logits.dim() == 3, ErrorCode::kShape, "logits must be [K, H, W]");
  auto labels = logits.argmax(0);
  auto background = std::get<0>(logits.max(0)) <= threshold;
  return labels.masked_fill(background, -1);
}

std::vector<PairIou> semantic_frame_ious(const torch::Tensor& labels, const torch::Tensor& gt, int64_t frame) {
  check(gt.dim() == 3 && labels.dim() == 2 && labels.sizes() == gt.sizes().slice(1), ErrorCode::kShape,
        "label map and ground truth differ in shape");
  std::vector<PairIou> out;
  for (int64_t k = 0; k < gt.size(0); ++k) {
    auto g = make_binary_mask(gt[k]);
    if (!g.values.any().item<bool>()) continue;
    out.push_back({frame, static_cast<int>(k), compute_iou({(labels == k).to(torch::kUInt8)}, g)});
  }
  return out;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& v : r.per_class_iou) per_class.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  nlohmann::json j = {{"challenge_iou", r.challenge_iou},
                      {"iou", r.iou},
                      {"mc_iou", r.mc_iou},
                      {"per_class_iou", per_class},
                      {"n_frames", r.n_frames}};
  if (r.intent_accuracy) j["intent_accuracy"] = *r.intent_accuracy;
  return j;
}

std::string format_table(const MetricsReport& r, const std::vector<std::string>& class_names) {
  std::string out;
  char line[160];
  auto row = [&](const std::string& name, const std::string& value) {
    std::snprintf(line, sizeof line, "%-28s %10s\n", name.c_str(), value.c_str());
    out += line;
  };
  auto pct = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", 100.0 * v);
    return std::string(b);
  };
  row("challenge_iou", pct(r.challenge_iou));
  row("iou", pct(r.iou));
  row("mc_iou", pct(r.mc_iou));
  if (r.intent_accuracy) row("intent_accuracy", pct(*r.intent_accuracy));
  row("n_frames", std::to_string(r.n_frames));
  for (size_t k = 0; k < r.per_class_iou.size(); ++k) {
    const auto name = k < class_names.size() ? class_names[k] : "class " + std::to_string(k);
    row("  " + name, r.per_class_iou[k] ? pct(*r.per_class_iou[k]) : "-");
  }
  return out;
}

}  // namespace asiseg
