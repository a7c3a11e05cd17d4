#include "asiseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "asiseg/error.hpp"
#include "asiseg/seed.hpp"
#include "asiseg/synth.hpp"

namespace asiseg {

namespace {

constexpr int64_t kEncodeChunk = 32;
constexpr int64_t kEvalBatch = 16;
constexpr uint64_t kPerturbStream = 77;

torch::Tensor encode_frames(AsiSeg& model, const Dataset& data) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> chunks;
  for (size_t start = 0; start < data.size(); start += kEncodeChunk) {
    std::vector<torch::Tensor> images;
    for (size_t i = start; i < std::min(data.size(), start + kEncodeChunk); ++i) {
      images.push_back(data.samples[i].image);
    }
    chunks.push_back(model.image_tokens(torch::stack(images)));
  }
  return torch::cat(chunks);
}

torch::Tensor stack_masks(const Dataset& data) {
  std::vector<torch::Tensor> masks;
  for (const auto& s : data.samples) masks.push_back(s.masks);
  return torch::stack(masks);
}

void check_compatible(const AsiSeg& model, const Dataset& data) {
  check(data.num_classes == model.num_classes(), ErrorCode::kConfig,
        "dataset has " + std::to_string(data.num_classes) + " classes, model has " +
            std::to_string(model.num_classes()));
}

}  // namespace

void TrainConfig::validate() const {
  check(learning_rate >= 0 && std::isfinite(learning_rate), ErrorCode::kConfig, "learning rate must be >= 0");
  check(tau > 0, ErrorCode::kConfig, "tau must be positive");
  check(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
  check(epochs >= 0, ErrorCode::kConfig, "epochs must be >= 0");
  check(intent_weight >= 0, ErrorCode::kConfig, "intent_weight must be >= 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"tau", c.tau},
          {"seed", c.seed},                   {"freeze_encoders", c.freeze_encoders},
          {"use_contrastive", c.use_contrastive}, {"intent_weight", c.intent_weight}};
}

nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch}, {"dice", e.dice}, {"cl", e.cl}, {"intent_ce", e.intent_ce},
          {"total", e.total}, {"lr", e.lr}};
}

torch::Tensor total_loss(const torch::Tensor& dice, const torch::Tensor& cl) { return dice + cl; }

NormStats fit_command_norm(const Dataset& data, const MelConfig& mel) {
  std::vector<MelSpectrogram> mels;
  for (const auto& s : data.samples) {
    for (const auto& [k, clip] : s.audio_per_class) mels.push_back(compute_mel(clip, mel));
  }
  check(!mels.empty(), ErrorCode::kEmptyDataset, "no training commands to fit the mel normalisation on");
  return fit_norm_stats(mels);
}

std::vector<EpochLog> train(AsiSeg& model, const Dataset& data, const TrainConfig& config,
                            const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  check(!data.empty(), ErrorCode::kEmptyDataset, "training set is empty");
  check_compatible(model, data);
  if (!model.norm_stats()) model.set_norm_stats(fit_command_norm(data, model.config().mel));

  const auto partition = model.partition(config.freeze_encoders);
  for (const auto& g : partition.frozen) {
    for (const auto& [name, p] : g.parameters) p.set_requires_grad(false);
  }
  for (const auto& g : partition.trainable) {
    for (const auto& [name, p] : g.parameters) p.set_requires_grad(true);
  }

  const int64_t grid = model.config().grid();
  const auto masks = stack_masks(data).to(torch::kFloat32);  // [N, K, H, W]
  torch::Tensor frozen_tokens, frozen_pooled, frozen_present;
  if (config.freeze_encoders) {
    frozen_tokens = encode_frames(model, data);
    std::tie(frozen_pooled, frozen_present) = batched_pool_gt(frozen_tokens, grid, grid, masks);
  }

  std::vector<std::pair<int64_t, int64_t>> items;
  std::vector<AudioClip> commands;
  for (size_t i = 0; i < data.size(); ++i) {
    for (int k : data.samples[i].present_classes) {
      items.emplace_back(static_cast<int64_t>(i), k);
      commands.push_back(evaluation_command(data.samples[i], static_cast<int64_t>(i), k, data.num_classes,
                                            AudioCondition{0.0, std::nullopt, 0.0, config.seed}));
    }
  }
  check(!items.empty(), ErrorCode::kEmptyDataset, "no (frame, class) pairs with a visible instrument");
  auto audio_for = [&](const std::vector<int64_t>& idx) {
    std::vector<torch::Tensor> rows;
    for (int64_t j : idx) rows.push_back(model.audio_embedding(commands[j]));
    return torch::stack(rows);
  };
  torch::Tensor frozen_audio;
  if (config.freeze_encoders) {
    torch::NoGradGuard no_grad;
    std::vector<int64_t> all(items.size());
    std::iota(all.begin(), all.end(), 0);
    frozen_audio = audio_for(all);
  }

  torch::optim::Adam optimizer(partition.trainable_parameters(),
                               torch::optim::AdamOptions(config.learning_rate));
  std::mt19937_64 rng(config.seed);
  std::vector<int64_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochLog> logs;

  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum_dice = 0, sum_cl = 0, sum_ce = 0, sum_total = 0;
    int64_t batch_index = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<int64_t> idx(order.begin() + start, order.begin() + stop), frames, classes;
      for (int64_t j : idx) {
        frames.push_back(items[j].first);
        classes.push_back(items[j].second);
      }
      const auto f = torch::tensor(frames), k = torch::tensor(classes);
      torch::Tensor tokens, pooled, present, audio;
      if (config.freeze_encoders) {
        tokens = frozen_tokens.index_select(0, f);
        pooled = frozen_pooled.index_select(0, f);
        present = frozen_present.index_select(0, f);
        audio = frozen_audio.index_select(0, torch::tensor(idx));
      } else {
        std::vector<torch::Tensor> images;
        for (int64_t i : frames) images.push_back(data.samples[i].image);
        tokens = model.image_tokens(torch::stack(images));
        std::tie(pooled, present) = batched_pool_gt(tokens, grid, grid, masks.index_select(0, f));
        audio = audio_for(idx);
      }
      auto out = model.segment_tokens(tokens, k);
      auto gt = masks.index({f, k});
      auto dice = soft_dice_loss(torch::sigmoid(out.logits), gt).mean();
      auto [cl_each, valid] = batched_contrastive_loss(out.anchor, pooled, present, k, config.tau);
      auto cl = valid.any().item<bool>() ? cl_each.masked_select(valid).mean() : torch::zeros({}, dice.options());
      auto ce = torch::nn::functional::cross_entropy(model.intent_logits(audio), k);
      auto seg = config.use_contrastive ? total_loss(dice, cl) : dice;
      auto loss = seg + config.intent_weight * ce;
      const double value = loss.item<double>();
      if (!std::isfinite(value)) {
        std::string ids;
        for (int64_t i : frames) ids += (ids.empty() ? "" : ",") + data.samples[i].id;
        fail(ErrorCode::kNumeric, "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_index) + " (frames " + ids + ")");
      }
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      const double n = static_cast<double>(idx.size());
      sum_dice += dice.item<double>() * n;
      sum_cl += cl.item<double>() * n;
      sum_ce += ce.item<double>() * n;
      sum_total += value * n;
    }
    const double n = static_cast<double>(items.size());
    EpochLog log{epoch, sum_dice / n, sum_cl / n, sum_ce / n, sum_total / n, config.learning_rate};
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  for (const auto& g : partition.trainable) {
    for (const auto& [name, p] : g.parameters) p.set_requires_grad(false);
  }
  return logs;
}

AudioClip evaluation_command(const SceneSample& sample, int64_t frame, int class_index, int num_classes,
                             const AudioCondition& condition) {
  AudioClip clip;
  auto stored = sample.audio_per_class.find(class_index);
  if (condition.mispronounce == 0.0 && stored != sample.audio_per_class.end()) {
    clip = stored->second;
  } else {
    const uint64_t seed = derive_seed(condition.seed, {static_cast<uint64_t>(frame), static_cast<uint64_t>(class_index)});
    clip = synth_command_audio(class_index, seed, condition.mispronounce, num_classes);
  }
  if (condition.perturb) {
    const uint64_t seed =
        derive_seed(condition.seed, {static_cast<uint64_t>(frame), static_cast<uint64_t>(class_index), kPerturbStream});
    clip = perturb_audio(clip, *condition.perturb, condition.magnitude, seed);
  }
  return clip;
}

MetricsReport evaluate_intention(AsiSeg& model, const Dataset& data, const AudioCondition& condition) {
  check_compatible(model, data);
  torch::NoGradGuard no_grad;
  const auto tokens = encode_frames(model, data);
  struct Query {
    int64_t frame;
    int commanded;
    int predicted;
  };
  std::vector<Query> queries;
  int64_t correct = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    for (int k : data.samples[i].present_classes) {
      auto clip = evaluation_command(data.samples[i], static_cast<int64_t>(i), k, data.num_classes, condition);
      const int predicted = model.infer_intent(clip).class_index;
      correct += predicted == k;
      queries.push_back({static_cast<int64_t>(i), k, predicted});
    }
  }
  std::vector<PairIou> pairs;
  for (size_t start = 0; start < queries.size(); start += kEvalBatch) {
    const size_t stop = std::min(queries.size(), start + kEvalBatch);
    std::vector<int64_t> frames, targets;
    for (size_t q = start; q < stop; ++q) {
      frames.push_back(queries[q].frame);
      targets.push_back(queries[q].predicted);
    }
    auto logits = model.segment_tokens(tokens.index_select(0, torch::tensor(frames)), torch::tensor(targets)).logits;
    for (size_t q = start; q < stop; ++q) {
      const auto& query = queries[q];
      auto pred = threshold({logits[static_cast<int64_t>(q - start)]});
      BinaryMask gt{data.samples[query.frame].masks[query.commanded]};
      pairs.push_back({query.frame, query.commanded, compute_iou(pred, gt)});
    }
  }
  auto report = aggregate(pairs, data.num_classes);
  report.intent_accuracy = queries.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(queries.size());
  return report;
}

MetricsReport evaluate_semantic(AsiSeg& model, const Dataset& data) {
  check_compatible(model, data);
  torch::NoGradGuard no_grad;
  const auto tokens = encode_frames(model, data);
  const int64_t k = model.num_classes();
  const auto all_classes = torch::arange(k, torch::kInt64);
  std::vector<PairIou> pairs;
  for (size_t i = 0; i < data.size(); ++i) {
    auto frame_tokens = tokens[static_cast<int64_t>(i)].unsqueeze(0).expand({k, -1, -1});
    auto logits = model.segment_tokens(frame_tokens, all_classes).logits;
    auto frame_pairs = semantic_frame_ious(compose_label_map(logits), data.samples[i].masks, static_cast<int64_t>(i));
    pairs.insert(pairs.end(), frame_pairs.begin(), frame_pairs.end());
  }
  return aggregate(pairs, data.num_classes);
}

std::vector<RobustnessRow> robustness_sweep(AsiSeg& model, const Dataset& data, const std::vector<PerturbKind>& kinds,
                                            const std::vector<double>& magnitudes, const AudioCondition& base) {
  std::vector<RobustnessRow> rows;
  for (auto kind : kinds) {
    for (double m : magnitudes) {
      auto condition = base;
      condition.perturb = kind;
      condition.magnitude = m;
      auto report = evaluate_intention(model, data, condition);
      rows.push_back({kind, m, report.intent_accuracy.value_or(0.0), report.mc_iou});
    }
  }
  return rows;
}

nlohmann::json to_json(const RobustnessRow& row) {
  return {{"kind", perturb_kind_name(row.kind)},
          {"magnitude", row.magnitude},
          {"intent_accuracy", row.intent_accuracy},
          {"mc_iou", row.mc_iou}};
}

}  // namespace asiseg
