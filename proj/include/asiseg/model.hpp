#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "asiseg/audio.hpp"
#include "asiseg/contrastive.hpp"
#include "asiseg/fusion.hpp"
#include "asiseg/intent.hpp"
#include "asiseg/knowledge_bank.hpp"
#include "asiseg/mask_decoder.hpp"
#include "json.hpp"

namespace asiseg {

struct ModelConfig {
  int num_classes = kDefaultNumClasses;
  int64_t dim = 64;
  int64_t key_dim = 64;
  int64_t image_size = 64;
  int64_t stride = 8;
  int64_t encoder_blocks = 2;
  int64_t encoder_neighbourhood = PatchImageEncoder::kGlobal;
  int64_t decoder_heads = 4;
  int64_t decoder_depth = 2;
  MelConfig mel;
  uint64_t seed = 7;
  bool use_bank = true;             // false: the queries are the learnable embeddings alone
  bool background_refined = true;  // false: background prompts from raw F- instead of N*
  double query_init_std = 0.1;

  void validate() const;
  int64_t grid() const { return image_size / stride; }
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Per-component initialisation seeds derived from ModelConfig::seed.
struct ComponentSeeds {
  uint64_t image_encoder, audio_encoder, text_encoder, heads, decoder;
};
ComponentSeeds component_seeds(uint64_t seed);
nlohmann::json to_json(const ComponentSeeds& seeds);

struct NamedGroup {
  std::string name;
  std::vector<std::pair<std::string, torch::Tensor>> parameters;
};

struct ParamPartition {
  std::vector<NamedGroup> frozen;
  std::vector<NamedGroup> trainable;

  std::vector<torch::Tensor> trainable_parameters() const;
};

struct SegmentBatch {
  torch::Tensor logits;  // [B, H, W]
  torch::Tensor anchor;  // mean-pooled P*, [B, d]
};

class AsiSeg : public torch::nn::Module {
 public:
  AsiSeg(const ModelConfig& config, DescriptionBank bank);

  const ModelConfig& config() const { return config_; }
  const DescriptionBank& bank() const { return bank_; }
  int num_classes() const { return config_.num_classes; }

  const std::optional<NormStats>& norm_stats() const { return norm_stats_; }
  void set_norm_stats(const NormStats& stats) { norm_stats_ = stats; }

  // Groups named after the components; encoders are frozen when freeze_encoders.
  ParamPartition partition(bool freeze_encoders = true) const;
  uint64_t encoder_checksum() const;

  torch::Tensor text_features();  // f_t [K, d]
  torch::Tensor queries();        // q [K, d]

  // images [B, H, W, 3] -> tokens [B, T, d]
  torch::Tensor image_tokens(const torch::Tensor& images);
  // clip -> audio embedding [d_a]; requires fitted norm stats.
  torch::Tensor audio_embedding(const AudioClip& clip);
  torch::Tensor intent_logits(const torch::Tensor& audio_embeddings);  // [B, d_a] -> [B, K]

  // tokens [B, T, d], targets [B] -> logits at image resolution
  SegmentBatch segment_tokens(const torch::Tensor& tokens, const torch::Tensor& targets);

  IntentLabel infer_intent(const AudioClip& clip);
  MaskLogits segment(const torch::Tensor& image, int target_class);
  // audio -> intent -> fusion -> prompts -> mask
  std::pair<IntentLabel, MaskLogits> run(const torch::Tensor& image, const AudioClip& clip);

  std::shared_ptr<PatchImageEncoder> image_encoder;
  std::shared_ptr<ConvAudioEncoder> audio_encoder;
  std::shared_ptr<HashedTextEncoder> text_encoder;
  torch::Tensor learnable_queries;  // f_c [K, d]
  TextFusion text_fusion{nullptr};
  DistinguishingAttention distinguishing{nullptr};
  Linear prompt_projection{nullptr};
  MaskDecoder decoder{nullptr};
  IntentClassifier classifier{nullptr};

 private:
  ModelConfig config_;
  DescriptionBank bank_;
  std::optional<NormStats> norm_stats_;
};

}  // namespace asiseg
