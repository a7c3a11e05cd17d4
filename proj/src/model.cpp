#include "asiseg/model.hpp"

#include "asiseg/error.hpp"
#include "asiseg/seed.hpp"

namespace asiseg {

void ModelConfig::validate() const {
  check(num_classes >= 1, ErrorCode::kConfig, "num_classes must be >= 1");
  check(dim > 0 && dim % 4 == 0, ErrorCode::kConfig, "dim must be a positive multiple of 4");
  check(key_dim > 0, ErrorCode::kConfig, "key_dim must be positive");
  check(decoder_heads > 0 && dim % decoder_heads == 0, ErrorCode::kConfig, "decoder heads must divide dim");
  check(stride == MaskDecoderImpl::kUpscale, ErrorCode::kConfig,
        "encoder stride must equal the decoder upscale factor " + std::to_string(MaskDecoderImpl::kUpscale));
  check(image_size > 0 && image_size % stride == 0, ErrorCode::kConfig, "image_size must be divisible by the stride");
  check(encoder_blocks >= 0 && decoder_depth >= 1, ErrorCode::kConfig, "invalid block counts");
  check(query_init_std > 0, ErrorCode::kConfig, "query_init_std must be positive");
  mel.validate();
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_classes", c.num_classes},
          {"dim", c.dim},
          {"key_dim", c.key_dim},
          {"image_size", c.image_size},
          {"stride", c.stride},
          {"encoder_blocks", c.encoder_blocks},
          {"encoder_neighbourhood", c.encoder_neighbourhood},
          {"decoder_heads", c.decoder_heads},
          {"decoder_depth", c.decoder_depth},
          {"mel",
           {{"n_mels", c.mel.n_mels},
            {"window_samples", c.mel.window_samples},
            {"hop_samples", c.mel.hop_samples},
            {"fft_size", c.mel.fft_size}}},
          {"seed", c.seed},
          {"use_bank", c.use_bank},
          {"background_refined", c.background_refined},
          {"query_init_std", c.query_init_std}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.num_classes = j.at("num_classes").get<int>();
    c.dim = j.at("dim").get<int64_t>();
    c.key_dim = j.at("key_dim").get<int64_t>();
    c.image_size = j.at("image_size").get<int64_t>();
    c.stride = j.at("stride").get<int64_t>();
    c.encoder_blocks = j.at("encoder_blocks").get<int64_t>();
    c.encoder_neighbourhood = j.at("encoder_neighbourhood").get<int64_t>();
    c.decoder_heads = j.at("decoder_heads").get<int64_t>();
    c.decoder_depth = j.at("decoder_depth").get<int64_t>();
    const auto& m = j.at("mel");
    c.mel.n_mels = m.at("n_mels").get<int>();
    c.mel.window_samples = m.at("window_samples").get<int>();
    c.mel.hop_samples = m.at("hop_samples").get<int>();
    c.mel.fft_size = m.at("fft_size").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.use_bank = j.at("use_bank").get<bool>();
    c.background_refined = j.at("background_refined").get<bool>();
    c.query_init_std = j.at("query_init_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

ComponentSeeds component_seeds(uint64_t seed) {
  return {derive_seed(seed, {1}), derive_seed(seed, {2}), derive_seed(seed, {3}), derive_seed(seed, {4}),
          derive_seed(seed, {5})};
}

nlohmann::json to_json(const ComponentSeeds& s) {
  return {{"image_encoder", s.image_encoder},
          {"audio_encoder", s.audio_encoder},
          {"text_encoder", s.text_encoder},
          {"heads", s.heads},
          {"decoder", s.decoder}};
}

std::vector<torch::Tensor> ParamPartition::trainable_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& g : trainable) {
    for (const auto& [name, p] : g.parameters) out.push_back(p);
  }
  return out;
}

AsiSeg::AsiSeg(const ModelConfig& config, DescriptionBank bank) : config_(config), bank_(std::move(bank)) {
  config_.validate();
  check(bank_.num_classes() == config_.num_classes, ErrorCode::kConfig,
        "bank has " + std::to_string(bank_.num_classes()) + " classes, model expects " +
            std::to_string(config_.num_classes));
  const auto seeds = component_seeds(config_.seed);
  const int64_t d = config_.dim, k = config_.num_classes;
  image_encoder = register_module("image_encoder",
                                  std::make_shared<PatchImageEncoder>(d, config_.stride, config_.encoder_blocks,
                                                                      seeds.image_encoder,
                                                                      config_.encoder_neighbourhood));
  audio_encoder = register_module("audio_encoder",
                                  std::make_shared<ConvAudioEncoder>(config_.mel.n_mels, d, seeds.audio_encoder));
  text_encoder = register_module("text_encoder", std::make_shared<HashedTextEncoder>(d, seeds.text_encoder));
  ParamInit init(seeds.heads);
  learnable_queries = register_parameter("learnable_queries", init.normal({k, d}, config_.query_init_std));
  text_fusion = register_module("text_fusion", TextFusion(d, config_.key_dim, init));
  distinguishing = register_module("distinguishing_attention", DistinguishingAttention(d, config_.key_dim, init));
  prompt_projection = register_module("prompt_projection", Linear(d, d, init));
  classifier = register_module("intent_classifier", IntentClassifier(d, k, init));
  decoder = register_module("mask_decoder",
                            MaskDecoder(d, config_.decoder_heads, config_.decoder_depth, seeds.decoder));
}

namespace {
NamedGroup group_of(const std::string& name, const torch::nn::Module& module) {
  NamedGroup g{name, {}};
  for (const auto& item : module.named_parameters()) g.parameters.emplace_back(item.key(), item.value());
  return g;
}
}  // namespace

ParamPartition AsiSeg::partition(bool freeze_encoders) const {
  ParamPartition out;
  auto& encoders = freeze_encoders ? out.frozen : out.trainable;
  encoders.push_back(group_of("image_encoder", *image_encoder));
  encoders.push_back(group_of("audio_encoder", *audio_encoder));
  encoders.push_back(group_of("text_encoder", *text_encoder));
  out.trainable.push_back({"learnable_queries", {{"learnable_queries", learnable_queries}}});
  out.trainable.push_back(group_of("text_fusion", *text_fusion));
  out.trainable.push_back(group_of("distinguishing_attention", *distinguishing));
  out.trainable.push_back(group_of("prompt_projection", *prompt_projection));
  out.trainable.push_back(group_of("intent_classifier", *classifier));
  out.trainable.push_back(group_of("mask_decoder", *decoder));
  return out;
}

uint64_t AsiSeg::encoder_checksum() const {
  uint64_t h = parameter_checksum(*image_encoder);
  h = splitmix64(h ^ parameter_checksum(*audio_encoder));
  return splitmix64(h ^ parameter_checksum(*text_encoder));
}

torch::Tensor AsiSeg::text_features() { return encode_descriptions(bank_, *text_encoder); }

torch::Tensor AsiSeg::queries() {
  if (!config_.use_bank) return learnable_queries;
  return text_fuse(learnable_queries, text_features(), text_fusion);
}

torch::Tensor AsiSeg::image_tokens(const torch::Tensor& images) {
  check(images.dim() == 4 && images.size(1) == config_.image_size && images.size(2) == config_.image_size,
        ErrorCode::kShape,
        "model expects " + std::to_string(config_.image_size) + "x" + std::to_string(config_.image_size) +
            " images");
  return image_encoder->forward(images);
}

torch::Tensor AsiSeg::audio_embedding(const AudioClip& clip) {
  check(norm_stats_.has_value(), ErrorCode::kConfig, "mel normalisation statistics have not been fitted");
  validate_clip(clip, config_.mel);
  return encode_audio(normalize_mel(compute_mel(clip, config_.mel), *norm_stats_), *audio_encoder);
}

torch::Tensor AsiSeg::intent_logits(const torch::Tensor& audio_embeddings) {
  return classifier->forward(audio_embeddings);
}

SegmentBatch AsiSeg::segment_tokens(const torch::Tensor& tokens, const torch::Tensor& targets) {
  const int64_t batch = tokens.size(0), t = tokens.size(1), d = tokens.size(2), k = config_.num_classes;
  const int64_t g = config_.grid();
  check(t == g * g && d == config_.dim, ErrorCode::kShape, "token batch does not match the model grid");
  check(targets.dim() == 1 && targets.size(0) == batch, ErrorCode::kShape, "need one target per sample");
  auto q = queries();
  auto fused = batched_visual_fuse(tokens, batched_similarity(tokens, q));
  auto [required, irrelevant] = batched_partition(fused, targets);
  auto [p_star, n_star] = batched_refine(required, irrelevant, distinguishing);
  const auto& background_source = config_.background_refined ? n_star : irrelevant;
  auto [fg, bg] = batched_prompts(p_star, background_source.reshape({batch, k - 1, t, d}), prompt_projection);
  return {decoder->forward(tokens, g, g, fg, bg), p_star.mean(1)};
}

IntentLabel AsiSeg::infer_intent(const AudioClip& clip) {
  torch::NoGradGuard no_grad;
  return classify_intent(audio_embedding(clip), classifier, bank_.class_names());
}

MaskLogits AsiSeg::segment(const torch::Tensor& image, int target_class) {
  check(target_class >= 0 && target_class < config_.num_classes, ErrorCode::kArgument, "target class out of range");
  check(image.dim() == 3 && image.size(2) == 3, ErrorCode::kShape, "image must be [H, W, 3]");
  torch::NoGradGuard no_grad;
  auto tokens = image_tokens(image.unsqueeze(0));
  auto out = segment_tokens(tokens, torch::tensor({static_cast<int64_t>(target_class)}));
  return {out.logits.squeeze(0)};
}

std::pair<IntentLabel, MaskLogits> AsiSeg::run(const torch::Tensor& image, const AudioClip& clip) {
  auto intent = infer_intent(clip);
  return {intent, segment(image, intent.class_index)};
}

}  // namespace asiseg
