#include "asiseg/intent.hpp"

#include <cmath>

#include "asiseg/error.hpp"

namespace asiseg {

namespace {
constexpr int64_t kConvChannels = 64;
constexpr int64_t kConvKernel = 3;
}  // namespace

ConvAudioEncoder::ConvAudioEncoder(int64_t n_mels, int64_t embedding_dim, uint64_t seed)
    : n_mels_(n_mels), embedding_dim_(embedding_dim) {
  ParamInit init(seed);
  const int64_t in_channels[] = {n_mels, kConvChannels, kConvChannels};
  const int64_t out_channels[] = {kConvChannels, kConvChannels, embedding_dim};
  for (int i = 0; i < 3; ++i) {
    auto w = init.fan_in({out_channels[i], in_channels[i], kConvKernel}, in_channels[i] * kConvKernel);
    conv_weights_.push_back(register_parameter("conv" + std::to_string(i), w));
  }
}

torch::Tensor ConvAudioEncoder::forward(const torch::Tensor& mels) {
  check(mels.dim() == 3 && mels.size(1) == n_mels_, ErrorCode::kShape,
        "audio encoder expects [B, " + std::to_string(n_mels_) + ", frames]");
  auto channels_last = [](const torch::Tensor& x) { return x.transpose(1, 2); };
  auto x = channels_last(plain_layer_norm(channels_last(mels)));
  for (const auto& w : conv_weights_) {
    x = torch::conv1d(x, w, {}, /*stride=*/2, /*padding=*/1);
    x = torch::gelu(channels_last(plain_layer_norm(channels_last(x))));
  }
  return plain_layer_norm(x.mean(-1));
}

IntentClassifierImpl::IntentClassifierImpl(int64_t embedding_dim, int64_t num_classes, ParamInit& init) {
  head = register_module("head", Linear(embedding_dim, num_classes, init));
}

torch::Tensor IntentClassifierImpl::forward(const torch::Tensor& embeddings) const {
  return head->forward(embeddings);
}

torch::Tensor encode_audio(const NormalizedMel& mel, AudioEncoderBase& encoder) {
  check(mel.values.dim() == 2 && mel.values.size(0) == encoder.n_mels(), ErrorCode::kShape,
        "mel has " + std::to_string(mel.values.size(0)) + " channels, encoder expects " +
            std::to_string(encoder.n_mels()));
  auto param = encoder.parameters();
  const auto dtype = param.empty() ? torch::kFloat32 : param.front().scalar_type();
  return encoder.forward(mel.values.to(dtype).unsqueeze(0)).squeeze(0);
}

int argmax_lowest(std::span<const double> values) {
  int best = 0;
  for (size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = static_cast<int>(i);
  }
  return best;
}

IntentLabel intent_from_logits(const torch::Tensor& logits, std::span<const std::string> class_names) {
  check(logits.dim() == 1, ErrorCode::kShape, "expected a single logit vector");
  check(static_cast<size_t>(logits.size(0)) == class_names.size(), ErrorCode::kConfig,
        "classifier produces " + std::to_string(logits.size(0)) + " classes, bank has " +
            std::to_string(class_names.size()));
  auto probs = torch::softmax(logits.detach().to(torch::kFloat64), 0).contiguous();
  IntentLabel label;
  label.probabilities.assign(probs.data_ptr<double>(), probs.data_ptr<double>() + probs.numel());
  label.class_index = argmax_lowest(label.probabilities);
  label.class_name = class_names[label.class_index];
  return label;
}

IntentLabel classify_intent(const torch::Tensor& embedding, const IntentClassifier& classifier,
                            std::span<const std::string> class_names) {
  check(classifier->num_classes() == static_cast<int64_t>(class_names.size()), ErrorCode::kConfig,
        "classifier output dimension does not match K");
  torch::NoGradGuard no_grad;
  auto logits = classifier->forward(embedding.to(classifier->head->weight.scalar_type()).unsqueeze(0));
  return intent_from_logits(logits.squeeze(0), class_names);
}

}  // namespace asiseg
