#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "asiseg/audio.hpp"
#include "asiseg/nn.hpp"

namespace asiseg {

// Plug-in point for audio encoders: maps a batch of normalised mels
// [B, n_mels, frames] to embeddings [B, embedding_dim()].
class AudioEncoderBase : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& mels) = 0;
  virtual int64_t embedding_dim() const = 0;
  virtual int64_t n_mels() const = 0;
};

// Three strided conv1d blocks over time (mel bins as channels), each
// conv -> layer norm over channels -> GELU, then global average pooling over
// time and a final parameter-free layer norm. The input is first normalised
// per frame across mel bins.
class ConvAudioEncoder : public AudioEncoderBase {
 public:
  ConvAudioEncoder(int64_t n_mels, int64_t embedding_dim, uint64_t seed);

  torch::Tensor forward(const torch::Tensor& mels) override;
  int64_t embedding_dim() const override { return embedding_dim_; }
  int64_t n_mels() const override { return n_mels_; }

 private:
  int64_t n_mels_;
  int64_t embedding_dim_;
  std::vector<torch::Tensor> conv_weights_;
};

struct IntentLabel {
  int class_index = 0;
  std::string class_name;
  std::vector<double> probabilities;
};

// phi: a single linear layer over the audio embedding, followed by softmax.
class IntentClassifierImpl : public torch::nn::Module {
 public:
  IntentClassifierImpl(int64_t embedding_dim, int64_t num_classes, ParamInit& init);

  torch::Tensor forward(const torch::Tensor& embeddings) const;  // logits [B, K]
  int64_t num_classes() const { return head->weight.size(0); }

  Linear head{nullptr};
};
TORCH_MODULE(IntentClassifier);

torch::Tensor encode_audio(const NormalizedMel& mel, AudioEncoderBase& encoder);

// Argmax with ties resolved toward the lowest index.
int argmax_lowest(std::span<const double> values);

IntentLabel intent_from_logits(const torch::Tensor& logits, std::span<const std::string> class_names);

IntentLabel classify_intent(const torch::Tensor& embedding, const IntentClassifier& classifier,
                            std::span<const std::string> class_names);

}  // namespace asiseg
