#pragma once

#include <vector>

#include <torch/torch.h>

#include "asiseg/contrastive.hpp"
#include "asiseg/fusion.hpp"
#include "asiseg/nn.hpp"

namespace asiseg {

struct MaskLogits {
  torch::Tensor values;  // [H, W]
};

struct BinaryMask {
  torch::Tensor values;  // [H, W] uint8 in {0, 1}
};

BinaryMask make_binary_mask(const torch::Tensor& values);  // validates {0, 1}

// Miniature two-way prompt decoder: an output mask token plus the prompt
// tokens attend to image tokens and back, then a hypernetwork on the mask
// token produces per-channel weights for upsampled image features.
class MaskDecoderImpl : public torch::nn::Module {
 public:
  MaskDecoderImpl(int64_t dim, int64_t heads, int64_t depth, uint64_t seed);

  // image [B, h*w, d] on an (h, w) grid, foreground [B, m_f, d],
  // background [B, m_b, d] -> logits [B, 8h, 8w]
  torch::Tensor forward(const torch::Tensor& image, int64_t h, int64_t w, const torch::Tensor& foreground,
                        const torch::Tensor& background) const;

  static constexpr int64_t kUpscale = 8;

 private:
  struct Layer {
    MultiHeadAttention self_attn{nullptr};
    LayerNorm norm_self{nullptr};
    MultiHeadAttention token_to_image{nullptr};
    LayerNorm norm_cross{nullptr};
    Linear mlp_in{nullptr}, mlp_out{nullptr};
    LayerNorm norm_mlp{nullptr};
    MultiHeadAttention image_to_token{nullptr};
    LayerNorm norm_image{nullptr};
  };

  torch::Tensor position_code(int64_t h, int64_t w) const;
  torch::Tensor upsample(const torch::Tensor& image, int64_t h, int64_t w) const;

  int64_t dim_;
  torch::Tensor mask_token_, fg_type_, bg_type_;
  torch::Tensor fourier_;  // buffer [2, d/2]
  std::vector<Layer> layers_;
  MultiHeadAttention final_attn_{nullptr};
  LayerNorm final_norm_{nullptr};
  std::vector<torch::Tensor> up_weights_, up_biases_;
  std::vector<LayerNorm> up_norms_;
  std::vector<Linear> hyper_;
};
TORCH_MODULE(MaskDecoder);

MaskLogits decode_mask(const ImageFeatureMap& features, const PromptPair& prompts, const MaskDecoder& decoder);

BinaryMask threshold(const MaskLogits& logits, double t = 0.0);

// 1 - (2 sum(p g) + eps) / (sum(p^2) + sum(g^2) + eps), p = sigmoid(logits).
constexpr double kDiceEps = 1e-6;
torch::Tensor dice_loss(const MaskLogits& logits, const BinaryMask& gt);
// Same formula on probabilities; leading dims are batch, last two spatial.
torch::Tensor soft_dice_loss(const torch::Tensor& probabilities, const torch::Tensor& gt);

}  // namespace asiseg
