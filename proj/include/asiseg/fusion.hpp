#pragma once

#include <vector>

#include <torch/torch.h>

#include "asiseg/nn.hpp"

namespace asiseg {

struct ImageFeatureMap {
  torch::Tensor values;  // [h, w, d]
  int64_t source_height = 0;
  int64_t source_width = 0;

  int64_t height() const { return values.size(0); }
  int64_t width() const { return values.size(1); }
  int64_t dim() const { return values.size(2); }
  torch::Tensor tokens() const { return values.reshape({-1, values.size(2)}); }  // [h*w, d]
};

// Plug-in point for image encoders. forward takes images [B, H, W, 3] with
// values in [0, 255] and returns tokens [B, h*w, d], row-major over (y, x).
class ImageEncoderBase : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& images) = 0;
  virtual int64_t stride() const = 0;
  virtual int64_t embedding_dim() const = 0;
};

// Patch embedding (stride x stride patches, linear projection to d) plus a
// fixed 2-D sinusoidal position code, then residual self-attention blocks.
// Attention is global unless `neighbourhood` >= 0, in which case a cell only
// attends to cells within that Chebyshev distance.
// Output tokens are layer-normed and scaled to unit L2 norm on average.
class PatchImageEncoder : public ImageEncoderBase {
 public:
  PatchImageEncoder(int64_t embedding_dim, int64_t stride, int64_t blocks, uint64_t seed,
                    int64_t neighbourhood = kGlobal);

  torch::Tensor forward(const torch::Tensor& images) override;
  int64_t stride() const override { return stride_; }
  int64_t embedding_dim() const override { return dim_; }

  static constexpr int64_t kGlobal = -1;
  // Cells (Chebyshev distance) that can influence an output cell; kGlobal if unbounded.
  int64_t receptive_radius() const {
    return neighbourhood_ == kGlobal ? kGlobal : neighbourhood_ * static_cast<int64_t>(blocks_.size());
  }

 private:
  struct Block {
    LayerNorm norm_attn{nullptr};
    MultiHeadAttention attn{nullptr};
    LayerNorm norm_mlp{nullptr};
    Linear mlp_in{nullptr};
    Linear mlp_out{nullptr};
  };

  int64_t dim_;
  int64_t stride_;
  int64_t neighbourhood_;
  Linear patch_embed_{nullptr};
  std::vector<Block> blocks_;
};

torch::Tensor sinusoidal_position_code(int64_t h, int64_t w, int64_t dim);
torch::Tensor neighbourhood_mask(int64_t h, int64_t w, int64_t radius);  // [T, T] bool, true = blocked

// image: [H, W, 3] (uint8 or real in [0, 255]).
ImageFeatureMap encode_image(const torch::Tensor& image, ImageEncoderBase& encoder);

struct TextFusionParts {
  torch::Tensor text_attended;   // q_t = softmax(Q_t K_c^T / sqrt(D)) V_c
  torch::Tensor query_attended;  // q_c = softmax(Q_c K_t^T / sqrt(D)) V_t
  torch::Tensor text_weights;    // softmax rows behind q_t
  torch::Tensor query_weights;   // softmax rows behind q_c
  torch::Tensor query;           // MLP(concat(q_t, q_c))
};

// Mutual cross-attention between learnable queries f_c and text features f_t,
// single head, followed by a 2d -> 2d -> d MLP with GELU.
class TextFusionImpl : public torch::nn::Module {
 public:
  TextFusionImpl(int64_t dim, int64_t key_dim, ParamInit& init);

  TextFusionParts forward_parts(const torch::Tensor& learnable, const torch::Tensor& text) const;
  torch::Tensor forward(const torch::Tensor& learnable, const torch::Tensor& text) const;
  torch::Tensor mix(const torch::Tensor& text_attended, const torch::Tensor& query_attended) const;

  Linear q_text{nullptr}, k_text{nullptr}, v_text{nullptr};
  Linear q_query{nullptr}, k_query{nullptr}, v_query{nullptr};
  Linear mlp_hidden{nullptr}, mlp_out{nullptr};
};
TORCH_MODULE(TextFusion);

// learnable, text: [K, d]. Returns the instrument query q [K, d].
torch::Tensor text_fuse(const torch::Tensor& learnable, const torch::Tensor& text, const TextFusion& fusion);

struct SimilarityMaps {
  torch::Tensor values;  // [K, h, w]
};

struct MultimodalFeatureSet {
  torch::Tensor values;  // [K, h, w, d]
};

struct IntentPartition {
  torch::Tensor required;             // [h, w, d]
  torch::Tensor irrelevant;           // [K-1, h, w, d], ascending class order
  std::vector<int> irrelevant_classes;
  int target_class = 0;
};

SimilarityMaps similarity_maps(const torch::Tensor& queries, const ImageFeatureMap& features);
MultimodalFeatureSet visual_fuse(const ImageFeatureMap& features, const SimilarityMaps& similarity);
IntentPartition assign_by_intent(const MultimodalFeatureSet& fused, int target_class);
MultimodalFeatureSet reassemble(const IntentPartition& partition);

// Batched kernels behind the typed operations.
//   tokens [B, T, d], queries [K, d] -> [B, K, T]
torch::Tensor batched_similarity(const torch::Tensor& tokens, const torch::Tensor& queries);
//   tokens [B, T, d], similarity [B, K, T] -> [B, K, T, d]
torch::Tensor batched_visual_fuse(const torch::Tensor& tokens, const torch::Tensor& similarity);
//   fused [B, K, T, d], targets [B] -> {required [B, T, d], irrelevant [B, K-1, T, d]}
std::pair<torch::Tensor, torch::Tensor> batched_partition(const torch::Tensor& fused,
                                                          const torch::Tensor& targets);

}  // namespace asiseg
