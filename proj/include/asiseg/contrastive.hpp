#pragma once

#include <optional>
#include <vector>

#include <torch/torch.h>

#include "asiseg/fusion.hpp"
#include "asiseg/nn.hpp"

namespace asiseg {

struct TokenSequence {
  torch::Tensor tokens;  // [T, d], row-major over (y, x)
};

struct RefinedFeatures {
  TokenSequence required_refined;    // P* [T, d]
  torch::Tensor irrelevant_refined;  // N* [K-1, T, d]
};

struct ClassPooledEmbeddings {
  torch::Tensor values;       // [K, d]
  std::vector<bool> present;  // class has at least one ground-truth pixel
};

struct PromptPair {
  torch::Tensor foreground;  // [m_f, d_p]
  torch::Tensor background;  // [m_b, d_p]
};

// Attention(F+, F-) = softmax(Q_{F+} K_{F-}^T / sqrt(D)) V_{F-}.
// The same parameters serve the symmetric Attention(F-, F+).
class DistinguishingAttentionImpl : public torch::nn::Module {
 public:
  DistinguishingAttentionImpl(int64_t dim, int64_t key_dim, ParamInit& init);

  // queries [..., Tq, d], keys [..., Tk, d] -> [..., Tq, d]
  torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& keys) const;
  torch::Tensor weights(const torch::Tensor& queries, const torch::Tensor& keys) const;

  Linear query{nullptr}, key{nullptr}, value{nullptr};
};
TORCH_MODULE(DistinguishingAttention);

TokenSequence to_tokens(const torch::Tensor& map);  // [h, w, d] -> [h*w, d]

TokenSequence distinguishing_attention(const TokenSequence& fp, const TokenSequence& fn,
                                       const DistinguishingAttention& params);
TokenSequence inverse_residual(const TokenSequence& p, const TokenSequence& attn_out);

// P* = F+ - Attn(F+, concat F-), N*_j = F-_j - Attn(F-_j, F+). With no
// irrelevant classes (K = 1) there is nothing to subtract and P* = F+.
RefinedFeatures refine(const IntentPartition& partition, const DistinguishingAttention& params);

// Batched form: required [B, T, d], irrelevant [B, K-1, T, d] -> {P*, N*}.
std::pair<torch::Tensor, torch::Tensor> batched_refine(const torch::Tensor& required,
                                                       const torch::Tensor& irrelevant,
                                                       const DistinguishingAttention& params);

// gt_masks [K, H, W] with values in {0, 1}; H and W must be the same integer
// multiple of the feature grid. Masks are max-pooled to the grid.
ClassPooledEmbeddings pool_gt_features(const ImageFeatureMap& features, const torch::Tensor& gt_masks);

// tokens [B, T, d] on an (h, w) grid, masks [B, K, H, W] -> {values [B, K, d], present [B, K] bool}
std::pair<torch::Tensor, torch::Tensor> batched_pool_gt(const torch::Tensor& tokens, int64_t h, int64_t w,
                                                        const torch::Tensor& masks);

// InfoNCE over the present classes: -log softmax_target(<p, v_n> / tau).
// Returns nullopt when the target class is absent.
std::optional<torch::Tensor> contrastive_loss(const torch::Tensor& pooled, const ClassPooledEmbeddings& v,
                                              int target, double tau);

// pooled [B, d], values [B, K, d], present [B, K], targets [B] -> per-sample
// losses [B] and a bool mask of samples whose target is present.
std::pair<torch::Tensor, torch::Tensor> batched_contrastive_loss(const torch::Tensor& pooled,
                                                                 const torch::Tensor& values,
                                                                 const torch::Tensor& present,
                                                                 const torch::Tensor& targets, double tau);

// Linear d -> d_p applied to mean-pooled refined features.
PromptPair emit_prompts(const RefinedFeatures& refined, const Linear& projection);

// P* [B, T, d], N* [B, M, T, d] -> {foreground [B, 1, d_p], background [B, M, d_p]}
std::pair<torch::Tensor, torch::Tensor> batched_prompts(const torch::Tensor& required_refined,
                                                        const torch::Tensor& irrelevant_refined,
                                                        const Linear& projection);

}  // namespace asiseg
