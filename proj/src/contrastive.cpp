#include "asiseg/contrastive.hpp"

#include <cmath>

#include "asiseg/error.hpp"

namespace asiseg {

namespace {
constexpr double kValueGain = 0.1;  // small V keeps P* close to F+ early in training
}

DistinguishingAttentionImpl::DistinguishingAttentionImpl(int64_t dim, int64_t key_dim, ParamInit& init) {
  query = register_module("query", Linear(dim, key_dim, init));
  key = register_module("key", Linear(dim, key_dim, init));
  value = register_module("value", Linear(dim, dim, init, kValueGain));
}

torch::Tensor DistinguishingAttentionImpl::weights(const torch::Tensor& queries, const torch::Tensor& keys) const {
  return attention_weights(query->forward(queries), key->forward(keys));
}

torch::Tensor DistinguishingAttentionImpl::forward(const torch::Tensor& queries, const torch::Tensor& keys) const {
  return torch::matmul(weights(queries, keys), value->forward(keys));
}

TokenSequence to_tokens(const torch::Tensor& map) {
  check(map.dim() == 3, ErrorCode::kShape, "feature map must be [h, w, d]");
  return {map.reshape({-1, map.size(2)})};
}

TokenSequence distinguishing_attention(const TokenSequence& fp, const TokenSequence& fn,
                                       const DistinguishingAttention& params) {
  check(fp.tokens.dim() == 2 && fn.tokens.dim() == 2, ErrorCode::kShape, "token sequences must be [T, d]");
  check(fp.tokens.size(1) == fn.tokens.size(1), ErrorCode::kShape, "token sequences differ in d");
  check(fp.tokens.size(1) == params->value->weight.size(1), ErrorCode::kShape,
        "token dimension does not match the attention parameters");
  check(fn.tokens.size(0) > 0, ErrorCode::kArgument, "attention needs at least one key token");
  return {params->forward(fp.tokens, fn.tokens)};
}

TokenSequence inverse_residual(const TokenSequence& p, const TokenSequence& attn_out) {
  check(p.tokens.sizes() == attn_out.tokens.sizes(), ErrorCode::kShape, "inverse residual operands differ in shape");
  return {p.tokens - attn_out.tokens};
}

std::pair<torch::Tensor, torch::Tensor> batched_refine(const torch::Tensor& required,
                                                       const torch::Tensor& irrelevant,
                                                       const DistinguishingAttention& params) {
  const int64_t batch = required.size(0), tokens = required.size(1), dim = required.size(2);
  const int64_t others = irrelevant.size(1);
  if (others == 0) return {required, irrelevant};
  auto keys = irrelevant.reshape({batch, others * tokens, dim});
  auto p_star = required - params->forward(required, keys);
  auto n_star = irrelevant - params->forward(irrelevant, required.unsqueeze(1));
  return {p_star, n_star};
}

RefinedFeatures refine(const IntentPartition& partition, const DistinguishingAttention& params) {
  auto required = to_tokens(partition.required).tokens;
  const auto& irr = partition.irrelevant;
  check(irr.dim() == 4, ErrorCode::kShape, "irrelevant features must be [K-1, h, w, d]");
  auto irrelevant = irr.reshape({irr.size(0), irr.size(1) * irr.size(2), irr.size(3)});
  auto [p_star, n_star] = batched_refine(required.unsqueeze(0), irrelevant.unsqueeze(0), params);
  return {{p_star.squeeze(0)}, n_star.squeeze(0)};
}

std::pair<torch::Tensor, torch::Tensor> batched_pool_gt(const torch::Tensor& tokens, int64_t h, int64_t w,
                                                        const torch::Tensor& masks) {
  check(masks.dim() == 4, ErrorCode::kShape, "masks must be [B, K, H, W]");
  const int64_t height = masks.size(2), width = masks.size(3);
  check(height % h == 0 && width % w == 0 && height / h == width / w, ErrorCode::kShape,
        "mask size is not an integer multiple of the feature grid");
  check(((masks == 0) | (masks == 1)).all().item<bool>(), ErrorCode::kValidation, "ground-truth mask is not binary");
  auto m = torch::max_pool2d(masks.to(tokens.scalar_type()), {height / h, width / w});
  m = m.flatten(2);  // [B, K, T]
  auto count = m.sum(-1);
  auto values = torch::matmul(m, tokens) / count.clamp_min(1).unsqueeze(-1);
  return {values, count > 0};
}

ClassPooledEmbeddings pool_gt_features(const ImageFeatureMap& features, const torch::Tensor& gt_masks) {
  check(gt_masks.dim() == 3, ErrorCode::kShape, "masks must be [K, H, W]");
  auto [values, present] = batched_pool_gt(features.tokens().unsqueeze(0), features.height(), features.width(),
                                           gt_masks.unsqueeze(0));
  ClassPooledEmbeddings out;
  out.values = values.squeeze(0);
  auto flags = present.squeeze(0).contiguous();
  for (int64_t k = 0; k < flags.size(0); ++k) out.present.push_back(flags[k].item<bool>());
  return out;
}

std::pair<torch::Tensor, torch::Tensor> batched_contrastive_loss(const torch::Tensor& pooled,
                                                                 const torch::Tensor& values,
                                                                 const torch::Tensor& present,
                                                                 const torch::Tensor& targets, double tau) {
  check(tau > 0, ErrorCode::kArgument, "temperature must be positive");
  auto t = targets.to(torch::kInt64).unsqueeze(1);
  auto logits = torch::matmul(values, pooled.unsqueeze(-1)).squeeze(-1) / tau;  // [B, K]
  auto valid = present.gather(1, t).squeeze(1);
  // Rows whose target is absent get the target admitted so their (discarded)
  // loss stays finite and contributes no NaN to the backward pass.
  auto admitted = present.scatter(1, t, true);
  auto denom = torch::logsumexp(logits.masked_fill(admitted.logical_not(), -INFINITY), 1);
  return {denom - logits.gather(1, t).squeeze(1), valid};
}

std::optional<torch::Tensor> contrastive_loss(const torch::Tensor& pooled, const ClassPooledEmbeddings& v,
                                              int target, double tau) {
  check(tau > 0, ErrorCode::kArgument, "temperature must be positive");
  const int64_t classes = v.values.size(0);
  check(target >= 0 && target < classes, ErrorCode::kArgument, "target class out of range");
  check(static_cast<int64_t>(v.present.size()) == classes, ErrorCode::kShape, "present flags do not match K");
  check(pooled.dim() == 1 && pooled.size(0) == v.values.size(1), ErrorCode::kShape, "anchor and embeddings differ in d");
  if (!v.present[target]) return std::nullopt;
  auto present = torch::zeros({1, classes}, torch::kBool);
  for (int64_t k = 0; k < classes; ++k) present[0][k] = static_cast<bool>(v.present[k]);
  auto [loss, valid] = batched_contrastive_loss(pooled.unsqueeze(0), v.values.unsqueeze(0), present,
                                                torch::tensor({static_cast<int64_t>(target)}), tau);
  return loss.squeeze(0);
}

std::pair<torch::Tensor, torch::Tensor> batched_prompts(const torch::Tensor& required_refined,
                                                        const torch::Tensor& irrelevant_refined,
                                                        const Linear& projection) {
  auto foreground = projection->forward(required_refined.mean(-2, true));
  auto background = projection->forward(irrelevant_refined.mean(-2));
  return {foreground, background};
}

PromptPair emit_prompts(const RefinedFeatures& refined, const Linear& projection) {
  const auto& p = refined.required_refined.tokens;
  const auto& n = refined.irrelevant_refined;
  check(p.dim() == 2 && n.dim() == 3, ErrorCode::kShape, "refined features must be P* [T, d] and N* [M, T, d]");
  check(p.size(1) == projection->weight.size(1), ErrorCode::kShape, "prompt projection expects a different d");
  auto [fg, bg] = batched_prompts(p.unsqueeze(0), n.unsqueeze(0), projection);
  return {fg.squeeze(0), bg.squeeze(0)};
}

}  // namespace asiseg
