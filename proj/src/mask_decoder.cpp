#include "asiseg/mask_decoder.hpp"

#include <cmath>
#include <numbers>

#include "asiseg/error.hpp"

namespace asiseg {

namespace {
const std::vector<int64_t> kUpChannels = {32, 16, 8};
constexpr double kTokenInitStd = 0.1;
}  // namespace

BinaryMask make_binary_mask(const torch::Tensor& values) {
  check(values.dim() == 2, ErrorCode::kShape, "mask must be [H, W]");
  check(((values == 0) | (values == 1)).all().item<bool>(), ErrorCode::kValidation, "mask is not binary");
  return {values.to(torch::kUInt8)};
}

MaskDecoderImpl::MaskDecoderImpl(int64_t dim, int64_t heads, int64_t depth, uint64_t seed) : dim_(dim) {
  ParamInit init(seed);
  mask_token_ = register_parameter("mask_token", init.normal({1, dim}, kTokenInitStd));
  fg_type_ = register_parameter("fg_type", init.normal({dim}, kTokenInitStd));
  bg_type_ = register_parameter("bg_type", init.normal({dim}, kTokenInitStd));
  fourier_ = register_buffer("fourier", init.normal({2, dim / 2}, 1.0));
  for (int64_t i = 0; i < depth; ++i) {
    const auto p = "layer" + std::to_string(i) + "_";
    Layer l;
    l.self_attn = register_module(p + "self_attn", MultiHeadAttention(dim, heads, init));
    l.norm_self = register_module(p + "norm_self", LayerNorm(dim));
    l.token_to_image = register_module(p + "token_to_image", MultiHeadAttention(dim, heads, init));
    l.norm_cross = register_module(p + "norm_cross", LayerNorm(dim));
    l.mlp_in = register_module(p + "mlp_in", Linear(dim, 2 * dim, init));
    l.mlp_out = register_module(p + "mlp_out", Linear(2 * dim, dim, init));
    l.norm_mlp = register_module(p + "norm_mlp", LayerNorm(dim));
    l.image_to_token = register_module(p + "image_to_token", MultiHeadAttention(dim, heads, init));
    l.norm_image = register_module(p + "norm_image", LayerNorm(dim));
    layers_.push_back(l);
  }
  final_attn_ = register_module("final_attn", MultiHeadAttention(dim, heads, init));
  final_norm_ = register_module("final_norm", LayerNorm(dim));
  int64_t in = dim;
  for (size_t i = 0; i < kUpChannels.size(); ++i) {
    const int64_t out = kUpChannels[i];
    const auto p = "up" + std::to_string(i) + "_";
    // Same spread as the common transposed-conv default, uniform(+-1 / sqrt(16 * out)).
    up_weights_.push_back(register_parameter(p + "weight", init.fan_in({in, out, 4, 4}, 48 * out)));
    up_biases_.push_back(register_parameter(p + "bias", torch::zeros({out})));
    if (i + 1 < kUpChannels.size()) up_norms_.push_back(register_module(p + "norm", LayerNorm(out)));
    in = out;
  }
  hyper_.push_back(register_module("hyper0", Linear(dim, dim, init)));
  hyper_.push_back(register_module("hyper1", Linear(dim, dim, init)));
  hyper_.push_back(register_module("hyper2", Linear(dim, kUpChannels.back(), init)));
}

torch::Tensor MaskDecoderImpl::position_code(int64_t h, int64_t w) const {
  auto ys = (torch::arange(h, fourier_.options()) + 0.5) / h * 2 - 1;
  auto xs = (torch::arange(w, fourier_.options()) + 0.5) / w * 2 - 1;
  auto grid = torch::meshgrid({ys, xs}, "ij");
  auto coords = torch::stack({grid[1], grid[0]}, -1).reshape({-1, 2});
  auto c = torch::matmul(coords, fourier_) * (2 * std::numbers::pi);
  return torch::cat({torch::sin(c), torch::cos(c)}, -1);  // [h*w, d]
}

torch::Tensor MaskDecoderImpl::upsample(const torch::Tensor& image, int64_t h, int64_t w) const {
  auto x = image.transpose(1, 2).reshape({image.size(0), dim_, h, w});
  for (size_t i = 0; i < up_weights_.size(); ++i) {
    x = torch::conv_transpose2d(x, up_weights_[i], up_biases_[i], 2, 1);
    if (i < up_norms_.size()) x = up_norms_[i]->forward(x.permute({0, 2, 3, 1})).permute({0, 3, 1, 2});
    x = torch::gelu(x);
  }
  return x;  // [B, c, 8h, 8w]
}

torch::Tensor MaskDecoderImpl::forward(const torch::Tensor& image, int64_t h, int64_t w,
                                       const torch::Tensor& foreground, const torch::Tensor& background) const {
  const int64_t batch = image.size(0);
  auto tokens = torch::cat({mask_token_.expand({batch, 1, dim_}), foreground + fg_type_, background + bg_type_}, 1);
  auto pe = position_code(h, w).to(image.scalar_type()).unsqueeze(0);
  // Encoder tokens have unit norm; rescale to unit-variance entries.
  auto img = image * std::sqrt(static_cast<double>(dim_));
  auto q = tokens;
  for (size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (i == 0) {
      q = l.self_attn->forward(q, q, q);
    } else {
      q = q + l.self_attn->forward(q + tokens, q + tokens, q);
    }
    q = l.norm_self->forward(q);
    q = l.norm_cross->forward(q + l.token_to_image->forward(q + tokens, img + pe, img));
    q = l.norm_mlp->forward(q + l.mlp_out->forward(torch::relu(l.mlp_in->forward(q))));
    img = l.norm_image->forward(img + l.image_to_token->forward(img + pe, q + tokens, q));
  }
  q = final_norm_->forward(q + final_attn_->forward(q + tokens, img + pe, img));
  auto features = upsample(img, h, w);
  auto hyper = q.select(1, 0);
  for (size_t j = 0; j < hyper_.size(); ++j) {
    hyper = hyper_[j]->forward(hyper);
    if (j + 1 < hyper_.size()) hyper = torch::relu(hyper);
  }
  return torch::einsum("bc,bchw->bhw", {hyper, features});
}

MaskLogits decode_mask(const ImageFeatureMap& features, const PromptPair& prompts, const MaskDecoder& decoder) {
  check(prompts.foreground.dim() == 2 && prompts.foreground.size(0) >= 1, ErrorCode::kArgument,
        "decoder needs at least one foreground prompt");
  check(prompts.background.dim() == 2, ErrorCode::kShape, "background prompts must be [m_b, d]");
  check(features.height() * MaskDecoderImpl::kUpscale == features.source_height &&
            features.width() * MaskDecoderImpl::kUpscale == features.source_width,
        ErrorCode::kShape, "feature grid is not 1/8 of the source image");
  auto logits = decoder->forward(features.tokens().unsqueeze(0), features.height(), features.width(),
                                 prompts.foreground.unsqueeze(0), prompts.background.unsqueeze(0));
  return {logits.squeeze(0)};
}

BinaryMask threshold(const MaskLogits& logits, double t) {
  return {(logits.values > t).to(torch::kUInt8)};
}

torch::Tensor soft_dice_loss(const torch::Tensor& probabilities, const torch::Tensor& gt) {
  check(probabilities.sizes() == gt.sizes(), ErrorCode::kShape, "dice operands differ in shape");
  auto p = probabilities.flatten(-2);
  auto g = gt.to(p.scalar_type()).flatten(-2);
  auto overlap = (p * g).sum(-1);
  auto denom = (p * p).sum(-1) + (g * g).sum(-1);
  return 1 - (2 * overlap + kDiceEps) / (denom + kDiceEps);
}

torch::Tensor dice_loss(const MaskLogits& logits, const BinaryMask& gt) {
  check(logits.values.sizes() == gt.values.sizes(), ErrorCode::kShape, "logits and mask differ in shape");
  return soft_dice_loss(torch::sigmoid(logits.values), gt.values);
}

}  // namespace asiseg
