#include "asiseg/fusion.hpp"

#include <cmath>

#include "asiseg/error.hpp"

namespace asiseg {

namespace {
constexpr int64_t kEncoderHeads = 1;
constexpr double kResidualGain = 0.5;
constexpr double kPositionScale = 0.1;
constexpr double kPixelScale = 4.0;  // (x / 255 - 0.5) * 4 has roughly unit spread
}  // namespace

torch::Tensor sinusoidal_position_code(int64_t h, int64_t w, int64_t dim) {
  const int64_t half = dim / 2;
  auto code = torch::zeros({h * w, dim});
  auto acc = code.accessor<float, 2>();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(half));
        acc[y * w + x][2 * i] = static_cast<float>(std::sin(y * freq));
        acc[y * w + x][2 * i + 1] = static_cast<float>(std::cos(y * freq));
        acc[y * w + x][half + 2 * i] = static_cast<float>(std::sin(x * freq));
        acc[y * w + x][half + 2 * i + 1] = static_cast<float>(std::cos(x * freq));
      }
    }
  }
  return code;
}

torch::Tensor neighbourhood_mask(int64_t h, int64_t w, int64_t radius) {
  auto blocked = torch::zeros({h * w, h * w}, torch::kBool);
  auto acc = blocked.accessor<bool, 2>();
  for (int64_t i = 0; i < h * w; ++i) {
    for (int64_t j = 0; j < h * w; ++j) {
      const int64_t dy = std::abs(i / w - j / w), dx = std::abs(i % w - j % w);
      acc[i][j] = std::max(dy, dx) > radius;
    }
  }
  return blocked;
}

PatchImageEncoder::PatchImageEncoder(int64_t embedding_dim, int64_t stride, int64_t blocks, uint64_t seed,
                                     int64_t neighbourhood)
    : dim_(embedding_dim), stride_(stride), neighbourhood_(neighbourhood) {
  ParamInit init(seed);
  const int64_t patch_size = stride * stride * 3;
  patch_embed_ = register_module("patch_embed", Linear(patch_size, dim_, init));
  for (int64_t b = 0; b < blocks; ++b) {
    const auto prefix = "block" + std::to_string(b) + "_";
    Block block;
    block.norm_attn = register_module(prefix + "norm_attn", LayerNorm(dim_));
    block.attn = register_module(prefix + "attn", MultiHeadAttention(dim_, kEncoderHeads, init, kResidualGain));
    block.norm_mlp = register_module(prefix + "norm_mlp", LayerNorm(dim_));
    block.mlp_in = register_module(prefix + "mlp_in", Linear(dim_, 2 * dim_, init));
    block.mlp_out = register_module(prefix + "mlp_out", Linear(2 * dim_, dim_, init, kResidualGain));
    blocks_.push_back(block);
  }
}

torch::Tensor PatchImageEncoder::forward(const torch::Tensor& images) {
  check(images.dim() == 4 && images.size(3) == 3, ErrorCode::kShape, "image encoder expects [B, H, W, 3]");
  const int64_t batch = images.size(0), height = images.size(1), width = images.size(2);
  check(height % stride_ == 0 && width % stride_ == 0, ErrorCode::kShape,
        "image size " + std::to_string(height) + "x" + std::to_string(width) +
            " is not divisible by the encoder stride " + std::to_string(stride_));
  const int64_t h = height / stride_, w = width / stride_;
  const auto dtype = patch_embed_->weight.scalar_type();

  auto x = (images.to(dtype) / 255.0 - 0.5) * kPixelScale;
  x = x.reshape({batch, h, stride_, w, stride_, 3}).permute({0, 1, 3, 2, 4, 5}).reshape({batch, h * w, -1});
  auto tokens = patch_embed_(x) + kPositionScale * sinusoidal_position_code(h, w, dim_).to(dtype);
  const auto blocked = neighbourhood_ == kGlobal ? torch::Tensor() : neighbourhood_mask(h, w, neighbourhood_);
  for (auto& block : blocks_) {
    auto normed = block.norm_attn(tokens);
    tokens = tokens + block.attn(normed, normed, normed, blocked);
    tokens = tokens + block.mlp_out(torch::gelu(block.mlp_in(block.norm_mlp(tokens))));
  }
  return plain_layer_norm(tokens) / std::sqrt(static_cast<double>(dim_));
}

ImageFeatureMap encode_image(const torch::Tensor& image, ImageEncoderBase& encoder) {
  check(image.dim() == 3 && image.size(2) == 3, ErrorCode::kShape, "image must be [H, W, 3]");
  const int64_t height = image.size(0), width = image.size(1);
  auto tokens = encoder.forward(image.unsqueeze(0)).squeeze(0);
  const int64_t h = height / encoder.stride(), w = width / encoder.stride();
  return {tokens.reshape({h, w, encoder.embedding_dim()}), height, width};
}

TextFusionImpl::TextFusionImpl(int64_t dim, int64_t key_dim, ParamInit& init) {
  q_text = register_module("q_text", Linear(dim, key_dim, init));
  k_text = register_module("k_text", Linear(dim, key_dim, init));
  v_text = register_module("v_text", Linear(dim, dim, init));
  q_query = register_module("q_query", Linear(dim, key_dim, init));
  k_query = register_module("k_query", Linear(dim, key_dim, init));
  v_query = register_module("v_query", Linear(dim, dim, init));
  mlp_hidden = register_module("mlp_hidden", Linear(2 * dim, 2 * dim, init));
  mlp_out = register_module("mlp_out", Linear(2 * dim, dim, init));
}

TextFusionParts TextFusionImpl::forward_parts(const torch::Tensor& learnable, const torch::Tensor& text) const {
  TextFusionParts parts;
  parts.text_weights = attention_weights(q_text->forward(text), k_query->forward(learnable));
  parts.text_attended = torch::matmul(parts.text_weights, v_query->forward(learnable));
  parts.query_weights = attention_weights(q_query->forward(learnable), k_text->forward(text));
  parts.query_attended = torch::matmul(parts.query_weights, v_text->forward(text));
  parts.query = mix(parts.text_attended, parts.query_attended);
  return parts;
}

torch::Tensor TextFusionImpl::mix(const torch::Tensor& text_attended, const torch::Tensor& query_attended) const {
  return mlp_out->forward(torch::gelu(mlp_hidden->forward(torch::cat({text_attended, query_attended}, -1))));
}

torch::Tensor TextFusionImpl::forward(const torch::Tensor& learnable, const torch::Tensor& text) const {
  return forward_parts(learnable, text).query;
}

torch::Tensor text_fuse(const torch::Tensor& learnable, const torch::Tensor& text, const TextFusion& fusion) {
  check(learnable.dim() == 2 && text.dim() == 2, ErrorCode::kShape, "text_fuse expects [K, d] inputs");
  check(learnable.sizes() == text.sizes(), ErrorCode::kShape, "learnable queries and text features differ in shape");
  check(learnable.size(1) == fusion->v_text->weight.size(1), ErrorCode::kShape,
        "feature dimension does not match the fusion parameters");
  return fusion->forward(learnable, text);
}

torch::Tensor batched_similarity(const torch::Tensor& tokens, const torch::Tensor& queries) {
  return torch::matmul(tokens, queries.t()).transpose(1, 2);
}

torch::Tensor batched_visual_fuse(const torch::Tensor& tokens, const torch::Tensor& similarity) {
  auto f = tokens.unsqueeze(1);
  return f * similarity.unsqueeze(-1) + f;
}

std::pair<torch::Tensor, torch::Tensor> batched_partition(const torch::Tensor& fused, const torch::Tensor& targets) {
  const int64_t batch = fused.size(0), classes = fused.size(1);
  auto t = targets.to(torch::kInt64).contiguous();
  auto others = torch::empty({batch, classes - 1}, torch::kInt64);
  auto acc = others.accessor<int64_t, 2>();
  const int64_t* target = t.data_ptr<int64_t>();
  for (int64_t b = 0; b < batch; ++b) {
    check(target[b] >= 0 && target[b] < classes, ErrorCode::kArgument,
          "target class " + std::to_string(target[b]) + " outside [0, " + std::to_string(classes) + ")");
    int64_t j = 0;
    for (int64_t k = 0; k < classes; ++k) {
      if (k != target[b]) acc[b][j++] = k;
    }
  }
  auto rows = torch::arange(batch, torch::kInt64);
  auto required = fused.index({rows, t});
  auto irrelevant = fused.index({rows.unsqueeze(1), others});
  return {required, irrelevant};
}

SimilarityMaps similarity_maps(const torch::Tensor& queries, const ImageFeatureMap& features) {
  check(queries.dim() == 2 && queries.size(1) == features.dim(), ErrorCode::kShape,
        "queries and image features disagree on d");
  auto s = batched_similarity(features.tokens().unsqueeze(0), queries).squeeze(0);
  return {s.reshape({queries.size(0), features.height(), features.width()})};
}

MultimodalFeatureSet visual_fuse(const ImageFeatureMap& features, const SimilarityMaps& similarity) {
  const auto& s = similarity.values;
  check(s.dim() == 3 && s.size(1) == features.height() && s.size(2) == features.width(), ErrorCode::kShape,
        "similarity maps do not match the feature grid");
  const int64_t classes = s.size(0);
  auto fused = batched_visual_fuse(features.tokens().unsqueeze(0), s.reshape({1, classes, -1})).squeeze(0);
  return {fused.reshape({classes, features.height(), features.width(), features.dim()})};
}

IntentPartition assign_by_intent(const MultimodalFeatureSet& fused, int target_class) {
  const int64_t classes = fused.values.size(0);
  check(target_class >= 0 && target_class < classes, ErrorCode::kArgument,
        "target class " + std::to_string(target_class) + " outside [0, " + std::to_string(classes) + ")");
  IntentPartition partition;
  partition.target_class = target_class;
  partition.required = fused.values[target_class];
  for (int k = 0; k < classes; ++k) {
    if (k != target_class) partition.irrelevant_classes.push_back(k);
  }
  auto index = torch::tensor(std::vector<int64_t>(partition.irrelevant_classes.begin(),
                                                  partition.irrelevant_classes.end()),
                             torch::kInt64);
  partition.irrelevant = fused.values.index_select(0, index);
  return partition;
}

MultimodalFeatureSet reassemble(const IntentPartition& partition) {
  const int64_t classes = partition.irrelevant.size(0) + 1;
  std::vector<torch::Tensor> slices(classes);
  slices[partition.target_class] = partition.required;
  for (size_t i = 0; i < partition.irrelevant_classes.size(); ++i) {
    slices[partition.irrelevant_classes[i]] = partition.irrelevant[static_cast<int64_t>(i)];
  }
  return {torch::stack(slices)};
}

}  // namespace asiseg
