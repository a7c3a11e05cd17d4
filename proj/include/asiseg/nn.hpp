#pragma once

#include <cstdint>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace asiseg {

// Seeded source for parameter initialisation, independent of torch's global
// generator so that every component's initial weights depend only on its seed.
class ParamInit {
 public:
  explicit ParamInit(uint64_t seed) : gen_(at::make_generator<at::CPUGeneratorImpl>(seed)) {}

  torch::Tensor normal(at::IntArrayRef sizes, double stddev) {
    return torch::randn(sizes, gen_, torch::kFloat32) * stddev;
  }

  // N(0, gain^2 / fan_in)
  torch::Tensor fan_in(at::IntArrayRef sizes, int64_t fan_in, double gain = 1.0) {
    return normal(sizes, gain / std::sqrt(static_cast<double>(fan_in)));
  }

 private:
  at::Generator gen_;
};

// y = x W^T + b with W [out, in].
class LinearImpl : public torch::nn::Module {
 public:
  LinearImpl(int64_t in, int64_t out, ParamInit& init, double gain = 1.0, bool bias = true);

  torch::Tensor forward(const torch::Tensor& x) const;

  torch::Tensor weight;
  torch::Tensor bias;  // undefined when constructed without bias
};
TORCH_MODULE(Linear);

class LayerNormImpl : public torch::nn::Module {
 public:
  explicit LayerNormImpl(int64_t dim);

  torch::Tensor forward(const torch::Tensor& x) const;

  torch::Tensor gamma;
  torch::Tensor beta;
};
TORCH_MODULE(LayerNorm);

// Parameter-free layer norm over the last dimension.
torch::Tensor plain_layer_norm(const torch::Tensor& x, double eps = 1e-5);

// softmax(q k^T / sqrt(D)) v over the last two dims; D = q.size(-1).
// `blocked` (optional, bool, broadcastable to the score matrix) removes
// key positions from the softmax.
torch::Tensor attention_weights(const torch::Tensor& q, const torch::Tensor& k,
                                const torch::Tensor& blocked = {});
torch::Tensor scaled_dot_attention(const torch::Tensor& q, const torch::Tensor& k,
                                   const torch::Tensor& v, const torch::Tensor& blocked = {});

// Multi-head attention with separate q/k/v/out projections; inputs [B, T, dim].
class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int64_t dim, int64_t heads, ParamInit& init, double out_gain = 1.0);

  torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v,
                        const torch::Tensor& blocked = {}) const;

 private:
  int64_t heads_;
  Linear q_proj_{nullptr}, k_proj_{nullptr}, v_proj_{nullptr}, out_proj_{nullptr};
};
TORCH_MODULE(MultiHeadAttention);

void set_requires_grad(torch::nn::Module& module, bool requires_grad);

// FNV-1a over the raw bytes of every parameter and buffer, in registration order.
uint64_t parameter_checksum(const torch::nn::Module& module);

}  // namespace asiseg
