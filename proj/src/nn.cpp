#include "asiseg/nn.hpp"

#include <cmath>
#include <limits>

#include "asiseg/error.hpp"

namespace asiseg {

LinearImpl::LinearImpl(int64_t in, int64_t out, ParamInit& init, double gain, bool with_bias) {
  weight = register_parameter("weight", init.fan_in({out, in}, in, gain));
  if (with_bias) bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor LinearImpl::forward(const torch::Tensor& x) const {
  return torch::nn::functional::linear(x, weight, bias);
}

LayerNormImpl::LayerNormImpl(int64_t dim) {
  gamma = register_parameter("gamma", torch::ones({dim}));
  beta = register_parameter("beta", torch::zeros({dim}));
}

torch::Tensor LayerNormImpl::forward(const torch::Tensor& x) const {
  return torch::layer_norm(x, {x.size(-1)}, gamma, beta);
}

torch::Tensor plain_layer_norm(const torch::Tensor& x, double eps) {
  return torch::layer_norm(x, {x.size(-1)}, {}, {}, eps);
}

torch::Tensor attention_weights(const torch::Tensor& q, const torch::Tensor& k,
                                const torch::Tensor& blocked) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
  auto scores = torch::matmul(q, k.transpose(-2, -1)) * scale;
  if (blocked.defined()) scores = scores.masked_fill(blocked, -std::numeric_limits<double>::infinity());
  return torch::softmax(scores, -1);
}

torch::Tensor scaled_dot_attention(const torch::Tensor& q, const torch::Tensor& k,
                                   const torch::Tensor& v, const torch::Tensor& blocked) {
  return torch::matmul(attention_weights(q, k, blocked), v);
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim, int64_t heads, ParamInit& init, double out_gain)
    : heads_(heads) {
  check(dim % heads == 0, ErrorCode::kConfig, "attention dim must divide evenly into heads");
  q_proj_ = register_module("q_proj", Linear(dim, dim, init));
  k_proj_ = register_module("k_proj", Linear(dim, dim, init));
  v_proj_ = register_module("v_proj", Linear(dim, dim, init));
  out_proj_ = register_module("out_proj", Linear(dim, dim, init, out_gain));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& q, const torch::Tensor& k,
                                              const torch::Tensor& v, const torch::Tensor& blocked) const {
  const int64_t batch = q.size(0), tq = q.size(1), tk = k.size(1), dim = q.size(2);
  const int64_t head_dim = dim / heads_;
  auto split = [&](const torch::Tensor& x, int64_t t) {
    return x.reshape({batch, t, heads_, head_dim}).transpose(1, 2);
  };
  auto out = scaled_dot_attention(split(q_proj_->forward(q), tq), split(k_proj_->forward(k), tk), split(v_proj_->forward(v), tk), blocked);
  return out_proj_->forward(out.transpose(1, 2).reshape({batch, tq, dim}));
}

void set_requires_grad(torch::nn::Module& module, bool requires_grad) {
  for (auto& p : module.parameters()) p.set_requires_grad(requires_grad);
}

uint64_t parameter_checksum(const torch::nn::Module& module) {
  uint64_t hash = 1469598103934665603ULL;
  auto mix = [&hash](const torch::Tensor& t) {
    auto c = t.detach().contiguous();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const size_t n = c.numel() * c.element_size();
    for (size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ULL;
    }
  };
  for (const auto& p : module.parameters()) mix(p);
  for (const auto& b : module.buffers()) mix(b);
  return hash;
}

}  // namespace asiseg
