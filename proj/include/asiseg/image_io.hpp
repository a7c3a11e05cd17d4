#pragma once

#include <string>

#include <torch/torch.h>

namespace asiseg {

// 8-bit PNG -> uint8 [H, W, C]. Gray, palette and 16-bit inputs are expanded
// or reduced to 8 bits; alpha is dropped. C is 1 for gray, 3 for colour.
torch::Tensor read_png(const std::string& path);

// uint8 [H, W] (gray) or [H, W, 3] (RGB).
void write_png(const std::string& path, const torch::Tensor& image);

}  // namespace asiseg
