#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

namespace asiseg {

struct InstrumentDescription {
  int class_index = 0;
  std::string class_name;
  std::string description;
};

// Exactly one entry per class index 0..K-1, stored in index order.
class DescriptionBank {
 public:
  DescriptionBank() = default;
  explicit DescriptionBank(std::vector<InstrumentDescription> entries);

  int num_classes() const { return static_cast<int>(entries_.size()); }
  const std::vector<InstrumentDescription>& entries() const { return entries_; }
  const InstrumentDescription& operator[](int k) const { return entries_.at(k); }
  std::vector<std::string> class_names() const;

  nlohmann::json to_json() const;
  static DescriptionBank from_json(const nlohmann::json& j);

 private:
  std::vector<InstrumentDescription> entries_;
};

inline constexpr int kDefaultNumClasses = 7;

// Throws kSchema on malformed files, kConfig when expected_classes > 0 and
// the bank has a different K.
DescriptionBank load_bank(const std::string& path, int expected_classes = 0);

// The seven stock instrument categories with one-line visual descriptions.
DescriptionBank default_bank();

// Lowercased whitespace tokens with surrounding punctuation stripped.
std::vector<std::string> tokenize(const std::string& text);

uint64_t fnv1a64(std::string_view bytes);

// Plug-in point for text encoders: one description -> one d-vector.
class TextEncoderBase : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const std::string& text) = 0;
  virtual int64_t embedding_dim() const = 0;
};

// Hashes tokens into a count vector of kHashBins, projects through a fixed
// random [kHashBins, d] matrix and L2-normalises the result.
class HashedTextEncoder : public TextEncoderBase {
 public:
  static constexpr int64_t kHashBins = 1024;

  HashedTextEncoder(int64_t embedding_dim, uint64_t seed);

  torch::Tensor forward(const std::string& text) override;
  int64_t embedding_dim() const override { return projection_.size(1); }

  torch::Tensor token_counts(const std::string& text) const;

 private:
  torch::Tensor projection_;
};

// f_t: [K, d], row k from entry k only.
torch::Tensor encode_descriptions(const DescriptionBank& bank, TextEncoderBase& encoder);

}  // namespace asiseg
