#include "asiseg/knowledge_bank.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "asiseg/error.hpp"
#include "asiseg/nn.hpp"

namespace asiseg {

DescriptionBank::DescriptionBank(std::vector<InstrumentDescription> entries) {
  check(!entries.empty(), ErrorCode::kSchema, "description bank is empty");
  std::set<int> seen;
  for (const auto& e : entries) {
    check(e.class_index >= 0 && e.class_index < static_cast<int>(entries.size()), ErrorCode::kSchema,
          "class_index " + std::to_string(e.class_index) + " outside 0.." +
              std::to_string(entries.size() - 1));
    check(seen.insert(e.class_index).second, ErrorCode::kSchema,
          "duplicate class_index " + std::to_string(e.class_index));
    check(!e.class_name.empty(), ErrorCode::kSchema, "empty class_name for class " + std::to_string(e.class_index));
    check(!e.description.empty(), ErrorCode::kSchema, "empty description for class " + std::to_string(e.class_index));
  }
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.class_index < b.class_index; });
  entries_ = std::move(entries);
}

std::vector<std::string> DescriptionBank::class_names() const {
  std::vector<std::string> names;
  for (const auto& e : entries_) names.push_back(e.class_name);
  return names;
}

nlohmann::json DescriptionBank::to_json() const {
  auto j = nlohmann::json::array();
  for (const auto& e : entries_) {
    j.push_back({{"class_index", e.class_index}, {"class_name", e.class_name}, {"description", e.description}});
  }
  return j;
}

DescriptionBank DescriptionBank::from_json(const nlohmann::json& j) {
  check(j.is_array(), ErrorCode::kSchema, "description bank must be a JSON array");
  std::vector<InstrumentDescription> entries;
  for (const auto& item : j) {
    try {
      entries.push_back({item.at("class_index").get<int>(), item.at("class_name").get<std::string>(),
                         item.at("description").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kSchema, std::string("bad bank entry: ") + e.what());
    }
  }
  return DescriptionBank(std::move(entries));
}

DescriptionBank load_bank(const std::string& path, int expected_classes) {
  std::ifstream in(path);
  check(static_cast<bool>(in), ErrorCode::kIo, "cannot open description bank " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kSchema, path + ": " + e.what());
  }
  auto bank = DescriptionBank::from_json(j);
  check(expected_classes <= 0 || bank.num_classes() == expected_classes, ErrorCode::kConfig,
        "bank has K=" + std::to_string(bank.num_classes()) + ", run expects K=" +
            std::to_string(expected_classes));
  return bank;
}

DescriptionBank default_bank() {
  return DescriptionBank({
      {0, "Bipolar Forceps", "bipolar forceps with two slender insulated jaws and rounded fenestrated tips"},
      {1, "Prograsp Forceps", "prograsp forceps with long curved grasping jaws and a ridged gripping surface"},
      {2, "Large Needle Driver", "large needle driver with short broad jaws for holding curved suture needles"},
      {3, "Vessel Sealer", "vessel sealer with wide flat jaws and a central cutting blade between them"},
      {4, "Grasping Retractor", "grasping retractor with a fan shaped tip that holds tissue out of the way"},
      {5, "Monopolar Curved Scissors", "monopolar curved scissors with curved blades on an insulated black shaft"},
      {6, "Ultrasound Probe", "ultrasound probe with a smooth rounded head on a long rigid cable shaft"},
  });
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream stream(text);
  std::string word;
  while (stream >> word) {
    std::string token;
    for (unsigned char c : word) token.push_back(static_cast<char>(std::tolower(c)));
    const auto first = token.find_first_not_of(".,;:!?\"'()[]");
    const auto last = token.find_last_not_of(".,;:!?\"'()[]");
    if (first == std::string::npos) continue;
    tokens.push_back(token.substr(first, last - first + 1));
  }
  return tokens;
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t hash = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

HashedTextEncoder::HashedTextEncoder(int64_t embedding_dim, uint64_t seed) {
  ParamInit init(seed);
  projection_ = register_parameter("projection", init.normal({kHashBins, embedding_dim}, 1.0));
}

torch::Tensor HashedTextEncoder::token_counts(const std::string& text) const {
  std::vector<double> bins(kHashBins, 0.0);
  for (const auto& token : tokenize(text)) bins[fnv1a64(token) % kHashBins] += 1.0;
  return torch::tensor(bins, torch::kFloat64).to(projection_.scalar_type());
}

torch::Tensor HashedTextEncoder::forward(const std::string& text) {
  auto row = torch::matmul(token_counts(text), projection_);
  const auto norm = row.norm();
  return norm.item<double>() > 0.0 ? row / norm : row;
}

torch::Tensor encode_descriptions(const DescriptionBank& bank, TextEncoderBase& encoder) {
  std::vector<torch::Tensor> rows;
  for (const auto& e : bank.entries()) rows.push_back(encoder.forward(e.description));
  return torch::stack(rows);
}

}  // namespace asiseg
