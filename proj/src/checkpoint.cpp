#include "asiseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "asiseg/error.hpp"

namespace asiseg {

namespace {

constexpr char kMagic[8] = {'A', 'S', 'I', 'S', 'E', 'G', 'C', 'K'};

std::map<std::string, torch::Tensor> named_state(const AsiSeg& model) {
  std::map<std::string, torch::Tensor> state;
  for (const auto& p : model.named_parameters()) state[p.key()] = p.value();
  for (const auto& b : model.named_buffers()) state[b.key()] = b.value();
  return state;
}

struct Contents {
  nlohmann::json header;
  std::string payload;
};

Contents read_contents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), ErrorCode::kIo, "cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  check(in.gcount() == 8 && std::memcmp(magic, kMagic, 8) == 0, ErrorCode::kVersion,
        path + " is not a checkpoint of this format");
  unsigned char len_bytes[4];
  in.read(reinterpret_cast<char*>(len_bytes), 4);
  check(in.gcount() == 4, ErrorCode::kSchema, "truncated checkpoint header");
  const uint32_t len = len_bytes[0] | (len_bytes[1] << 8) | (len_bytes[2] << 16) | (uint32_t(len_bytes[3]) << 24);
  std::string header(len, '\0');
  in.read(header.data(), len);
  check(static_cast<uint32_t>(in.gcount()) == len, ErrorCode::kSchema, "truncated checkpoint header");
  Contents c;
  try {
    c.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, std::string("checkpoint header: ") + e.what());
  }
  c.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const AsiSeg& model) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : named_state(model)) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    const size_t bytes = c.numel() * sizeof(float);
    tensors.push_back({{"name", name}, {"shape", c.sizes().vec()}, {"offset", payload.size()}, {"bytes", bytes}});
    payload.append(static_cast<const char*>(c.data_ptr()), bytes);
  }
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"K", model.num_classes()},
                           {"d", model.config().dim},
                           {"seeds", to_json(component_seeds(model.config().seed))},
                           {"config", to_json(model.config())},
                           {"bank", model.bank().to_json()},
                           {"tensors", tensors}};
  header["norm_stats"] = model.norm_stats() ? to_json(*model.norm_stats()) : nlohmann::json(nullptr);
  const std::string text = header.dump();
  const auto len = static_cast<uint32_t>(text.size());
  const unsigned char len_bytes[4] = {static_cast<unsigned char>(len), static_cast<unsigned char>(len >> 8),
                                      static_cast<unsigned char>(len >> 16), static_cast<unsigned char>(len >> 24)};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(static_cast<bool>(out), ErrorCode::kIo, "cannot write checkpoint " + path);
  out.write(kMagic, 8);
  out.write(reinterpret_cast<const char*>(len_bytes), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  check(static_cast<bool>(out), ErrorCode::kIo, "failed writing checkpoint " + path);
}

nlohmann::json read_checkpoint_header(const std::string& path) { return read_contents(path).header; }

std::shared_ptr<AsiSeg> load_checkpoint(const std::string& path) {
  auto [header, payload] = read_contents(path);
  std::shared_ptr<AsiSeg> model;
  try {
    const int version = header.at("format_version").get<int>();
    check(version == kCheckpointVersion, ErrorCode::kVersion,
          "checkpoint format_version " + std::to_string(version) + ", expected " +
              std::to_string(kCheckpointVersion));
    auto config = model_config_from_json(header.at("config"));
    check(header.at("K").get<int>() == config.num_classes && header.at("d").get<int64_t>() == config.dim,
          ErrorCode::kConfig, "checkpoint header K/d disagree with its config");
    model = std::make_shared<AsiSeg>(config, DescriptionBank::from_json(header.at("bank")));
    if (!header.at("norm_stats").is_null()) model->set_norm_stats(norm_stats_from_json(header.at("norm_stats")));
    auto state = named_state(*model);
    size_t restored = 0;
    torch::NoGradGuard no_grad;
    for (const auto& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      auto it = state.find(name);
      check(it != state.end(), ErrorCode::kSchema, "checkpoint tensor '" + name + "' is not part of the model");
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      check(it->second.sizes().vec() == shape, ErrorCode::kConfig, "shape mismatch for tensor '" + name + "'");
      const auto offset = entry.at("offset").get<size_t>(), bytes = entry.at("bytes").get<size_t>();
      check(offset + bytes <= payload.size() && bytes == it->second.numel() * sizeof(float), ErrorCode::kSchema,
            "tensor '" + name + "' lies outside the checkpoint payload");
      auto blob = torch::from_blob(payload.data() + offset, shape, torch::kFloat32);
      it->second.copy_(blob);
      ++restored;
    }
    check(restored == state.size(), ErrorCode::kSchema, "checkpoint is missing model tensors");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, std::string("checkpoint header: ") + e.what());
  }
  return model;
}

}  // namespace asiseg
