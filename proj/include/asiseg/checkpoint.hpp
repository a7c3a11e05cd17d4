#pragma once

#include <memory>
#include <string>

#include "asiseg/model.hpp"

namespace asiseg {

inline constexpr int kCheckpointVersion = 1;

// Layout: 8-byte magic "ASISEGCK", u32 little-endian header length, JSON
// header {format_version, K, d, seeds, config, norm_stats, bank, tensors},
// then raw tensor bytes at the offsets listed in header.tensors.
void save_checkpoint(const std::string& path, const AsiSeg& model);

// kIo on unreadable files, kVersion on a different format_version or a bad
// magic, kSchema on malformed headers or missing tensors.
std::shared_ptr<AsiSeg> load_checkpoint(const std::string& path);

nlohmann::json read_checkpoint_header(const std::string& path);

}  // namespace asiseg
