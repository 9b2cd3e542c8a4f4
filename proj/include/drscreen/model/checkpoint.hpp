#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drscreen/model/config.hpp"
#include "drscreen/model/parameters.hpp"

namespace drscreen::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Self-describing weight container.
///
/// Layout: 8-byte magic "DRSCKPT\0", u32 format version, u64 header length,
/// a UTF-8 JSON header (config, training metadata, tensor table with name,
/// shape, element offset and count), then every tensor as little-endian
/// IEEE-754 float32 in table order. All integers little-endian.
struct Checkpoint {
  ModelConfig config;
  Parameters<float> params;
  nlohmann::json metadata = nlohmann::json::object();
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);

/// Parses and self-validates: tensor names and shapes must match the
/// embedded config, the parameter count must agree with it, and running
/// variances must be strictly positive. Throws FormatError.
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// Short version tag for a serialized checkpoint: "sha256:" + 16 hex digits.
std::string checkpoint_digest(std::span<const std::uint8_t> bytes);

}  // namespace drscreen::model
