#include "drscreen/model/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>

#include "drscreen/error.hpp"
#include "drscreen/imaging.hpp"

namespace drscreen::model {
namespace {

constexpr char kMagic[8] = {'D', 'R', 'S', 'C', 'K', 'P', 'T', '\0'};

template <class U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <class U>
U get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[offset + i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header;
  header["format"] = "drscreen-checkpoint";
  header["version"] = kCheckpointVersion;
  header["config"] = ckpt.config;
  header["metadata"] = ckpt.metadata;
  header["parameter_count"] = ckpt.params.parameter_count();
  auto& table = header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& spec : ckpt.params.specs()) {
    const std::size_t count = spec.element_count();
    table.push_back({{"name", spec.name}, {"shape", spec.shape}, {"offset", offset}, {"count", count}});
    offset += count;
  }
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset * 4);
  for (std::size_t i = 0; i < ckpt.params.tensor_count(); ++i) {
    for (float v : ckpt.params.tensor(i)) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kPrefix = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint file (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 12);
  if (header_len > bytes.size() - kPrefix) throw FormatError("truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPrefix, bytes.begin() + kPrefix + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = header.at("config").get<ModelConfig>();
    ckpt.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  std::vector<ParamSpec> specs;
  try {
    specs = parameter_specs(ckpt.config);
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
  }
  const auto& table = header.at("tensors");
  if (!table.is_array() || table.size() != specs.size()) {
    throw FormatError("checkpoint tensor table does not match its config");
  }
  ckpt.params = Parameters<float>(specs);
  const std::size_t payload_start = kPrefix + header_len;
  const std::size_t expected = ckpt.params.parameter_count();
  if (header.value("parameter_count", expected) != expected) {
    throw FormatError("declared parameter count disagrees with the embedded config");
  }
  if (bytes.size() != payload_start + expected * 4) {
    throw FormatError("checkpoint payload holds " + std::to_string((bytes.size() - payload_start) / 4) +
                      " values, config requires " + std::to_string(expected));
  }
  std::size_t offset = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& entry = table[i];
    if (entry.at("name").get<std::string>() != specs[i].name ||
        entry.at("shape").get<std::vector<int>>() != specs[i].shape ||
        entry.at("offset").get<std::size_t>() != offset) {
      throw FormatError("checkpoint tensor '" + entry.value("name", std::string("?")) +
                        "' does not match the layout implied by its config");
    }
    auto dst = ckpt.params.tensor(i);
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload_start + (offset + k) * 4));
    }
    if (specs[i].role == ParamRole::kNormVariance) {
      for (float v : dst) {
        if (!(v > 0.0f)) throw FormatError("running variance in '" + specs[i].name + "' is not positive");
      }
    }
    offset += dst.size();
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  write_file_bytes(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file_bytes(path));
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("crypto", "SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string checkpoint_digest(std::span<const std::uint8_t> bytes) {
  return "sha256:" + sha256_hex(bytes).substr(0, 16);
}

}  // namespace drscreen::model
