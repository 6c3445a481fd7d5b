#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "ctvqa/decoder/model.hpp"

namespace ctvqa {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[] = "CTVQ-CKPT";

nlohmann::json to_json(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// The config sidecar lives next to the checkpoint as "<path>.json".
std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path);

/// Binary layout, all integers little-endian:
///   "CTVQ-CKPT" | u32 version | u32 tensor count |
///   per tensor: u32 name length, name bytes, u32 rows, u32 cols, rows*cols f64
std::string encode_checkpoint(const ParamStore& params);
ParamStore decode_checkpoint(std::string_view bytes, const std::string& source);

/// Writes the binary file and its JSON sidecar.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const ModelConfig& cfg);

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
};

/// Reads both files and checks every tensor against the shapes the sidecar
/// config implies. Throws FormatError on a bad magic, version or truncation and
/// when tensors and config disagree.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ctvqa
