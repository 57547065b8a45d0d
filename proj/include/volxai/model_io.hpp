#pragma once

// Model file layout (all integers little-endian):
//   8 bytes   magic "VOLXAIM1"
//   u32       format version (1)
//   u32       descriptor length L
//   L bytes   UTF-8 JSON descriptor: model spec, parameter block sizes, init seed
//   float32[] parameter blocks in declaration order
// A `<file>.json` sidecar repeats the model spec and adds training provenance.

#include <filesystem>

#include <json.hpp>

#include "volxai/neuralnet.hpp"

namespace volxai::nn {

inline constexpr char kModelMagic[8] = {'V', 'O', 'L', 'X', 'A', 'I', 'M', '1'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

void save_model(const std::filesystem::path& path, const Model& m,
                const nlohmann::json& provenance = nlohmann::json::object());

/// Throws MissingArtifact when absent and ConfigError when malformed.
Model load_model(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& model_path);

}  // namespace volxai::nn
