#pragma once

// On-disk volume format: `<name>.json` header plus `<name>.raw` payload of
// nx*ny*nz little-endian float32 values in x-fastest order.

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "volxai/volgrid.hpp"

namespace volxai::io {

/// Writes through a sibling temp file and renames, so a failed write never
/// leaves a truncated file in place of a completed one.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// `extra` is merged into the header (provenance fields such as config hash).
void write_volume(const std::filesystem::path& dir, const std::string& name, const Volume3& v,
                  const nlohmann::json& extra = nlohmann::json::object());
Volume3 read_volume(const std::filesystem::path& dir, const std::string& name);

}  // namespace volxai::io
