#include "volxai/volume_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "volxai/errors.hpp"

namespace volxai::io {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact(path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

namespace {

static_assert(sizeof(float) == 4);

void put_le(std::string& buf, float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  char b[4];
  std::memcpy(b, &u, 4);
  buf.append(b, 4);
}

float get_le(const char* p) {
  std::uint32_t u;
  std::memcpy(&u, p, 4);
  if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
  return std::bit_cast<float>(u);
}

}  // namespace

void write_volume(const fs::path& dir, const std::string& name, const Volume3& v,
                  const nlohmann::json& extra) {
  nlohmann::json h = extra;
  h["dims"] = v.dims();
  h["spacing"] = v.spacing();
  h["modality"] = std::string(to_string(v.modality()));
  h["dtype"] = "float32";
  h["endianness"] = "little";
  h["order"] = "x-fastest";
  std::string payload;
  payload.reserve(v.size() * 4);
  for (double x : v.values()) put_le(payload, static_cast<float>(x));
  write_file_atomic(dir / (name + ".raw"), payload);
  write_json(dir / (name + ".json"), h);
}

Volume3 read_volume(const fs::path& dir, const std::string& name) {
  const nlohmann::json h = read_json(dir / (name + ".json"));
  try {
    if (h.at("dtype") != "float32" || h.at("order") != "x-fastest")
      throw ConfigError("unsupported volume encoding in " + name);
    const auto dims = h.at("dims").get<Index3>();
    const auto spacing = h.at("spacing").get<Vec3>();
    const Modality m = modality_from_string(h.at("modality").get<std::string>());
    const std::string payload = read_file(dir / (name + ".raw"));
    if (payload.size() != voxel_count(dims) * 4)
      throw ConfigError("payload size mismatch for volume " + name);
    std::vector<double> values(voxel_count(dims));
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_le(payload.data() + 4 * i);
    return Volume3(dims, spacing, m, std::move(values));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad volume header " + name + ": " + e.what());
  }
}

}  // namespace volxai::io
