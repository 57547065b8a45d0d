#include "volxai/model_io.hpp"

#include <bit>
#include <cstring>

#include "volxai/errors.hpp"
#include "volxai/volume_io.hpp"

namespace volxai::nn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

json descriptor(const Model& m) {
  json sizes = json::array();
  for (auto b : m.params.blocks()) sizes.push_back(b.size());
  return json{{"spec", to_json(m.spec)}, {"block_sizes", sizes}, {"init_seed", m.params.init_seed}};
}

}  // namespace

fs::path sidecar_path(const fs::path& model_path) {
  fs::path p = model_path;
  p += ".json";
  return p;
}

void save_model(const fs::path& path, const Model& m, const json& provenance) {
  check_params(m.spec, m.params);
  const std::string desc = descriptor(m).dump();
  std::string bytes(kModelMagic, sizeof kModelMagic);
  put_u32(bytes, kModelFormatVersion);
  put_u32(bytes, static_cast<std::uint32_t>(desc.size()));
  bytes += desc;
  for (auto b : m.params.blocks())
    for (double x : b) put_u32(bytes, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  io::write_file_atomic(path, bytes);
  json side = provenance;
  side["format_version"] = kModelFormatVersion;
  side["spec"] = to_json(m.spec);
  side["parameter_count"] = m.params.parameter_count();
  side["init_seed"] = m.params.init_seed;
  io::write_json(sidecar_path(path), side);
}

Model load_model(const fs::path& path) {
  const std::string bytes = io::read_file(path);
  const std::string where = " in model file " + path.string();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kModelMagic, 8) != 0)
    throw ConfigError("bad magic" + where);
  if (get_u32(bytes.data() + 8) != kModelFormatVersion) throw ConfigError("unsupported version" + where);
  const std::uint32_t len = get_u32(bytes.data() + 12);
  if (bytes.size() < 16 + static_cast<std::size_t>(len)) throw ConfigError("truncated descriptor" + where);
  Model m;
  try {
    const json d = json::parse(bytes.substr(16, len));
    m.spec = model_spec_from_json(d.at("spec"));
    m.params = zero_params(m.spec);
    m.params.init_seed = d.at("init_seed").get<std::uint64_t>();
    const auto sizes = d.at("block_sizes").get<std::vector<std::size_t>>();
    auto blocks = m.params.blocks();
    if (sizes.size() != blocks.size()) throw ConfigError("block count mismatch" + where);
    for (std::size_t i = 0; i < sizes.size(); ++i)
      if (sizes[i] != blocks[i].size()) throw ConfigError("block size mismatch" + where);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed descriptor: ") + e.what() + where);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid model spec: ") + e.what() + where);
  }
  std::size_t off = 16 + len;
  if (bytes.size() != off + 4 * m.params.parameter_count())
    throw ConfigError("parameter payload size mismatch" + where);
  for (auto b : m.params.blocks())
    for (double& x : b) {
      x = static_cast<double>(std::bit_cast<float>(get_u32(bytes.data() + off)));
      off += 4;
    }
  if (!m.params.all_finite()) throw ConfigError("non-finite parameters" + where);
  return m;
}

}  // namespace volxai::nn
