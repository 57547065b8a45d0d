#include "volxai/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "volxai/errors.hpp"
#include "volxai/rng.hpp"
#include "volxai/volume_io.hpp"

namespace volxai::phantom {

namespace fs = std::filesystem;
using nlohmann::json;

void PhantomSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw InvalidArgument("phantom dims must be >= 1");
    if (!(spacing[a] > 0)) throw InvalidArgument("phantom spacing must be > 0");
    if (!(body_semi_axes_mm[a] > 0)) throw InvalidArgument("body semi-axes must be > 0");
  }
  if (lesion_count.lo < 0 || lesion_count.hi > 5 || lesion_count.lo > lesion_count.hi)
    throw InvalidArgument("lesion count range must lie within [0, 5]");
  if (distractor_count.lo < 0 || distractor_count.lo > distractor_count.hi)
    throw InvalidArgument("invalid distractor count range");
  for (const RealRange& r : {lesion_radius_mm, distractor_radius_mm, lesion_peak_uptake,
                             distractor_peak_uptake}) {
    if (!(r.lo > 0) || r.lo > r.hi) throw InvalidArgument("radius/peak ranges must be positive");
  }
  if (!(lesion_ct_radius_fraction > 0) || lesion_ct_radius_fraction > 1)
    throw InvalidArgument("lesion_ct_radius_fraction must lie in (0, 1]");
  if (noise_sigma_pet < 0 || noise_sigma_ct < 0) throw InvalidArgument("noise sigma must be >= 0");
  if (max_placement_attempts < 1) throw InvalidArgument("max_placement_attempts must be >= 1");
}

json to_json(const PhantomSpec& s) {
  return json{
      {"dims", s.dims},
      {"spacing", s.spacing},
      {"lesion_count", {s.lesion_count.lo, s.lesion_count.hi}},
      {"lesion_radius_mm", {s.lesion_radius_mm.lo, s.lesion_radius_mm.hi}},
      {"lesion_peak_uptake", {s.lesion_peak_uptake.lo, s.lesion_peak_uptake.hi}},
      {"distractor_count", {s.distractor_count.lo, s.distractor_count.hi}},
      {"distractor_radius_mm", {s.distractor_radius_mm.lo, s.distractor_radius_mm.hi}},
      {"distractor_peak_uptake", {s.distractor_peak_uptake.lo, s.distractor_peak_uptake.hi}},
      {"body_semi_axes_mm", s.body_semi_axes_mm},
      {"tissue_value", s.tissue_value},
      {"air_value", s.air_value},
      {"lesion_ct_contrast", s.lesion_ct_contrast},
      {"lesion_ct_radius_fraction", s.lesion_ct_radius_fraction},
      {"pet_background", s.pet_background},
      {"noise_sigma_pet", s.noise_sigma_pet},
      {"noise_sigma_ct", s.noise_sigma_ct},
      {"separation_margin_mm", s.separation_margin_mm},
      {"max_placement_attempts", s.max_placement_attempts},
      {"seed", s.seed},
  };
}

PhantomSpec phantom_spec_from_json(const json& j, PhantomSpec s) {
  auto int_range = [&](const char* key, IntRange& r) {
    if (j.contains(key)) r = {j[key].at(0).get<int>(), j[key].at(1).get<int>()};
  };
  auto real_range = [&](const char* key, RealRange& r) {
    if (j.contains(key)) r = {j[key].at(0).get<double>(), j[key].at(1).get<double>()};
  };
  auto scalar = [&](const char* key, auto& v) {
    if (j.contains(key)) v = j[key].get<std::decay_t<decltype(v)>>();
  };
  scalar("dims", s.dims);
  scalar("spacing", s.spacing);
  int_range("lesion_count", s.lesion_count);
  real_range("lesion_radius_mm", s.lesion_radius_mm);
  real_range("lesion_peak_uptake", s.lesion_peak_uptake);
  int_range("distractor_count", s.distractor_count);
  real_range("distractor_radius_mm", s.distractor_radius_mm);
  real_range("distractor_peak_uptake", s.distractor_peak_uptake);
  scalar("body_semi_axes_mm", s.body_semi_axes_mm);
  scalar("tissue_value", s.tissue_value);
  scalar("air_value", s.air_value);
  scalar("lesion_ct_contrast", s.lesion_ct_contrast);
  scalar("lesion_ct_radius_fraction", s.lesion_ct_radius_fraction);
  scalar("pet_background", s.pet_background);
  scalar("noise_sigma_pet", s.noise_sigma_pet);
  scalar("noise_sigma_ct", s.noise_sigma_ct);
  scalar("separation_margin_mm", s.separation_margin_mm);
  scalar("max_placement_attempts", s.max_placement_attempts);
  scalar("seed", s.seed);
  s.validate();
  return s;
}

double blob_sigma(double radius_mm) {
  return radius_mm / std::sqrt(2.0 * std::log(2.5));
}

namespace {

struct Geometry {
  const PhantomSpec& spec;
  Vec3 body_center;

  explicit Geometry(const PhantomSpec& s) : spec(s) {
    for (int a = 0; a < 3; ++a) body_center[a] = 0.5 * s.dims[a] * s.spacing[a];
  }
  Vec3 phys(int x, int y, int z) const {
    return {(x + 0.5) * spec.spacing[0], (y + 0.5) * spec.spacing[1],
            (z + 0.5) * spec.spacing[2]};
  }
  bool in_body(const Vec3& p) const {
    double q = 0;
    for (int a = 0; a < 3; ++a) {
      const double t = (p[a] - body_center[a]) / spec.body_semi_axes_mm[a];
      q += t * t;
    }
    return q <= 1.0;
  }
  static double dist2(const Vec3& a, const Vec3& b) {
    double d = 0;
    for (int k = 0; k < 3; ++k) d += (a[k] - b[k]) * (a[k] - b[k]);
    return d;
  }
  Vec3 phys(const Index3& i) const { return phys(i[0], i[1], i[2]); }

  // Every voxel center within the sphere (plus margin) must be inside the body.
  bool sphere_in_body(const Index3& c, double radius) const {
    const Vec3 pc = phys(c);
    for (int a = 0; a < 3; ++a) {
      if (pc[a] - radius < 0 || pc[a] + radius > spec.dims[a] * spec.spacing[a]) return false;
    }
    Index3 lo, hi;
    for (int a = 0; a < 3; ++a) {
      const int r = static_cast<int>(std::ceil(radius / spec.spacing[a]));
      lo[a] = c[a] - r;
      hi[a] = c[a] + r;
    }
    for (int z = lo[2]; z <= hi[2]; ++z)
      for (int y = lo[1]; y <= hi[1]; ++y)
        for (int x = lo[0]; x <= hi[0]; ++x) {
          const Vec3 p = phys(x, y, z);
          if (dist2(p, pc) <= radius * radius &&
              (!in_grid(spec.dims, x, y, z) || !in_body(p)))
            return false;
        }
    return true;
  }
};

Blob place_blob(const Geometry& g, rng::Stream& layout, RealRange radius_range, RealRange peak_range,
                const std::vector<Blob>& placed) {
  const PhantomSpec& s = g.spec;
  const double radius = layout.uniform(radius_range.lo, radius_range.hi);
  const double peak = layout.uniform(peak_range.lo, peak_range.hi);
  for (int attempt = 0; attempt < s.max_placement_attempts; ++attempt) {
    Index3 c;
    for (int a = 0; a < 3; ++a) c[a] = static_cast<int>(layout.uniform_int(0, s.dims[a] - 1));
    if (!g.sphere_in_body(c, radius + s.separation_margin_mm * 0.5)) continue;
    bool clear = true;
    for (const Blob& b : placed) {
      const double need = radius + b.radius_mm + s.separation_margin_mm;
      if (Geometry::dist2(g.phys(c), g.phys(b.center)) < need * need) {
        clear = false;
        break;
      }
    }
    if (clear) return Blob{c, radius, peak};
  }
  throw GenerationError("grid too small to place the requested blobs disjointly");
}

}  // namespace

PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t case_seed, const std::string& id) {
  spec.validate();
  const Geometry g(spec);
  rng::Stream layout(rng::derive_seed(case_seed, rng::StreamTag::Layout));

  const int n_lesions =
      static_cast<int>(layout.uniform_int(spec.lesion_count.lo, spec.lesion_count.hi));
  const int n_distractors =
      static_cast<int>(layout.uniform_int(spec.distractor_count.lo, spec.distractor_count.hi));

  std::vector<Blob> all;
  PhantomCase out{MultiModalCase{id, Volume3(spec.dims, spec.spacing, Modality::CT, 0.0),
                                 Volume3(spec.dims, spec.spacing, Modality::PET, 0.0), {}},
                  {}, {}, case_seed};
  for (int i = 0; i < n_lesions; ++i) {
    all.push_back(place_blob(g, layout, spec.lesion_radius_mm, spec.lesion_peak_uptake, all));
    out.lesions.push_back(all.back());
  }
  for (int i = 0; i < n_distractors; ++i) {
    all.push_back(
        place_blob(g, layout, spec.distractor_radius_mm, spec.distractor_peak_uptake, all));
    out.distractors.push_back(all.back());
  }

  const std::size_t n = voxel_count(spec.dims);
  std::vector<double> ct(n), pet(n);
  std::vector<std::vector<std::uint8_t>> masks(out.lesions.size(), std::vector<std::uint8_t>(n, 0));
  std::size_t i = 0;
  for (int z = 0; z < spec.dims[2]; ++z)
    for (int y = 0; y < spec.dims[1]; ++y)
      for (int x = 0; x < spec.dims[0]; ++x, ++i) {
        const Vec3 p = g.phys(x, y, z);
        const bool body = g.in_body(p);
        ct[i] = body ? spec.tissue_value : spec.air_value;
        double uptake = body ? spec.pet_background : 0.0;
        for (std::size_t b = 0; b < all.size(); ++b) {
          const double sigma = blob_sigma(all[b].radius_mm);
          const double v =
              all[b].peak * std::exp(-Geometry::dist2(p, g.phys(all[b].center)) / (2 * sigma * sigma));
          uptake = std::max(uptake, v);
          if (b < out.lesions.size() && v >= 0.4 * all[b].peak) masks[b][i] = 1;
          if (b < out.lesions.size()) {
            const double rc = spec.lesion_ct_radius_fraction * all[b].radius_mm;
            if (Geometry::dist2(p, g.phys(all[b].center)) <= rc * rc)
              ct[i] = spec.tissue_value + spec.lesion_ct_contrast;
          }
        }
        pet[i] = uptake;
      }

  if (spec.noise_sigma_ct > 0) {
    rng::Stream noise(rng::derive_seed(case_seed, rng::StreamTag::CtNoise));
    for (double& v : ct) v += noise.normal(0.0, spec.noise_sigma_ct);
  }
  if (spec.noise_sigma_pet > 0) {
    rng::Stream noise(rng::derive_seed(case_seed, rng::StreamTag::PetNoise));
    for (double& v : pet) v += noise.normal(0.0, spec.noise_sigma_pet);
  }

  out.data.ct = Volume3(spec.dims, spec.spacing, Modality::CT, std::move(ct));
  out.data.pet = Volume3(spec.dims, spec.spacing, Modality::PET, std::move(pet));
  for (std::size_t b = 0; b < out.lesions.size(); ++b) {
    Mask3 m(spec.dims, std::move(masks[b]));
    const Box3 box = m.bounding_box();
    out.data.annotations.push_back(LesionAnnotation{out.lesions[b].center, box, std::move(m)});
  }
  out.data.validate();
  return out;
}

std::uint64_t train_case_seed(std::uint64_t master_seed, int i) {
  return rng::derive_seed(rng::derive_seed(master_seed, 0), static_cast<std::uint64_t>(i));
}

std::uint64_t test_case_seed(std::uint64_t master_seed, int j) {
  return rng::derive_seed(rng::derive_seed(master_seed, 1), static_cast<std::uint64_t>(j));
}

namespace {

std::string case_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", prefix, i);
  return buf;
}

}  // namespace

DatasetSplit generate_dataset(const PhantomSpec& spec, int n_train, int n_test,
                              std::uint64_t master_seed) {
  if (n_train < 0 || n_test < 0) throw InvalidArgument("case counts must be >= 0");
  DatasetSplit split;
  auto add = [&](std::vector<MultiModalCase>& dst, const std::string& id, std::uint64_t seed) {
    PhantomCase pc = generate_case(spec, seed, id);
    split.seeds[id] = seed;
    split.distractors[id] = pc.distractors;
    dst.push_back(std::move(pc.data));
  };
  for (int i = 0; i < n_train; ++i) add(split.train, case_name("train", i), train_case_seed(master_seed, i));
  for (int j = 0; j < n_test; ++j) add(split.test, case_name("test", j), test_case_seed(master_seed, j));
  return split;
}

std::vector<std::uint32_t> rle_encode(const Mask3& m) {
  std::vector<std::uint32_t> runs;
  bool current = false;
  std::uint32_t len = 0;
  for (std::size_t i = 0; i < m.bits().size(); ++i) {
    const bool b = m[i];
    if (b != current) {
      runs.push_back(len);
      len = 0;
      current = b;
    }
    ++len;
  }
  runs.push_back(len);
  return runs;
}

Mask3 rle_decode(const Index3& dims, const std::vector<std::uint32_t>& runs) {
  std::vector<std::uint8_t> bits;
  bits.reserve(voxel_count(dims));
  std::uint8_t v = 0;
  for (std::uint32_t r : runs) {
    bits.insert(bits.end(), r, v);
    v ^= 1;
  }
  if (bits.size() != voxel_count(dims)) throw ConfigError("run-length mask does not match dims");
  return Mask3(dims, std::move(bits));
}

namespace {

json box_json(const Box3& b) { return json{{"min", b.min}, {"max", b.max}}; }
Box3 box_from(const json& j) { return Box3{j.at("min").get<Index3>(), j.at("max").get<Index3>()}; }

json blob_json(const Blob& b) {
  return json{{"center", b.center}, {"radius_mm", b.radius_mm}, {"peak", b.peak}};
}

}  // namespace

void write_dataset(const fs::path& root, const DatasetSplit& split, const json& provenance) {
  json train_ids = json::array(), test_ids = json::array(), seeds = json::object();
  auto write_case = [&](const MultiModalCase& c) {
    const fs::path dir = root / c.id;
    io::write_volume(dir, "ct", c.ct, provenance);
    io::write_volume(dir, "pet", c.pet, provenance);
    json ann = provenance;
    ann["id"] = c.id;
    ann["lesions"] = json::array();
    for (const auto& a : c.annotations) {
      ann["lesions"].push_back(
          json{{"center", a.center}, {"box", box_json(a.box)}, {"mask_rle", rle_encode(a.mask)}});
    }
    ann["distractors"] = json::array();
    if (auto it = split.distractors.find(c.id); it != split.distractors.end()) {
      for (const Blob& b : it->second) ann["distractors"].push_back(blob_json(b));
    }
    io::write_json(dir / "annotations.json", ann);
  };
  for (const auto& c : split.train) {
    write_case(c);
    train_ids.push_back(c.id);
  }
  for (const auto& c : split.test) {
    write_case(c);
    test_ids.push_back(c.id);
  }
  for (const auto& [id, seed] : split.seeds) seeds[id] = seed;
  json sj = provenance;
  sj["train"] = train_ids;
  sj["test"] = test_ids;
  sj["case_seeds"] = seeds;
  io::write_json(root / "split.json", sj);
}

MultiModalCase read_case(const fs::path& root, const std::string& id) {
  const fs::path dir = root / id;
  MultiModalCase c{id, io::read_volume(dir, "ct"), io::read_volume(dir, "pet"), {}};
  const json ann = io::read_json(dir / "annotations.json");
  for (const auto& l : ann.at("lesions")) {
    c.annotations.push_back(LesionAnnotation{
        l.at("center").get<Index3>(), box_from(l.at("box")),
        rle_decode(c.ct.dims(), l.at("mask_rle").get<std::vector<std::uint32_t>>())});
  }
  c.validate();
  return c;
}

DatasetSplit read_dataset(const fs::path& root) {
  const json sj = io::read_json(root / "split.json");
  DatasetSplit split;
  auto load = [&](const json& ids, std::vector<MultiModalCase>& dst) {
    for (const auto& idj : ids) {
      const std::string id = idj.get<std::string>();
      dst.push_back(read_case(root, id));
      split.seeds[id] = sj.at("case_seeds").at(id).get<std::uint64_t>();
      const json ann = io::read_json(root / id / "annotations.json");
      auto& ds = split.distractors[id];
      for (const auto& b : ann.value("distractors", json::array())) {
        ds.push_back(Blob{b.at("center").get<Index3>(), b.at("radius_mm").get<double>(),
                          b.at("peak").get<double>()});
      }
    }
  };
  load(sj.at("train"), split.train);
  load(sj.at("test"), split.test);
  return split;
}

}  // namespace volxai::phantom
