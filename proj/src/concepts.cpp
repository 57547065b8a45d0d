#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <deque>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "volxai/concepts.hpp"
#include "volxai/errors.hpp"

namespace volxai::concepts {

std::string_view to_string(ConceptModality m) {
  switch (m) {
    case ConceptModality::PET: return "PET";
    case ConceptModality::CT: return "CT";
    case ConceptModality::SHAPE: return "SHAPE";
  }
  return "?";
}

void DiscretizationSpec::validate() const {
  if (bin_count < 2) throw InvalidArgument("bin_count must be >= 2");
}

const FeatureValue& find(const FeatureSet& fs, std::string_view name) {
  for (const auto& f : fs)
    if (f.name == name) return f;
  throw std::out_of_range("feature not found: " + std::string(name));
}

Mask3 largest_component(const Mask3& m) {
  const Index3& dims = m.dims();
  const std::size_t n = m.bits().size();
  std::vector<int> comp(n, -1);
  std::vector<std::size_t> sizes;
  std::deque<Index3> queue;
  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const std::size_t i = linear_index(dims, x, y, z);
        if (!m[i] || comp[i] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        std::size_t size = 0;
        comp[i] = id;
        queue.push_back({x, y, z});
        while (!queue.empty()) {
          const Index3 v = queue.front();
          queue.pop_front();
          ++size;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int nx = v[0] + dx, ny = v[1] + dy, nz = v[2] + dz;
                if (!in_grid(dims, nx, ny, nz)) continue;
                const std::size_t j = linear_index(dims, nx, ny, nz);
                if (!m[j] || comp[j] >= 0) continue;
                comp[j] = id;
                queue.push_back({nx, ny, nz});
              }
        }
        sizes.push_back(size);
      }
  if (sizes.empty()) return m;
  // Components are numbered in order of their lowest linear index, so the
  // first maximum is the tie-break winner.
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  std::vector<std::uint8_t> bits(n, 0);
  for (std::size_t i = 0; i < n; ++i) bits[i] = comp[i] == best ? 1 : 0;
  return Mask3(dims, std::move(bits));
}

Mask3 segment_adaptive(const Volume3& pet, const Box3& roi, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw InvalidArgument("fraction must be in (0, 1)");
  if (!roi.valid() || !(clip_box(roi, pet.dims()) == roi))
    throw InvalidArgument("ROI must be non-empty and inside the grid");
  double vmax = -std::numeric_limits<double>::infinity();
  double vmin = std::numeric_limits<double>::infinity();
  for (int z = roi.min[2]; z < roi.max[2]; ++z)
    for (int y = roi.min[1]; y < roi.max[1]; ++y)
      for (int x = roi.min[0]; x < roi.max[0]; ++x) {
        const double v = pet(x, y, z);
        if (!std::isfinite(v)) throw NumericalError("non-finite PET value in ROI");
        vmax = std::max(vmax, v);
        vmin = std::min(vmin, v);
      }
  Mask3 full(pet.dims());
  std::vector<std::uint8_t> bits(full.bits().begin(), full.bits().end());
  if (vmin == vmax) {
    for (int z = roi.min[2]; z < roi.max[2]; ++z)
      for (int y = roi.min[1]; y < roi.max[1]; ++y)
        for (int x = roi.min[0]; x < roi.max[0]; ++x) bits[linear_index(pet.dims(), x, y, z)] = 1;
    return Mask3(pet.dims(), std::move(bits));
  }
  // For a non-positive maximum the fractional level would exceed the maximum
  // itself; capping keeps the argmax voxel in the mask.
  const double threshold = std::min(fraction * vmax, vmax);
  for (int z = roi.min[2]; z < roi.max[2]; ++z)
    for (int y = roi.min[1]; y < roi.max[1]; ++y)
      for (int x = roi.min[0]; x < roi.max[0]; ++x)
        if (pet(x, y, z) >= threshold) bits[linear_index(pet.dims(), x, y, z)] = 1;
  return largest_component(Mask3(pet.dims(), std::move(bits)));
}

LabelVolume discretize(const Volume3& vol, const Mask3& mask, const DiscretizationSpec& spec) {
  spec.validate();
  if (mask.dims() != vol.dims()) throw InvalidArgument("mask dims differ from volume dims");
  if (mask.empty()) throw InvalidArgument("discretize: empty mask");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (!mask[i]) continue;
    lo = std::min(lo, vol[i]);
    hi = std::max(hi, vol[i]);
  }
  LabelVolume lv{vol.dims(), std::vector<int>(vol.size(), 0), spec.bin_count};
  const double nb = spec.bin_count;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (!mask[i]) continue;
    if (hi == lo) {
      lv.labels[i] = 1;
      continue;
    }
    const long long bin = static_cast<long long>(std::floor(nb * (vol[i] - lo) / (hi - lo))) + 1;
    lv.labels[i] = static_cast<int>(std::clamp<long long>(bin, 1, spec.bin_count));
  }
  return lv;
}

namespace {

double percentile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return s[lo] + frac * (s[hi] - s[lo]);
}

}  // namespace

FeatureSet firstorder_features(const Volume3& vol, const Mask3& mask, const DiscretizationSpec& spec) {
  if (mask.dims() != vol.dims()) throw InvalidArgument("mask dims differ from volume dims");
  if (mask.empty()) throw InvalidArgument("first-order features: empty mask");
  std::vector<double> x;
  x.reserve(mask.count());
  for (std::size_t i = 0; i < vol.size(); ++i)
    if (mask[i]) x.push_back(vol[i]);
  const double n = static_cast<double>(x.size());
  double sum = 0, sumsq = 0;
  for (double v : x) {
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  double mad = 0;
  for (double v : x) mad += std::abs(v - mean);
  mad /= n;
  std::vector<double> s = x;
  std::sort(s.begin(), s.end());

  const LabelVolume lv = discretize(vol, mask, spec);
  std::vector<double> hist(static_cast<std::size_t>(spec.bin_count), 0.0);
  for (int l : lv.labels)
    if (l > 0) hist[static_cast<std::size_t>(l - 1)] += 1.0;
  double ent = 0;
  for (double h : hist) {
    const double p = h / n;
    if (p > 0) ent -= p * std::log2(p);
  }
  return {
      {"Mean", mean, ""},
      {"Median", percentile_sorted(s, 0.5), ""},
      {"Maximum", s.back(), ""},
      {"Minimum", s.front(), ""},
      {"Range", s.back() - s.front(), ""},
      {"Entropy", ent, ""},
      {"MeanAbsoluteDeviation", mad, ""},
      {"RootMeanSquared", std::sqrt(sumsq / n), ""},
      {"10Percentile", percentile_sorted(s, 0.1), ""},
      {"90Percentile", percentile_sorted(s, 0.9), ""},
  };
}

FeatureSet shape_features(const Mask3& mask, const Vec3& spacing) {
  if (mask.empty()) throw InvalidArgument("shape features: empty mask");
  const Index3& d = mask.dims();
  const std::array<double, 3> face{spacing[1] * spacing[2], spacing[0] * spacing[2],
                                   spacing[0] * spacing[1]};
  double area = 0;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        if (!mask(x, y, z)) continue;
        const Index3 p{x, y, z};
        for (int a = 0; a < 3; ++a)
          for (int s : {-1, 1}) {
            Index3 q = p;
            q[a] += s;
            if (!in_grid(d, q[0], q[1], q[2]) || !mask(q[0], q[1], q[2])) area += face[a];
          }
      }
  const double volume = static_cast<double>(mask.count()) * spacing[0] * spacing[1] * spacing[2];
  const double sphericity =
      std::cbrt(std::numbers::pi) * std::pow(6.0 * volume, 2.0 / 3.0) / area;
  return {{"VoxelVolume", volume, ""}, {"Sphericity", sphericity, ""}};
}

namespace {

const char* const kFirstOrder[] = {"Mean",   "Median", "Maximum", "Minimum", "Range",
                                   "Entropy", "MeanAbsoluteDeviation", "RootMeanSquared",
                                   "10Percentile", "90Percentile"};
const char* const kGlcm[] = {"JointAverage",      "SumAverage",        "SumEntropy",
                             "DifferenceAverage", "DifferenceEntropy", "MCC"};
const char* const kGlrlm[] = {"RunEntropy", "RunLengthNonUniformityNormalized"};
const char* const kGlszm[] = {"SizeZoneNonUniformity", "SizeZoneNonUniformityNormalized",
                              "ZoneEntropy"};
const char* const kGldm[] = {"SmallDependenceEmphasis", "DependenceEntropy"};

void append_intensity(std::vector<ConceptEntry>& out, const Volume3& vol, const Mask3& mask,
                      const DiscretizationSpec& spec, ConceptModality modality) {
  const std::string prefix = std::string(to_string(modality)) + " ";
  auto push = [&](const char* family, const FeatureSet& fs) {
    for (const auto& f : fs) {
      out.push_back({prefix + family + " " + f.name, modality, f.value, f.flag});
    }
  };
  push("Firstorder", firstorder_features(vol, mask, spec));
  const LabelVolume lv = discretize(vol, mask, spec);
  push("GLCM", glcm_features(lv));
  push("GLRLM", glrlm_features(lv));
  push("GLSZM", glszm_features(lv));
  push("GLDM", gldm_features(lv));
}

}  // namespace

const std::vector<RegistryEntry>& concept_registry() {
  static const std::vector<RegistryEntry> reg = [] {
    std::vector<RegistryEntry> r{{"Shape VoxelVolume", ConceptModality::SHAPE},
                                 {"Shape Sphericity", ConceptModality::SHAPE}};
    for (ConceptModality m : {ConceptModality::PET, ConceptModality::CT}) {
      const std::string p = std::string(to_string(m)) + " ";
      for (const char* n : kFirstOrder) r.push_back({p + "Firstorder " + n, m});
      for (const char* n : kGlcm) r.push_back({p + "GLCM " + n, m});
      for (const char* n : kGlrlm) r.push_back({p + "GLRLM " + n, m});
      for (const char* n : kGlszm) r.push_back({p + "GLSZM " + n, m});
      for (const char* n : kGldm) r.push_back({p + "GLDM " + n, m});
    }
    return r;
  }();
  return reg;
}

ConceptVector extract_concepts(const Volume3& pet, const Volume3& ct, const Mask3& pet_mask,
                               const DiscretizationSpec& spec, std::string source_id) {
  if (pet.dims() != ct.dims() || pet_mask.dims() != pet.dims())
    throw InvalidArgument("extract_concepts: PET, CT and mask grids differ");
  if (pet_mask.empty()) throw InvalidArgument("extract_concepts: empty mask");
  ConceptVector cv{std::move(source_id), {}};
  for (const auto& f : shape_features(pet_mask, pet.spacing())) {
    cv.entries.push_back({"Shape " + f.name, ConceptModality::SHAPE, f.value, f.flag});
  }
  append_intensity(cv.entries, pet, pet_mask, spec, ConceptModality::PET);
  append_intensity(cv.entries, ct, pet_mask, spec, ConceptModality::CT);

  const auto& reg = concept_registry();
  if (cv.entries.size() != reg.size()) throw std::logic_error("concept registry mismatch");
  for (std::size_t i = 0; i < reg.size(); ++i) {
    if (cv.entries[i].name != reg[i].name) throw std::logic_error("concept registry order");
  }
  return cv;
}

ConceptVector concepts_for_box(const MultiModalCase& c, const Box3& roi, double fraction,
                               const DiscretizationSpec& spec, std::string source_id) {
  const Box3 clipped = clip_box(roi, c.pet.dims());
  if (!clipped.valid()) throw InvalidArgument("concept ROI lies outside the grid");
  const Volume3 pet = crop(c.pet, clipped);
  const Volume3 ct = crop(c.ct, clipped);
  const Box3 local{{0, 0, 0}, clipped.extent()};
  const Mask3 mask = segment_adaptive(pet, local, fraction);
  return extract_concepts(pet, ct, mask, spec, std::move(source_id));
}

ConceptMatrix build_concept_matrix(const std::vector<ConceptVector>& rows, std::vector<double> target) {
  if (rows.size() != target.size())
    throw InvalidArgument("concept rows and target lengths differ");
  const auto& reg = concept_registry();
  ConceptMatrix m;
  for (const auto& r : reg) {
    m.names.push_back(r.name);
    m.modalities.push_back(r.modality);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(reg.size());
  m.values.resize(n, c);
  m.column_flags.assign(reg.size(), "");
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    if (row.entries.size() != reg.size()) throw InvalidArgument("concept vector size mismatch");
    m.sample_ids.push_back(row.source_id);
    for (Eigen::Index k = 0; k < c; ++k) {
      const auto& e = row.entries[static_cast<std::size_t>(k)];
      if (e.value) {
        m.values(i, k) = *e.value;
      } else {
        m.values(i, k) = std::numeric_limits<double>::quiet_NaN();
        auto& flag = m.column_flags[static_cast<std::size_t>(k)];
        if (flag.empty()) flag = "undefined in " + row.source_id + ": " + e.flag;
      }
    }
  }
  m.target = std::move(target);
  return m;
}

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_csv(const ConceptMatrix& m, const std::string& comment) {
  std::ostringstream os;
  if (!comment.empty()) os << "# " << comment << "\n";
  os << "sample_id";
  for (const auto& n : m.names) os << "," << n;
  os << ",target\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << m.sample_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index k = 0; k < m.cols(); ++k) os << "," << fmt_double(m.values(i, k));
    os << "," << fmt_double(m.target[static_cast<std::size_t>(i)]) << "\n";
  }
  return os.str();
}

}  // namespace volxai::concepts
