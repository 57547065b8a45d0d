#include "volxai/volgrid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "volxai/errors.hpp"

namespace volxai {

std::string_view to_string(Modality m) {
  return m == Modality::PET ? "PET" : "CT";
}

Modality modality_from_string(std::string_view s) {
  if (s == "PET") return Modality::PET;
  if (s == "CT") return Modality::CT;
  throw InvalidArgument("unknown modality: " + std::string(s));
}

long long Box3::volume() const noexcept {
  if (!valid()) return 0;
  const auto e = extent();
  return static_cast<long long>(e[0]) * e[1] * e[2];
}

bool Box3::contains(const Index3& p) const noexcept {
  for (int a = 0; a < 3; ++a) {
    if (p[a] < min[a] || p[a] >= max[a]) return false;
  }
  return true;
}

Box3 centered_box(const Index3& center, int size) {
  if (size < 1) throw InvalidArgument("box size must be >= 1");
  Box3 b;
  for (int a = 0; a < 3; ++a) {
    b.min[a] = center[a] - size / 2;
    b.max[a] = b.min[a] + size;
  }
  return b;
}

Box3 clip_box(const Box3& box, const Index3& dims) {
  Box3 out;
  for (int a = 0; a < 3; ++a) {
    out.min[a] = std::max(box.min[a], 0);
    out.max[a] = std::min(box.max[a], dims[a]);
  }
  return out;
}

double iou(const Box3& a, const Box3& b) {
  if (!a.valid() || !b.valid()) throw InvalidArgument("iou: invalid box");
  long long inter = 1;
  for (int k = 0; k < 3; ++k) {
    const int lo = std::max(a.min[k], b.min[k]);
    const int hi = std::min(a.max[k], b.max[k]);
    if (hi <= lo) return 0.0;
    inter *= hi - lo;
  }
  const long long uni = a.volume() + b.volume() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

void check_geometry(const Index3& dims, const Vec3& spacing) {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) throw InvalidArgument("volume dims must be >= 1");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw InvalidArgument("volume spacing must be positive and finite");
  }
}

}  // namespace

Volume3::Volume3(Index3 dims, Vec3 spacing, Modality modality, std::vector<double> values)
    : dims_(dims), spacing_(spacing), modality_(modality), values_(std::move(values)) {
  check_geometry(dims_, spacing_);
  if (values_.size() != voxel_count(dims_))
    throw InvalidArgument("volume value count does not match dims");
  for (double v : values_) {
    if (!std::isfinite(v)) throw InvalidArgument("volume contains non-finite values");
  }
}

Volume3::Volume3(Index3 dims, Vec3 spacing, Modality modality, double fill)
    : Volume3(dims, spacing, modality, std::vector<double>(voxel_count(dims), fill)) {}

Mask3::Mask3(Index3 dims, std::vector<std::uint8_t> bits) : dims_(dims), bits_(std::move(bits)) {
  for (int a = 0; a < 3; ++a) {
    if (dims_[a] < 1) throw InvalidArgument("mask dims must be >= 1");
  }
  if (bits_.size() != voxel_count(dims_)) throw InvalidArgument("mask size does not match dims");
  for (auto& b : bits_) b = b ? 1 : 0;
}

Mask3::Mask3(Index3 dims) : Mask3(dims, std::vector<std::uint8_t>(voxel_count(dims), 0)) {}

std::size_t Mask3::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Box3 Mask3::bounding_box() const {
  Box3 b{{dims_[0], dims_[1], dims_[2]}, {0, 0, 0}};
  bool any = false;
  for (int z = 0; z < dims_[2]; ++z)
    for (int y = 0; y < dims_[1]; ++y)
      for (int x = 0; x < dims_[0]; ++x) {
        if (!(*this)(x, y, z)) continue;
        any = true;
        const Index3 p{x, y, z};
        for (int a = 0; a < 3; ++a) {
          b.min[a] = std::min(b.min[a], p[a]);
          b.max[a] = std::max(b.max[a], p[a] + 1);
        }
      }
  if (!any) throw InvalidArgument("bounding box of empty mask");
  return b;
}

void MultiModalCase::validate() const {
  if (pet.dims() != ct.dims()) throw InvalidArgument(id + ": PET/CT dims differ");
  if (pet.spacing() != ct.spacing()) throw InvalidArgument(id + ": PET/CT spacing differ");
  if (pet.modality() != Modality::PET || ct.modality() != Modality::CT)
    throw InvalidArgument(id + ": modality labels swapped");
  const Box3 grid{{0, 0, 0}, ct.dims()};
  for (const auto& a : annotations) {
    if (a.mask.dims() != ct.dims()) throw InvalidArgument(id + ": annotation mask dims");
    if (a.mask.empty()) throw InvalidArgument(id + ": empty annotation mask");
    if (!(a.mask.bounding_box() == a.box)) throw InvalidArgument(id + ": annotation box not tight");
    if (!(clip_box(a.box, ct.dims()) == a.box) || !grid.contains(a.center))
      throw InvalidArgument(id + ": annotation outside grid");
  }
}

Patch extract_patch(const MultiModalCase& c, const Index3& center, int size, PatchFill fill) {
  if (size < 1) throw InvalidArgument("patch size must be >= 1");
  const Index3& dims = c.pet.dims();
  if (!in_grid(dims, center[0], center[1], center[2]))
    throw InvalidArgument("patch center outside grid");

  Patch p;
  p.size = size;
  p.center = center;
  p.pet.resize(p.voxels());
  p.ct.resize(p.voxels());
  const Box3 box = centered_box(center, size);
  std::size_t padded = 0;
  std::size_t i = 0;
  for (int z = box.min[2]; z < box.max[2]; ++z)
    for (int y = box.min[1]; y < box.max[1]; ++y)
      for (int x = box.min[0]; x < box.max[0]; ++x, ++i) {
        if (in_grid(dims, x, y, z)) {
          p.pet[i] = c.pet(x, y, z);
          p.ct[i] = c.ct(x, y, z);
        } else {
          p.pet[i] = fill.pet;
          p.ct[i] = fill.ct;
          ++padded;
        }
      }
  p.padded_fraction = static_cast<double>(padded) / static_cast<double>(p.voxels());
  return p;
}

Volume3 resample_trilinear(const Volume3& src, const Index3& target_dims,
                           const Vec3& target_spacing) {
  check_geometry(target_dims, target_spacing);
  const Index3& sd = src.dims();
  const Vec3& ss = src.spacing();

  // Per-axis lower index and weight, precomputed once per target coordinate.
  struct Tap {
    int i0, i1;
    double w1;
  };
  std::array<std::vector<Tap>, 3> taps;
  for (int a = 0; a < 3; ++a) {
    taps[a].resize(static_cast<std::size_t>(target_dims[a]));
    for (int j = 0; j < target_dims[a]; ++j) {
      // Voxel center (j + 0.5) * t in physical space, expressed in source index units.
      double idx = (j + 0.5) * (target_spacing[a] / ss[a]) - 0.5;
      idx = std::clamp(idx, 0.0, static_cast<double>(sd[a] - 1));
      int i0 = static_cast<int>(std::floor(idx));
      i0 = std::min(i0, sd[a] - 1);
      const int i1 = std::min(i0 + 1, sd[a] - 1);
      taps[a][static_cast<std::size_t>(j)] = {i0, i1, idx - i0};
    }
  }

  std::vector<double> out(voxel_count(target_dims));
  std::size_t n = 0;
  for (int z = 0; z < target_dims[2]; ++z) {
    const Tap tz = taps[2][static_cast<std::size_t>(z)];
    for (int y = 0; y < target_dims[1]; ++y) {
      const Tap ty = taps[1][static_cast<std::size_t>(y)];
      for (int x = 0; x < target_dims[0]; ++x, ++n) {
        const Tap tx = taps[0][static_cast<std::size_t>(x)];
        auto at = [&](int xi, int yi, int zi) { return src(xi, yi, zi); };
        auto lerp = [](double a, double b, double w) { return w == 0.0 ? a : a + w * (b - a); };
        const double c00 = lerp(at(tx.i0, ty.i0, tz.i0), at(tx.i1, ty.i0, tz.i0), tx.w1);
        const double c10 = lerp(at(tx.i0, ty.i1, tz.i0), at(tx.i1, ty.i1, tz.i0), tx.w1);
        const double c01 = lerp(at(tx.i0, ty.i0, tz.i1), at(tx.i1, ty.i0, tz.i1), tx.w1);
        const double c11 = lerp(at(tx.i0, ty.i1, tz.i1), at(tx.i1, ty.i1, tz.i1), tx.w1);
        const double c0 = lerp(c00, c10, ty.w1);
        const double c1 = lerp(c01, c11, ty.w1);
        out[n] = lerp(c0, c1, tz.w1);
      }
    }
  }
  return Volume3(target_dims, target_spacing, src.modality(), std::move(out));
}

Volume3 crop(const Volume3& v, const Box3& box) {
  if (!box.valid() || !(clip_box(box, v.dims()) == box))
    throw InvalidArgument("crop box must be valid and inside the grid");
  const Index3 e = box.extent();
  std::vector<double> out;
  out.reserve(voxel_count(e));
  for (int z = box.min[2]; z < box.max[2]; ++z)
    for (int y = box.min[1]; y < box.max[1]; ++y)
      for (int x = box.min[0]; x < box.max[0]; ++x) out.push_back(v(x, y, z));
  return Volume3(e, v.spacing(), v.modality(), std::move(out));
}

Mask3 crop(const Mask3& m, const Box3& box) {
  if (!box.valid() || !(clip_box(box, m.dims()) == box))
    throw InvalidArgument("crop box must be valid and inside the grid");
  const Index3 e = box.extent();
  std::vector<std::uint8_t> out;
  out.reserve(voxel_count(e));
  for (int z = box.min[2]; z < box.max[2]; ++z)
    for (int y = box.min[1]; y < box.max[1]; ++y)
      for (int x = box.min[0]; x < box.max[0]; ++x) out.push_back(m(x, y, z) ? 1 : 0);
  return Mask3(e, std::move(out));
}

}  // namespace volxai
