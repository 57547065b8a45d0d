#include "volxai/augment.hpp"

#include <cmath>
#include <numbers>

#include "volxai/errors.hpp"

namespace volxai::aug {

using nlohmann::json;

void AugmentationSpec::validate() const {
  if (!(translation_vox >= 0) || !(scale_range >= 0) || !(scale_range < 1) ||
      !(rotation_deg >= 0) || !(rotation_deg <= 180))
    throw InvalidArgument("augmentation ranges must be non-negative (scale range below 1)");
}

json to_json(const AugmentationSpec& s) {
  return json{{"flip_horizontal", s.flip_horizontal}, {"flip_vertical", s.flip_vertical},
              {"translation_vox", s.translation_vox}, {"scale_range", s.scale_range},
              {"rotation_deg", s.rotation_deg}};
}

AugmentationSpec augmentation_spec_from_json(const json& j, AugmentationSpec s) {
  s.flip_horizontal = j.value("flip_horizontal", s.flip_horizontal);
  s.flip_vertical = j.value("flip_vertical", s.flip_vertical);
  s.translation_vox = j.value("translation_vox", s.translation_vox);
  s.scale_range = j.value("scale_range", s.scale_range);
  s.rotation_deg = j.value("rotation_deg", s.rotation_deg);
  s.validate();
  return s;
}

bool AugmentDraw::is_identity() const noexcept {
  return !flip_x && !flip_y && translation[0] == 0 && translation[1] == 0 &&
         translation[2] == 0 && scale == 1.0 && rotation_deg == 0.0;
}

AugmentDraw draw(const AugmentationSpec& spec, rng::Stream& s) {
  // Fixed draw order keeps the stream layout independent of which options are on.
  AugmentDraw d;
  const double fx = s.uniform(), fy = s.uniform();
  d.flip_x = spec.flip_horizontal && fx < 0.5;
  d.flip_y = spec.flip_vertical && fy < 0.5;
  for (double& t : d.translation) t = s.uniform(-spec.translation_vox, spec.translation_vox);
  d.scale = s.uniform(1.0 - spec.scale_range, 1.0 + spec.scale_range);
  d.rotation_deg = s.uniform(-spec.rotation_deg, spec.rotation_deg);
  return d;
}

namespace {

// Integers reached up to rounding error (e.g. cos 90 deg) are snapped so that
// grid-preserving transforms copy voxels exactly.
double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

Patch augment(const Patch& p, const AugmentDraw& d, PatchFill fill) {
  if (d.is_identity()) return p;
  const int n = p.size;
  const double c = (n - 1) / 2.0;
  const double th = d.rotation_deg * std::numbers::pi / 180.0;
  const double cs = snap(std::cos(th)), sn = snap(std::sin(th));
  Patch out = p;
  std::size_t padded = 0;
  auto sample = [&](const std::vector<double>& src, double fillv, double x, double y, double z,
                    bool& outside) {
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y)),
              z0 = static_cast<int>(std::floor(z));
    const double wx = x - x0, wy = y - y0, wz = z - z0;
    auto at = [&](int i, int j, int k) {
      if (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n) return fillv;
      return src[linear_index({n, n, n}, i, j, k)];
    };
    auto lerp = [](double a, double b, double w) { return w == 0.0 ? a : a + w * (b - a); };
    outside = x < 0 || y < 0 || z < 0 || x > n - 1 || y > n - 1 || z > n - 1;
    const double c00 = lerp(at(x0, y0, z0), at(x0 + 1, y0, z0), wx);
    const double c10 = lerp(at(x0, y0 + 1, z0), at(x0 + 1, y0 + 1, z0), wx);
    const double c01 = lerp(at(x0, y0, z0 + 1), at(x0 + 1, y0, z0 + 1), wx);
    const double c11 = lerp(at(x0, y0 + 1, z0 + 1), at(x0 + 1, y0 + 1, z0 + 1), wx);
    return lerp(lerp(c00, c10, wy), lerp(c01, c11, wy), wz);
  };
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        // Inverse map: undo translation, rotation, scale, then flips.
        const double qx = x - c - d.translation[0], qy = y - c - d.translation[1],
                     qz = z - c - d.translation[2];
        double sx = (cs * qx + sn * qy) / d.scale;
        double sy = (-sn * qx + cs * qy) / d.scale;
        const double sz = qz / d.scale;
        if (d.flip_x) sx = -sx;
        if (d.flip_y) sy = -sy;
        const double px = snap(sx + c), py = snap(sy + c), pz = snap(sz + c);
        bool outside = false;
        const std::size_t i = linear_index({n, n, n}, x, y, z);
        out.pet[i] = sample(p.pet, fill.pet, px, py, pz, outside);
        out.ct[i] = sample(p.ct, fill.ct, px, py, pz, outside);
        if (outside) ++padded;
      }
  out.padded_fraction = static_cast<double>(padded) / static_cast<double>(out.voxels());
  return out;
}

}  // namespace volxai::aug
