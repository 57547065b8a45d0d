#pragma once

// Volumetric data model: scalar grids, binary masks, index boxes, two-channel
// patches and trilinear grid resampling.
//
// Conventions used throughout the library:
//   * voxel arrays are dense and x-fastest: index = (z * ny + y) * nx + x
//   * the physical center of voxel i along an axis is (i + 0.5) * spacing
//   * boxes are half-open in index space: [min, max)

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace volxai {

using Index3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

enum class Modality { PET, CT };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);

inline std::size_t voxel_count(const Index3& dims) {
  return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
         static_cast<std::size_t>(dims[2]);
}

inline std::size_t linear_index(const Index3& dims, int x, int y, int z) {
  return (static_cast<std::size_t>(z) * static_cast<std::size_t>(dims[1]) +
          static_cast<std::size_t>(y)) *
             static_cast<std::size_t>(dims[0]) +
         static_cast<std::size_t>(x);
}

inline bool in_grid(const Index3& dims, int x, int y, int z) {
  return x >= 0 && y >= 0 && z >= 0 && x < dims[0] && y < dims[1] && z < dims[2];
}

/// Half-open voxel box [min, max).
struct Box3 {
  Index3 min{0, 0, 0};
  Index3 max{1, 1, 1};

  bool valid() const noexcept {
    return min[0] < max[0] && min[1] < max[1] && min[2] < max[2];
  }
  Index3 extent() const noexcept {
    return {max[0] - min[0], max[1] - min[1], max[2] - min[2]};
  }
  long long volume() const noexcept;
  bool contains(const Index3& p) const noexcept;
  bool operator==(const Box3&) const = default;
};

/// Box of `size` voxels per axis whose voxel `size / 2` sits on `center`.
Box3 centered_box(const Index3& center, int size);
/// Intersection with [0, dims); result may be invalid when disjoint.
Box3 clip_box(const Box3& box, const Index3& dims);

/// Intersection over union of two valid boxes; 0 when disjoint.
double iou(const Box3& a, const Box3& b);

/// Dense scalar volume. Immutable once constructed.
class Volume3 {
 public:
  Volume3(Index3 dims, Vec3 spacing, Modality modality, std::vector<double> values);
  Volume3(Index3 dims, Vec3 spacing, Modality modality, double fill);

  const Index3& dims() const noexcept { return dims_; }
  const Vec3& spacing() const noexcept { return spacing_; }
  Modality modality() const noexcept { return modality_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  double operator()(int x, int y, int z) const noexcept {
    return values_[linear_index(dims_, x, y, z)];
  }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

 private:
  Index3 dims_;
  Vec3 spacing_;
  Modality modality_;
  std::vector<double> values_;
};

/// Binary voxel mask over a grid.
class Mask3 {
 public:
  Mask3(Index3 dims, std::vector<std::uint8_t> bits);
  explicit Mask3(Index3 dims);

  const Index3& dims() const noexcept { return dims_; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  bool operator()(int x, int y, int z) const noexcept {
    return bits_[linear_index(dims_, x, y, z)] != 0;
  }
  bool operator[](std::size_t i) const noexcept { return bits_[i] != 0; }
  std::size_t count() const noexcept;
  bool empty() const noexcept { return count() == 0; }
  /// Tight bounding box; throws InvalidArgument when the mask is empty.
  Box3 bounding_box() const;
  bool operator==(const Mask3&) const = default;

 private:
  Index3 dims_;
  std::vector<std::uint8_t> bits_;
};

struct LesionAnnotation {
  Index3 center{};
  Box3 box{};
  Mask3 mask{Index3{1, 1, 1}};
};

/// Registered PET/CT pair on one grid with ground-truth lesions.
struct MultiModalCase {
  std::string id;
  Volume3 ct;
  Volume3 pet;
  std::vector<LesionAnnotation> annotations;

  /// Throws InvalidArgument if the pair is not co-registered or an
  /// annotation is inconsistent with its mask.
  void validate() const;
};

/// Background fill for voxels outside the grid.
struct PatchFill {
  double pet = 0.0;
  double ct = -1000.0;
};

/// Two-channel cube cut from a case; channel arrays are x-fastest.
struct Patch {
  int size = 0;
  std::vector<double> pet;
  std::vector<double> ct;
  Index3 center{};
  double padded_fraction = 0.0;

  std::size_t voxels() const noexcept {
    return static_cast<std::size_t>(size) * static_cast<std::size_t>(size) *
           static_cast<std::size_t>(size);
  }
};

Patch extract_patch(const MultiModalCase& c, const Index3& center, int size = 96,
                    PatchFill fill = {});

/// Trilinear resampling through physical coordinates; samples outside the
/// source grid clamp to the nearest edge voxel.
Volume3 resample_trilinear(const Volume3& src, const Index3& target_dims,
                           const Vec3& target_spacing);

/// Sub-volume copy of a box that lies inside the grid.
Volume3 crop(const Volume3& v, const Box3& box);
Mask3 crop(const Mask3& m, const Box3& box);

}  // namespace volxai
