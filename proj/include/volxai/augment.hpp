#pragma once

// Random geometric patch augmentation: flips along x (horizontal) and y
// (vertical), translation, isotropic scaling and rotation in the axial
// (x-y) plane, all about the patch center (size - 1) / 2. Samples are
// trilinear; neighbours outside the patch take the extract_patch fill.

#include <json.hpp>

#include "volxai/rng.hpp"
#include "volxai/volgrid.hpp"

namespace volxai::aug {

struct AugmentationSpec {
  bool flip_horizontal = true;
  bool flip_vertical = true;
  double translation_vox = 1.0;  // uniform in [-t, t] per axis
  double scale_range = 0.1;      // scale uniform in [1 - r, 1 + r]
  double rotation_deg = 15.0;    // angle uniform in [-a, a]

  void validate() const;
};

nlohmann::json to_json(const AugmentationSpec& s);
AugmentationSpec augmentation_spec_from_json(const nlohmann::json& j, AugmentationSpec base = {});

struct AugmentDraw {
  bool flip_x = false;
  bool flip_y = false;
  Vec3 translation{0.0, 0.0, 0.0};
  double scale = 1.0;
  double rotation_deg = 0.0;

  bool is_identity() const noexcept;
};

AugmentDraw draw(const AugmentationSpec& spec, rng::Stream& stream);

Patch augment(const Patch& p, const AugmentDraw& d, PatchFill fill = {});

}  // namespace volxai::aug
