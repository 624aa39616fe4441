#pragma once

#include <nlohmann/json.hpp>

#include "debias/random.hpp"

namespace debias {

/// Training/TTA augmentation: integer shifts with edge replication, the 8
/// right-angle rotations/flips, and per-image brightness/contrast jitter.
struct AugmentRecipe {
  bool enabled = true;
  double max_shift = 0.08;   // fraction of the side
  bool rotate_flip = true;   // dihedral group: 90-degree rotations and mirror
  double brightness = 0.08;  // additive, in normalised units
  double contrast = 0.10;    // multiplicative around the image mean

  static AugmentRecipe identity() { return AugmentRecipe{false, 0, false, 0, 0}; }
};

void to_json(nlohmann::json& j, const AugmentRecipe& r);
void from_json(const nlohmann::json& j, AugmentRecipe& r);

/// Writes an augmented copy of one CHW image (square, side `size`) to `dst`.
/// With a disabled recipe `dst` is a plain copy and `rng` is not consumed.
void augment_image(const float* src, float* dst, int channels, int size, const AugmentRecipe& recipe, Rng& rng);

}  // namespace debias
