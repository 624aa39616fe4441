#include "debias/augment.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace debias {

void to_json(nlohmann::json& j, const AugmentRecipe& r) {
  j = {{"enabled", r.enabled},
       {"max_shift", r.max_shift},
       {"rotate_flip", r.rotate_flip},
       {"brightness", r.brightness},
       {"contrast", r.contrast}};
}

void from_json(const nlohmann::json& j, AugmentRecipe& r) {
  r.enabled = j.value("enabled", r.enabled);
  r.max_shift = j.value("max_shift", r.max_shift);
  r.rotate_flip = j.value("rotate_flip", r.rotate_flip);
  r.brightness = j.value("brightness", r.brightness);
  r.contrast = j.value("contrast", r.contrast);
}

void augment_image(const float* src, float* dst, int channels, int size, const AugmentRecipe& recipe, Rng& rng) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  if (!recipe.enabled) {
    std::copy_n(src, plane * channels, dst);
    return;
  }
  const int max_px = static_cast<int>(std::floor(recipe.max_shift * size));
  const int dx = max_px > 0 ? rng.range(-max_px, max_px) : 0;
  const int dy = max_px > 0 ? rng.range(-max_px, max_px) : 0;
  const int dihedral = recipe.rotate_flip ? static_cast<int>(rng.below(8)) : 0;
  const float shift = static_cast<float>(rng.uniform(-recipe.brightness, recipe.brightness));
  const float gain = static_cast<float>(1.0 + rng.uniform(-recipe.contrast, recipe.contrast));

  const int last = size - 1;
  for (int c = 0; c < channels; ++c) {
    const float* s = src + c * plane;
    float* d = dst + c * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += s[i];
    const auto m = static_cast<float>(mean / static_cast<double>(plane));
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        // Output (x, y) -> source coordinate through the dihedral element,
        // then the shift, clamped to the border.
        int u = x, v = y;
        if (dihedral & 4) u = last - u;
        switch (dihedral & 3) {
          case 1: std::swap(u, v); u = last - u; break;
          case 2: u = last - u; v = last - v; break;
          case 3: std::swap(u, v); v = last - v; break;
          default: break;
        }
        u = std::clamp(u - dx, 0, last);
        v = std::clamp(v - dy, 0, last);
        d[y * size + x] = (s[v * size + u] - m) * gain + m + shift;
      }
  }
}

}  // namespace debias
