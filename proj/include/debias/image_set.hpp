#pragma once

#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "debias/manifest.hpp"
#include "debias/tensor.hpp"

namespace debias {

/// Decoded images of a manifest, resized to the model's input resolution and
/// normalised, kept in manifest order.
struct ImageSet {
  int channels = 3;
  int size = 0;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<int> env_codes;  // EnvironmentKey::code() of each record
  std::vector<float> pixels;   // N x C x size x size

  std::size_t count() const { return ids.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(channels) * size * size; }
  const float* sample(std::size_t i) const { return pixels.data() + i * sample_size(); }
  float* sample(std::size_t i) { return pixels.data() + i * sample_size(); }

  /// Copies the given samples into a batch tensor.
  Tensor4 gather(std::span<const std::size_t> indices) const;
};

/// Pixel normalisation applied at load: (v / 255 - 0.5) / 0.25.
inline constexpr float kPixelMean = 0.5f;
inline constexpr float kPixelStd = 0.25f;

/// Normalised CHW floats of an RGB image resized to `size` x `size`.
void image_to_chw(const cv::Mat& rgb, int size, float* dst);

/// Loads every record's image (area interpolation to `size`).
ImageSet load_image_set(const DatasetManifest& m, int size);

}  // namespace debias
