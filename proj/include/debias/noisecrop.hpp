#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "debias/manifest.hpp"

namespace debias {

enum class MaskProvenance { GroundTruth, Inferred, Fallback };

std::string_view to_string(MaskProvenance p);

/// Binary lesion mask. Foreground pixels are identified by their centers.
struct BitMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0/1
  MaskProvenance provenance = MaskProvenance::GroundTruth;
  bool low_confidence = false;

  BitMask() = default;
  BitMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool on = true) { bits[static_cast<std::size_t>(y) * width + x] = on ? 1 : 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }

  /// Foreground where mat > 0 (CV_8UC1).
  static BitMask from_mat(const cv::Mat& m, MaskProvenance provenance = MaskProvenance::GroundTruth);
  /// CV_8UC1 with 255 for foreground.
  cv::Mat to_mat() const;
};

/// Filled convex hull of the foreground pixel centers, boundary inclusive.
/// Collinear input yields the covered segment, a single pixel itself.
/// Throws EmptyMaskError on an empty mask.
BitMask convex_hull(const BitMask& mask);

/// Vertices (counter-clockwise in image coordinates, no collinear points) of
/// the hull of the foreground pixel centers.
std::vector<cv::Point> hull_vertices(const BitMask& mask);

struct NoiseCropConfig {
  int output_size = 224;
  int noise_low = 0;     // inclusive, per channel
  int noise_high = 255;  // inclusive
  std::uint64_t seed = 0;

  void validate() const;
};

struct NoiseCropResult {
  cv::Mat image;          // CV_8UC3 RGB, output_size x output_size
  BitMask lesion;         // output pixels holding resampled lesion content
  cv::Rect box;           // hull bounding box in the input
  cv::Rect placed;        // where the scaled box landed in the output
  double scale = 1.0;
  MaskProvenance provenance = MaskProvenance::GroundTruth;
  bool low_confidence = false;
};

/// Convex hull -> crop to the hull box -> aspect-preserving rescale so the
/// longer side fills the output -> centered on a canvas of uniform noise.
/// Output pixels whose source falls outside the hull stay noise. Noise is
/// drawn per output pixel from a stream seeded by (config.seed, sample_id).
/// An empty mask switches to fallback_segment(image).
NoiseCropResult noisecrop(const cv::Mat& image, const BitMask& mask, const NoiseCropConfig& config,
                          std::string_view sample_id);

/// Heuristic lesion mask: Otsu on luminance inside the central 80% of the
/// frame, opening, largest connected component. If nothing usable is found,
/// a centered ellipse covering 40% of the frame, flagged low-confidence.
BitMask fallback_segment(const cv::Mat& image);

struct NoiseCropFailure {
  std::string id;
  std::string error;
};

struct BatchNoiseCropResult {
  DatasetManifest manifest;  // transformed records; failures are omitted
  std::vector<NoiseCropFailure> failures;
  std::size_t fallback_count = 0;
};

/// Transforms every record into `out_dir/images`, writes the output lesion
/// masks to `out_dir/masks`, `out_dir/manifest.csv` (with `noisecrop` and
/// `mask_provenance` columns appended) and `out_dir/noisecrop_summary.json`.
BatchNoiseCropResult batch_noisecrop(const DatasetManifest& m, const NoiseCropConfig& config,
                                     const std::filesystem::path& out_dir, int jobs = 1);

}  // namespace debias
