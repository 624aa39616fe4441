#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "debias/artifacts.hpp"
#include "debias/contingency.hpp"
#include "debias/manifest.hpp"

namespace debias {

struct ArtifactBias {
  double marginal = 0.2;     // P(a)
  double correlation = 0.0;  // phi(a, label)
};

struct SyntheticConfig {
  int n_samples = 2000;
  int image_size = 64;
  double class_prevalence = 0.5;
  std::array<ArtifactBias, kNumArtifacts> artifacts{};
  // Scales lesion boundary irregularity and interior mottling of malignant
  // samples. 0 makes classes indistinguishable from the lesion alone.
  double lesion_strength = 1.0;
  std::uint64_t seed = 0;
  std::string id_prefix = "syn";

  /// Throws FeasibilityError/ConfigError if any artifact triple is infeasible.
  void validate() const;
  /// Per-artifact conditionals, in artifact order.
  std::array<ArtifactConditionals, kNumArtifacts> conditionals() const;
};

void to_json(nlohmann::json& j, const SyntheticConfig& c);
void from_json(const nlohmann::json& j, SyntheticConfig& c);

/// One rendered sample before it is written to disk.
struct SyntheticSample {
  int label = 0;
  ArtifactVector artifacts;
  cv::Mat image;  // CV_8UC3 RGB
  cv::Mat mask;   // CV_8UC1, 255 = lesion
};

/// Draws label and artifacts for sample `id` and renders it. Depends only on
/// (config, id).
SyntheticSample render_sample(const SyntheticConfig& config, const std::string& id);

/// Renders an image with a prescribed label and artifact set. Used by tests
/// and by external-set builders that fix artifacts explicitly.
SyntheticSample render_with(const SyntheticConfig& config, const std::string& id, int label,
                            ArtifactVector artifacts);

/// Writes images/, masks/, manifest.csv and synthetic_config.json under
/// `out_dir` and returns the manifest. `jobs` worker threads render in parallel;
/// output does not depend on `jobs`.
DatasetManifest generate_synthetic(const SyntheticConfig& config,
                                   const std::filesystem::path& out_dir, int jobs = 1);

}  // namespace debias
