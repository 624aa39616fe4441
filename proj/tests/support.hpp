#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "debias/classifier.hpp"
#include "debias/manifest.hpp"
#include "debias/random.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// Records with the given labels and artifact bitmasks; image paths are
/// placeholders (nothing is read from disk).
debias::DatasetManifest make_manifest(const std::vector<int>& labels, const std::vector<std::uint8_t>& masks,
                                      const std::string& name = "mem");

/// Labels ~ Bernoulli(prevalence); artifact a present with P(a | y) solved
/// from (rho[a], marginal[a]). No images.
debias::DatasetManifest random_manifest(std::size_t n, const std::vector<double>& rho,
                                        const std::vector<double>& marginal, std::uint64_t seed,
                                        double prevalence = 0.5);

/// z = W x (flattened input) with d outputs; a minimal Classifier for exact
/// gradient checks.
class LinearProbe final : public debias::Classifier {
 public:
  LinearProbe(int channels, int size, int d, std::uint64_t seed);
  int input_channels() const override { return channels_; }
  int input_size() const override { return size_; }
  debias::Matrix extract(const debias::Tensor4& x) override;
  void backprop_features(const debias::Matrix& dz) override;
  debias::Tensor4 layer_activation(const debias::Tensor4& x, std::string_view layer) override;
  std::vector<std::string> layer_names() const override { return {"features"}; }
  nlohmann::json architecture() const override { return {{"type", "linear_probe"}}; }

 protected:
  std::vector<debias::ParamView> extractor_parameters() override;

 private:
  int channels_, size_;
  debias::Matrix w_, w_grad_, x_;
};

double pearson(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace testing
