#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/augment.hpp"
#include "debias/classifier.hpp"
#include "debias/image_set.hpp"
#include "debias/manifest.hpp"
#include "debias/metrics.hpp"
#include "debias/noisecrop.hpp"
#include "debias/training.hpp"

namespace debias {

inline constexpr int kDefaultTtaReplicas = 50;

struct PredictionSet {
  std::vector<std::string> ids;
  std::vector<double> probabilities;  // melanoma probability
  std::vector<int> labels;
  std::uint64_t model_hash = 0;
  int tta_replicas = 1;
  bool noisecrop = false;
};

double roc_auc(const PredictionSet& p);

/// Mean melanoma probability over `n_replicas` augmented forward passes.
/// Replica r of sample `id` draws its augmentation from (seed, id, r).
PredictionSet predict_tta(Classifier& model, const ImageSet& images, std::span<const std::size_t> idx,
                          int n_replicas = kDefaultTtaReplicas, const AugmentRecipe& augmentation = {},
                          std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Trap sweeps

/// A trained method paired with a test regime, e.g. GroupDRO+NoiseCrop.
struct SweepMethod {
  Method training = Method::ERM;
  bool noisecrop = false;

  std::string name() const;
  static SweepMethod parse(std::string_view s);
  friend auto operator<=>(const SweepMethod&, const SweepMethod&) = default;
};

struct SweepConfig {
  std::vector<double> factors{0.0, 0.5, 0.7, 0.9, 1.0};
  std::vector<SweepMethod> methods{{Method::ERM, false},      {Method::GroupDRO, false}, {Method::RSC, false},
                                   {Method::ERM, true},       {Method::GroupDRO, true},  {Method::RSC, true}};
  int n_seeds = 10;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  int swap_budget = kDefaultSwapBudget;
  TrainConfig train;
  // Per-method overrides merged over `train` (keys of TrainConfig JSON).
  std::map<std::string, nlohmann::json> method_overrides;
  int tta_replicas = kDefaultTtaReplicas;
  NoiseCropConfig noisecrop;
  std::string sweep_id = "sweep";
  bool save_models = false;

  /// Factors {0, 0.5, 0.7, 0.9, 1}, all six methods, 10 seeds, 50 TTA replicas.
  static SweepConfig protocol();
  void validate() const;
};

void to_json(nlohmann::json& j, const SweepConfig& c);
void from_json(const nlohmann::json& j, SweepConfig& c);

struct SweepCell {
  double factor = 0.0;
  std::string method;
  int seed = 0;
  std::optional<double> auc;  // trap-test AUC; empty when the cell failed
  std::string error;
  std::size_t n_test = 0;
  double split_objective = 0.0;
};

struct SweepAggregate {
  double factor = 0.0;
  std::string method;
  MeanStderr auc;  // over seeds only
};

struct SweepResult {
  std::string sweep_id;
  int n_seeds = 0;
  std::vector<double> factors;
  std::vector<std::string> methods;
  std::vector<SweepCell> cells;  // ordered by (factor, seed, method)
  std::vector<SweepAggregate> aggregates;

  const SweepAggregate* aggregate(double factor, std::string_view method) const;
};

/// Recomputes mean/stderr per (factor, method) from the raw cells.
std::vector<SweepAggregate> aggregate_cells(const std::vector<SweepCell>& cells, const std::vector<double>& factors,
                                            const std::vector<std::string>& methods);

nlohmann::json to_json(const SweepResult& r);
SweepResult sweep_result_from_json(const nlohmann::json& j);

/// For every (factor, seed): a fresh trap split, environments on its training
/// side, one training run per needed method, trap-test AUC with TTA on the
/// original and/or NoiseCrop test images. NoiseCrop only touches test images.
/// Writes runs/<sweep-id>/<factor>/<method>/<seed>/ under `out_dir` plus
/// cells.csv, aggregate.csv and sweep.json. Results do not depend on `jobs`.
SweepResult run_trap_sweep(const DatasetManifest& m, const SweepConfig& config, const std::filesystem::path& out_dir,
                           int jobs = 1);

/// Pre-transformed NoiseCrop copy of a manifest, reused when the cache
/// directory already holds one for the same manifest and config.
DatasetManifest noisecrop_cached(const DatasetManifest& m, const NoiseCropConfig& config,
                                 const std::filesystem::path& cache_root, int jobs = 1);

/// Cache root: $DEBIAS_LAB_CACHE if set, else `fallback`.
std::filesystem::path cache_root(const std::filesystem::path& fallback);

// ---------------------------------------------------------------------------
// External sets

struct ArtifactPrevalence {
  std::string artifact;
  double overall = 0.0;
  double benign = 0.0;
  double melanoma = 0.0;
};

struct EvalReport {
  std::string manifest;
  double auc = 0.0;
  std::size_t n = 0;
  std::size_t positives = 0;
  int tta_replicas = 0;
  bool noisecrop = false;
  std::size_t fallback_masks = 0;
  std::vector<ArtifactPrevalence> prevalence;
  PredictionSet predictions;
};

nlohmann::json to_json(const EvalReport& r);
std::vector<ArtifactPrevalence> artifact_prevalence(const DatasetManifest& m);

struct ExternalEvalOptions {
  bool noisecrop = false;
  NoiseCropConfig noisecrop_config;
  int tta_replicas = kDefaultTtaReplicas;
  AugmentRecipe augmentation;
  std::uint64_t seed = 0;
  std::filesystem::path work_dir = "external-eval";
};

/// TTA AUC of `model` on an untouched manifest, optionally NoiseCropped first.
EvalReport evaluate_external(Classifier& model, const DatasetManifest& external, const ExternalEvalOptions& options);

// ---------------------------------------------------------------------------
// Saliency

struct SaliencyMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;  // row-major, in [0, 1]
  int target_class = 1;
  std::string layer;
  bool all_zero = false;

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// ReLU(sum_k softmax(scores)_k * maps_k), divided by its maximum.
/// `maps` are K planes of width*height (upsampled activations).
SaliencyMap combine_saliency(std::span<const std::vector<float>> maps, std::span<const double> scores, int width,
                             int height);

/// ScoreCAM for one normalised CHW image (a 1-sample tensor).
SaliencyMap scorecam(Classifier& model, const Tensor4& image, std::string_view layer = "block3",
                     int target_class = 1);

// ---------------------------------------------------------------------------
// Reports

struct SaliencyPanel {
  std::string id;
  cv::Mat image;  // RGB
  SaliencyMap map;
  bool correct = true;
  std::string caption;
};

struct ReportInputs {
  std::optional<SweepResult> sweep;
  std::vector<std::pair<std::optional<double>, CorrelationReport>> correlations;
  std::vector<std::pair<std::string, MeanStderr>> auc_table;
  std::vector<SaliencyPanel> saliency;
};

/// Writes plots (SVG), tables (CSV/HTML) and saliency overlays (PNG) under
/// `out_dir`; returns the written paths. Missing sweep cells show as gaps.
std::vector<std::filesystem::path> render_report(const ReportInputs& inputs, const std::filesystem::path& out_dir);

/// Overlay of a saliency map on an image with a solid blue (correct) or
/// dashed red (wrong) border.
cv::Mat saliency_overlay(const cv::Mat& rgb, const SaliencyMap& map, bool correct);

}  // namespace debias
