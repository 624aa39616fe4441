#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/augment.hpp"
#include "debias/classifier.hpp"
#include "debias/environments.hpp"
#include "debias/image_set.hpp"
#include "debias/random.hpp"
#include "debias/sgd.hpp"
#include "debias/small_cnn.hpp"
#include "debias/trap_split.hpp"

namespace debias {

enum class Method { ERM, GroupDRO, RSC };

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

/// A mini-batch; `env_codes` is required by GroupDRO only.
struct Batch {
  Tensor4 images;
  std::vector<int> labels;
  std::vector<int> env_codes;

  int size() const { return static_cast<int>(labels.size()); }
};

/// Per-sample cross-entropy on two logits.
std::vector<double> cross_entropy(const Matrix& logits, std::span<const int> labels);

struct StepResult {
  double loss = 0.0;
  std::vector<double> sample_losses;
};

/// One SGD step on the mean cross-entropy of the batch.
StepResult erm_step(Classifier& model, Sgd& opt, const Batch& batch);

/// Online GroupDRO weights over the non-empty training environments.
class GroupWeights {
 public:
  GroupWeights() = default;
  /// Uniform weights; adjustment term C / sqrt(n_g) per group.
  GroupWeights(const EnvironmentPartition& envs, double step_size, double adjustment);
  GroupWeights(std::vector<EnvironmentKey> keys, std::vector<std::size_t> sizes, double step_size,
               double adjustment);

  std::size_t size() const { return keys_.size(); }
  const std::vector<EnvironmentKey>& keys() const { return keys_; }
  const std::vector<double>& weights() const { return q_; }
  double weight(const EnvironmentKey& k) const { return q_[index(k)]; }
  double adjustment_term(const EnvironmentKey& k) const { return adjust_[index(k)]; }
  double step_size() const { return eta_; }

  /// Slot of key `k`; throws IntegrityError for unknown keys.
  std::size_t index(const EnvironmentKey& k) const;
  std::optional<std::size_t> find(int env_code) const;

  /// q_g <- q_g * exp(eta * (loss_g + C / sqrt(n_g))) for the groups present,
  /// then renormalise over all groups.
  void update(std::span<const std::size_t> present, std::span<const double> group_losses);

 private:
  std::vector<EnvironmentKey> keys_;
  std::vector<double> q_;
  std::vector<double> adjust_;
  std::array<int, kMaxEnvironments> slot_{};
  double eta_ = 0.01;
  void build_slots();
};

struct GroupDroStepResult {
  double loss = 0.0;  // sum_g q_g * mean loss of g, over groups in the batch
  std::vector<double> sample_losses;
  std::vector<std::size_t> present;    // group slots seen in the batch
  std::vector<double> group_losses;    // aligned with `present`
};

GroupDroStepResult groupdro_step(Classifier& model, Sgd& opt, const Batch& batch, GroupWeights& weights);

struct RscParams {
  double drop_percentile = 33.0;  // p: percentage of z entries muted
  double batch_fraction = 0.5;    // f: share of the batch that is challenged
};

/// Number of representation entries RSC mutes: ceil(p / 100 * d).
int rsc_drop_count(double drop_percentile, int feature_dim);
/// Indices of the `k` largest entries of `g` (ties: lower index first).
std::vector<int> top_k_indices(std::span<const float> g, int k);

struct RscStepResult {
  double loss = 0.0;
  std::vector<double> sample_losses;
  std::vector<int> treated;  // batch positions that were challenged
  Matrix mask;               // batch x d, 0 where muted
};

/// Mutes the highest-gradient entries of z for a random fraction of the
/// batch, then steps on the mixed batch loss. `rng` selects the samples.
RscStepResult rsc_step(Classifier& model, Sgd& opt, const Batch& batch, const RscParams& params, Rng& rng);

struct TrainConfig {
  Method method = Method::ERM;
  double learning_rate = 1e-3;
  double weight_decay = 1e-3;
  double momentum = 0.9;
  int max_epochs = 100;
  int patience = 22;
  int batch_size = 32;
  double eta_q = 0.01;
  double adjustment = 0.0;  // generalisation adjustment C
  double rsc_percentile = 33.0;
  double rsc_fraction = 0.5;
  std::uint64_t seed = 0;
  AugmentRecipe augmentation;
  double val_fraction = 0.2;
  SmallCnnSpec model;
  // Set only by privileged (oracle) selection; reported, never defaulted.
  bool privileged = false;

  void validate() const;
  std::uint64_t hash() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_auc = 0.0;
  std::vector<std::pair<std::string, double>> group_losses;  // env key -> mean loss
  std::vector<double> q;                                     // GroupDRO only
  double seconds = 0.0;
};

nlohmann::json to_json(const EpochMetrics& m);

/// Tracks the best validation score and stops after `patience` epochs in a
/// row without strict improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  /// Returns true when training should stop after this epoch.
  bool update(int epoch, double score);
  int best_epoch() const { return best_epoch_; }
  double best_score() const { return best_; }
  bool improved() const { return improved_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_ = -1.0;
  bool improved_ = false;
};

struct TrainRun {
  TrainConfig config;
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_val_auc = 0.0;
  std::unique_ptr<Classifier> model;  // parameters of the best epoch
  double wall_seconds = 0.0;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  // Audit: training and selection never touched held-out test labels.
  bool read_test_labels = false;
};

nlohmann::json run_summary(const TrainRun& run);

struct TrainOptions {
  // Metrics JSONL is appended here every epoch when set.
  std::optional<std::filesystem::path> metrics_path;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Splits `train_idx` (indices into `images`) into training and a stratified
/// validation part carved with `seed`.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> carve_validation(
    const ImageSet& images, std::span<const std::size_t> train_idx, double val_fraction, std::uint64_t seed);

/// Full training loop on the records `train_idx` of `images`. GroupDRO needs
/// `envs` (built on the same training ids).
TrainRun train(const ImageSet& images, std::span<const std::size_t> train_idx, const EnvironmentPartition* envs,
               const TrainConfig& config, const TrainOptions& options = {});

/// Loads images and trains on the split's training side.
TrainRun train(const DatasetManifest& m, const TrapSplit& split, const EnvironmentPartition* envs,
               const TrainConfig& config, const TrainOptions& options = {});

/// Plain (non-augmented) melanoma probabilities for the given records.
std::vector<double> predict(Classifier& model, const ImageSet& images, std::span<const std::size_t> idx,
                            int batch_size = 64);

struct ParamGrid {
  std::vector<double> learning_rates;
  std::vector<double> weight_decays;
  // Second stage for GroupDRO: generalisation adjustment C, searched with the
  // best (lr, wd). Empty skips the stage.
  std::vector<double> adjustments;
  int n_runs = 2;

  /// Learning rates {1e-5, 1e-4, 1e-3}, weight decays {1e-3, 1e-2, 0.1, 1},
  /// adjustments 0..5, two runs per cell.
  static ParamGrid protocol();
};

struct GridCell {
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  double adjustment = 0.0;
};

struct ScheduledRun {
  GridCell cell;
  int run = 0;
  std::uint64_t seed = 0;
};

/// First-stage (lr x wd) runs in execution order.
std::vector<ScheduledRun> grid_schedule(const ParamGrid& grid, const TrainConfig& base);

struct LeaderboardRow {
  GridCell cell;
  double mean_score = 0.0;
  std::vector<double> scores;
};

enum class Selection { Validation, PrivilegedTest };

struct GridResult {
  TrainConfig best;
  std::vector<LeaderboardRow> leaderboard;             // first stage
  std::vector<LeaderboardRow> adjustment_leaderboard;  // second stage (GroupDRO)
  bool privileged = false;
};

/// Sort descending by mean score; ties by lower lr, then lower wd, then lower C.
void sort_leaderboard(std::vector<LeaderboardRow>& rows);

/// Grid search with `grid.n_runs` runs per cell, each run with its own seed
/// and validation carve. Validation selection never reads `test_idx`;
/// PrivilegedTest scores cells on the test records and flags the result.
GridResult grid_search(const ImageSet& images, std::span<const std::size_t> train_idx,
                       const EnvironmentPartition* envs, const ParamGrid& grid, const TrainConfig& base,
                       Selection selection = Selection::Validation, std::span<const std::size_t> test_idx = {});

}  // namespace debias
