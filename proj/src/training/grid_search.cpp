#include <fmt/format.h>

#include <algorithm>

#include "debias/errors.hpp"
#include "debias/metrics.hpp"
#include "debias/training.hpp"

namespace debias {

ParamGrid ParamGrid::protocol() {
  return {{1e-5, 1e-4, 1e-3}, {1e-3, 1e-2, 1e-1, 1.0}, {0, 1, 2, 3, 4, 5}, 2};
}

std::vector<ScheduledRun> grid_schedule(const ParamGrid& grid, const TrainConfig& base) {
  if (grid.learning_rates.empty() || grid.weight_decays.empty()) throw ConfigError("grid search over an empty grid");
  if (grid.n_runs < 1) throw ConfigError("grid search needs n_runs >= 1");
  std::vector<ScheduledRun> out;
  for (double lr : grid.learning_rates)
    for (double wd : grid.weight_decays)
      for (int r = 0; r < grid.n_runs; ++r)
        out.push_back({{lr, wd, base.adjustment}, r, derive_seed(base.seed, static_cast<std::uint64_t>(r))});
  return out;
}

void sort_leaderboard(std::vector<LeaderboardRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const LeaderboardRow& a, const LeaderboardRow& b) {
    if (a.mean_score != b.mean_score) return a.mean_score > b.mean_score;
    if (a.cell.learning_rate != b.cell.learning_rate) return a.cell.learning_rate < b.cell.learning_rate;
    if (a.cell.weight_decay != b.cell.weight_decay) return a.cell.weight_decay < b.cell.weight_decay;
    return a.cell.adjustment < b.cell.adjustment;
  });
}

namespace {

double score_run(TrainRun& run, const ImageSet& images, Selection selection, std::span<const std::size_t> test_idx) {
  if (selection == Selection::Validation) return run.best_val_auc;
  std::vector<int> labels;
  for (auto i : test_idx) labels.push_back(images.labels[i]);
  run.read_test_labels = true;
  return roc_auc(predict(*run.model, images, test_idx), labels);
}

TrainConfig with_cell(TrainConfig cfg, const GridCell& cell, std::uint64_t seed) {
  cfg.learning_rate = cell.learning_rate;
  cfg.weight_decay = cell.weight_decay;
  cfg.adjustment = cell.adjustment;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

GridResult grid_search(const ImageSet& images, std::span<const std::size_t> train_idx,
                       const EnvironmentPartition* envs, const ParamGrid& grid, const TrainConfig& base,
                       Selection selection, std::span<const std::size_t> test_idx) {
  if (selection == Selection::PrivilegedTest && test_idx.empty())
    throw ConfigError("privileged selection needs test records");
  const auto schedule = grid_schedule(grid, base);

  GridResult result;
  result.privileged = selection == Selection::PrivilegedTest;
  for (std::size_t s = 0; s < schedule.size(); s += grid.n_runs) {
    LeaderboardRow row;
    row.cell = schedule[s].cell;
    for (int r = 0; r < grid.n_runs; ++r) {
      const auto& job = schedule[s + r];
      auto run = train(images, train_idx, envs, with_cell(base, job.cell, job.seed));
      row.scores.push_back(score_run(run, images, selection, test_idx));
    }
    row.mean_score = mean_stderr(row.scores).mean;
    result.leaderboard.push_back(std::move(row));
  }
  sort_leaderboard(result.leaderboard);
  GridCell best = result.leaderboard.front().cell;

  if (base.method == Method::GroupDRO && !grid.adjustments.empty()) {
    for (double c : grid.adjustments) {
      LeaderboardRow row;
      row.cell = {best.learning_rate, best.weight_decay, c};
      for (int r = 0; r < grid.n_runs; ++r) {
        auto run = train(images, train_idx, envs,
                         with_cell(base, row.cell, derive_seed(base.seed, static_cast<std::uint64_t>(r))));
        row.scores.push_back(score_run(run, images, selection, test_idx));
      }
      row.mean_score = mean_stderr(row.scores).mean;
      result.adjustment_leaderboard.push_back(std::move(row));
    }
    sort_leaderboard(result.adjustment_leaderboard);
    best = result.adjustment_leaderboard.front().cell;
  }

  result.best = with_cell(base, best, base.seed);
  result.best.privileged = result.privileged;
  return result;
}

}  // namespace debias
