#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/correlation.hpp"
#include "debias/manifest.hpp"

namespace debias {

enum class Side : std::uint8_t { Train = 0, Test = 1 };

inline constexpr int kDefaultSwapBudget = 5000;

/// Chi-square (1 dof) critical value at p = 0.001.
inline constexpr double kSignificanceChiSquare = 10.828;

/// Full-data correlation sign per artifact: +1 or -1, and 0 when the
/// correlation is undefined or not significant (n * phi^2 <= 10.828).
std::array<int, kNumArtifacts> artifact_signs(const DatasetManifest& m);

/// J = sum_a s_a * (corr_train(a, y) - corr_test(a, y)). A correlation that
/// is undefined within one side contributes 0.
double trap_objective(const DatasetManifest& m, const std::vector<Side>& sides,
                      const std::array<int, kNumArtifacts>& signs);

/// Deterministic (factor = 1) placement before mixing.
struct TrapAssignment {
  std::vector<Side> sides;  // per manifest record
  std::array<int, kNumArtifacts> signs{};
  double objective_ranked = 0.0;  // J after score ranking
  double objective = 0.0;         // J after swap refinement
  int accepted_swaps = 0;
  std::vector<double> objective_trace;  // J after every accepted swap
};

/// Scores every sample by sum_a present * s_a * (2y - 1), sends the
/// top-ranked part of each class to train, then tries `swap_budget` random
/// same-class train/test swaps, keeping those that increase J.
TrapAssignment trap_assignment(const DatasetManifest& m, double test_fraction, std::uint64_t seed,
                               int swap_budget = kDefaultSwapBudget);

struct TrapSplit {
  double factor = 0.0;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  double objective = 0.0;
  CorrelationReport report;
  // Fraction of samples whose side matches the pure trap assignment.
  double trap_agreement = 0.0;
};

/// Builds the trap assignment, then keeps each sample's trap side with
/// probability `factor` and places the rest at random, class-stratified.
TrapSplit build_trap_split(const DatasetManifest& m, double factor, double test_fraction,
                           std::uint64_t seed, int swap_budget = kDefaultSwapBudget);

/// Side per record, for a split built on `m`.
std::vector<Side> sides_of(const DatasetManifest& m, const TrapSplit& split);

nlohmann::json to_json(const TrapSplit& s);
TrapSplit trap_split_from_json(const nlohmann::json& j);

}  // namespace debias
