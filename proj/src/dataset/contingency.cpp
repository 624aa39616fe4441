#include "debias/contingency.hpp"

#include <fmt/format.h>

#include <cmath>

#include "debias/errors.hpp"

namespace debias {

ArtifactConditionals solve_contingency(double rho, double p_artifact, double p_label) {
  if (!(p_artifact > 0.0 && p_artifact < 1.0))
    throw FeasibilityError(fmt::format("artifact marginal {} must lie in (0, 1)", p_artifact), "p_a");
  if (!(p_label > 0.0 && p_label < 1.0))
    throw FeasibilityError(fmt::format("class prevalence {} must lie in (0, 1)", p_label), "p_y");
  if (!(rho >= -1.0 && rho <= 1.0))
    throw FeasibilityError(fmt::format("correlation {} must lie in [-1, 1]", rho), "rho");

  const double p11 =
      p_artifact * p_label +
      rho * std::sqrt(p_artifact * (1.0 - p_artifact) * p_label * (1.0 - p_label));
  const double p10 = p_artifact - p11;  // artifact present, benign
  const double p01 = p_label - p11;     // artifact absent, melanoma
  const double p00 = 1.0 - p_artifact - p_label + p11;

  constexpr double tol = 1e-12;
  const struct {
    const char* name;
    double value;
  } cells[] = {{"p11", p11}, {"p10", p10}, {"p01", p01}, {"p00", p00}};
  for (const auto& c : cells) {
    if (c.value < -tol || c.value > 1.0 + tol)
      throw FeasibilityError(
          fmt::format("infeasible table for rho={}, p_a={}, p_y={}: cell {}={:.6f} outside [0, 1]",
                      rho, p_artifact, p_label, c.name, c.value),
          c.name);
  }

  auto clamp01 = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };
  return {clamp01(p11 / p_label), clamp01(p10 / (1.0 - p_label))};
}

}  // namespace debias
