#pragma once

namespace debias {

/// Conditionals P(a=1 | y=1) and P(a=1 | y=0) of a binary artifact.
struct ArtifactConditionals {
  double given_positive = 0.0;
  double given_negative = 0.0;
};

/// Solves the 2x2 table with artifact marginal `p_artifact`, class prevalence
/// `p_label` and phi coefficient `rho`:
///   p11 = p_a p_y + rho sqrt(p_a (1 - p_a) p_y (1 - p_y)).
/// Throws FeasibilityError naming the first cell that falls outside [0, 1].
ArtifactConditionals solve_contingency(double rho, double p_artifact, double p_label);

}  // namespace debias
