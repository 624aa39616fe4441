#pragma once

#include <span>

namespace debias {

/// ROC AUC as the Mann-Whitney statistic: (concordant + 0.5 * tied) / (P * N).
/// Throws UndefinedMetricError unless both labels occur; ValueError on
/// mismatched lengths or non-binary labels.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;  // sample std / sqrt(n); 0 for n < 2
  int n = 0;
};

MeanStderr mean_stderr(std::span<const double> values);

}  // namespace debias
