#pragma once

#include <vector>

#include "debias/classifier.hpp"

namespace debias {

struct SgdConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// SGD with momentum and L2 weight decay (coupled):
///   g = grad + wd * w;  v = momentum * v + g;  w -= lr * v
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}

  void step(std::vector<ParamView>& params);
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::vector<std::vector<float>> velocity_;
};

}  // namespace debias
