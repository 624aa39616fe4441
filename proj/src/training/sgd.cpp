#include "debias/sgd.hpp"

namespace debias {

void Sgd::step(std::vector<ParamView>& params) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.value.size(), 0.0f);
  }
  const auto lr = static_cast<float>(cfg_.learning_rate);
  const auto mu = static_cast<float>(cfg_.momentum);
  const auto wd = static_cast<float>(cfg_.weight_decay);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const float g = p.grad[i] + wd * p.value[i];
      v[i] = mu * v[i] + g;
      p.value[i] -= lr * v[i];
    }
  }
}

}  // namespace debias
