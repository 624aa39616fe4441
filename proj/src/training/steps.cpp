#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "debias/errors.hpp"
#include "debias/training.hpp"

namespace debias {

std::vector<double> cross_entropy(const Matrix& logits, std::span<const int> labels) {
  std::vector<double> out(logits.rows());
  for (int i = 0; i < logits.rows(); ++i) {
    const double a = logits(i, 0), b = logits(i, 1);
    const double mx = std::max(a, b);
    const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    out[i] = lse - (labels[i] ? b : a);
  }
  return out;
}

namespace {

void require_finite(double loss, std::string_view where) {
  if (!std::isfinite(loss))
    throw NumericalError(fmt::format("{}: non-finite loss ({}); aborting run", where, loss));
}

// dLoss/dlogits for loss = sum_i w_i * CE_i.
Matrix weighted_ce_grad(const Matrix& logits, std::span<const int> labels, std::span<const double> w) {
  Matrix d(logits.rows(), 2);
  for (int i = 0; i < logits.rows(); ++i) {
    const double a = logits(i, 0), b = logits(i, 1);
    const double p1 = 1.0 / (1.0 + std::exp(a - b));
    const double p0 = 1.0 - p1;
    d(i, 0) = static_cast<float>(w[i] * (p0 - (labels[i] == 0 ? 1.0 : 0.0)));
    d(i, 1) = static_cast<float>(w[i] * (p1 - (labels[i] == 1 ? 1.0 : 0.0)));
  }
  return d;
}

void apply_update(Classifier& model, Sgd& opt, const Matrix& z_used, const Matrix& dlogits, const Matrix* mask) {
  model.zero_grad();
  model.backward(z_used, dlogits, mask);
  auto params = model.parameters();
  opt.step(params);
}

void require_batch(const Batch& batch) {
  if (batch.size() == 0) throw ValidationError("training step on an empty batch");
  if (batch.images.n != batch.size()) throw ValidationError("batch images and labels disagree in size");
}

}  // namespace

StepResult erm_step(Classifier& model, Sgd& opt, const Batch& batch) {
  require_batch(batch);
  const Matrix z = model.extract(batch.images);
  const Matrix logits = model.head(z);
  StepResult r;
  r.sample_losses = cross_entropy(logits, batch.labels);
  double sum = 0.0;
  for (double l : r.sample_losses) sum += l;
  r.loss = sum / batch.size();
  require_finite(r.loss, "erm_step");
  const std::vector<double> w(batch.size(), 1.0 / batch.size());
  apply_update(model, opt, z, weighted_ce_grad(logits, batch.labels, w), nullptr);
  return r;
}

// ---------------------------------------------------------------------------

GroupWeights::GroupWeights(const EnvironmentPartition& envs, double step_size, double adjustment) {
  std::vector<std::size_t> sizes;
  for (const auto& [k, ids] : envs.members) {
    keys_.push_back(k);
    sizes.push_back(ids.size());
  }
  *this = GroupWeights(keys_, sizes, step_size, adjustment);
}

GroupWeights::GroupWeights(std::vector<EnvironmentKey> keys, std::vector<std::size_t> sizes, double step_size,
                           double adjustment)
    : keys_(std::move(keys)), eta_(step_size) {
  if (keys_.empty()) throw ValidationError("GroupWeights need at least one environment");
  if (sizes.size() != keys_.size()) throw ValidationError("GroupWeights: keys and sizes differ in length");
  q_.assign(keys_.size(), 1.0 / static_cast<double>(keys_.size()));
  for (auto n : sizes) {
    if (n == 0) throw ValidationError("GroupWeights: empty environment");
    adjust_.push_back(adjustment / std::sqrt(static_cast<double>(n)));
  }
  build_slots();
}

void GroupWeights::build_slots() {
  slot_.fill(-1);
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    const int code = keys_[i].code();
    if (slot_[code] >= 0) throw IntegrityError(fmt::format("duplicate environment {}", keys_[i].to_string()));
    slot_[code] = static_cast<int>(i);
  }
}

std::optional<std::size_t> GroupWeights::find(int env_code) const {
  if (env_code < 0 || env_code >= kMaxEnvironments || slot_[env_code] < 0) return std::nullopt;
  return static_cast<std::size_t>(slot_[env_code]);
}

std::size_t GroupWeights::index(const EnvironmentKey& k) const {
  if (auto s = find(k.code())) return *s;
  throw IntegrityError(fmt::format("environment {} has no GroupDRO weight", k.to_string()));
}

void GroupWeights::update(std::span<const std::size_t> present, std::span<const double> group_losses) {
  for (std::size_t k = 0; k < present.size(); ++k) {
    const auto g = present[k];
    q_[g] *= std::exp(eta_ * (group_losses[k] + adjust_[g]));
  }
  double total = 0.0;
  for (double v : q_) total += v;
  for (double& v : q_) v /= total;
}

GroupDroStepResult groupdro_step(Classifier& model, Sgd& opt, const Batch& batch, GroupWeights& weights) {
  require_batch(batch);
  if (batch.env_codes.size() != batch.labels.size())
    throw ValidationError("groupdro_step: every sample needs an environment key");
  std::vector<std::size_t> slot(batch.size());
  for (int i = 0; i < batch.size(); ++i) {
    auto s = weights.find(batch.env_codes[i]);
    if (!s)
      throw IntegrityError(fmt::format("groupdro_step: environment {} unknown to the group weights",
                                       EnvironmentKey::from_code(batch.env_codes[i]).to_string()));
    slot[i] = *s;
  }

  const Matrix z = model.extract(batch.images);
  const Matrix logits = model.head(z);
  GroupDroStepResult r;
  r.sample_losses = cross_entropy(logits, batch.labels);

  // Groups in order of first appearance in the batch.
  std::vector<int> pos_of(weights.size(), -1);
  std::vector<double> sums;
  std::vector<int> counts;
  for (int i = 0; i < batch.size(); ++i) {
    int& p = pos_of[slot[i]];
    if (p < 0) {
      p = static_cast<int>(r.present.size());
      r.present.push_back(slot[i]);
      sums.push_back(0.0);
      counts.push_back(0);
    }
    sums[p] += r.sample_losses[i];
    ++counts[p];
  }
  for (std::size_t k = 0; k < r.present.size(); ++k) r.group_losses.push_back(sums[k] / counts[k]);

  weights.update(r.present, r.group_losses);

  const auto& q = weights.weights();
  for (std::size_t k = 0; k < r.present.size(); ++k) r.loss += q[r.present[k]] * r.group_losses[k];
  require_finite(r.loss, "groupdro_step");

  std::vector<double> w(batch.size());
  for (int i = 0; i < batch.size(); ++i) {
    const int p = pos_of[slot[i]];
    w[i] = q[slot[i]] / counts[p];
  }
  apply_update(model, opt, z, weighted_ce_grad(logits, batch.labels, w), nullptr);
  return r;
}

// ---------------------------------------------------------------------------

int rsc_drop_count(double drop_percentile, int feature_dim) {
  if (!(drop_percentile >= 0.0 && drop_percentile < 100.0))
    throw ConfigError(fmt::format("RSC drop percentile {} must lie in [0, 100)", drop_percentile));
  // p * d is exact for integral p; the epsilon absorbs representation error
  // of fractional percentiles.
  return static_cast<int>(std::ceil(drop_percentile * feature_dim / 100.0 - 1e-9));
}

std::vector<int> top_k_indices(std::span<const float> g, int k) {
  std::vector<int> idx(g.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::clamp(k, 0, static_cast<int>(g.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (g[a] != g[b]) return g[a] > g[b];
    return a < b;
  });
  idx.resize(k);
  return idx;
}

RscStepResult rsc_step(Classifier& model, Sgd& opt, const Batch& batch, const RscParams& params, Rng& rng) {
  require_batch(batch);
  if (!(params.batch_fraction >= 0.0 && params.batch_fraction <= 1.0))
    throw ConfigError(fmt::format("RSC batch fraction {} must lie in [0, 1]", params.batch_fraction));
  const int drop = rsc_drop_count(params.drop_percentile, model.feature_dim());

  const Matrix z = model.extract(batch.images);
  RscStepResult r;
  r.mask = Matrix::Ones(z.rows(), z.cols());

  const int n_treat = static_cast<int>(std::lround(params.batch_fraction * batch.size()));
  if (n_treat > 0) {
    std::vector<int> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < n_treat; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(batch.size() - i)));
      std::swap(order[i], order[j]);
    }
    r.treated.assign(order.begin(), order.begin() + n_treat);
    std::sort(r.treated.begin(), r.treated.end());
    if (drop > 0) {
      const Matrix grad = model.true_class_score_gradient(z, batch.labels);
      for (int i : r.treated) {
        std::span<const float> row(grad.row(i).data(), static_cast<std::size_t>(grad.cols()));
        for (int e : top_k_indices(row, drop)) r.mask(i, e) = 0.0f;
      }
    }
  }

  const Matrix z_used = z.cwiseProduct(r.mask);
  const Matrix logits = model.head(z_used);
  r.sample_losses = cross_entropy(logits, batch.labels);
  double sum = 0.0;
  for (double l : r.sample_losses) sum += l;
  r.loss = sum / batch.size();
  require_finite(r.loss, "rsc_step");
  const std::vector<double> w(batch.size(), 1.0 / batch.size());
  apply_update(model, opt, z_used, weighted_ce_grad(logits, batch.labels, w), &r.mask);
  return r;
}

}  // namespace debias
