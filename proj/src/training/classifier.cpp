#include "debias/classifier.hpp"

#include <cmath>

#include "debias/random.hpp"

namespace debias {

Classifier::Classifier(int feature_dim)
    : feature_dim_(feature_dim),
      head_w_(Matrix::Zero(2, feature_dim)),
      head_b_(2, 0.0f),
      head_w_grad_(Matrix::Zero(2, feature_dim)),
      head_b_grad_(2, 0.0f) {}

void init_head(Classifier& model, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "head"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(model.feature_dim_));
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < model.feature_dim_; ++c)
      model.head_w_(r, c) = static_cast<float>(rng.normal() * scale);
  model.head_b_ = {0.0f, 0.0f};
}

Matrix Classifier::head(const Matrix& z) const {
  Matrix out = z * head_w_.transpose();
  for (int i = 0; i < out.rows(); ++i) {
    out(i, 0) += head_b_[0];
    out(i, 1) += head_b_[1];
  }
  return out;
}

Matrix Classifier::masked_head(const Matrix& z, const Matrix& mask) const {
  return head(z.cwiseProduct(mask));
}

std::vector<double> Classifier::predict_proba(const Tensor4& x) {
  const Matrix l = logits(x);
  std::vector<double> p(l.rows());
  for (int i = 0; i < l.rows(); ++i) {
    const double d = static_cast<double>(l(i, 0)) - static_cast<double>(l(i, 1));
    p[i] = 1.0 / (1.0 + std::exp(d));
  }
  return p;
}

Matrix Classifier::true_class_score_gradient(const Matrix& z, std::span<const int> labels) const {
  Matrix g(z.rows(), z.cols());
  for (int i = 0; i < z.rows(); ++i) g.row(i) = head_w_.row(labels[i]);
  return g;
}

void Classifier::backward(const Matrix& z_used, const Matrix& dlogits, const Matrix* mask) {
  head_w_grad_.noalias() += dlogits.transpose() * z_used;
  for (int i = 0; i < dlogits.rows(); ++i) {
    head_b_grad_[0] += dlogits(i, 0);
    head_b_grad_[1] += dlogits(i, 1);
  }
  Matrix dz = dlogits * head_w_;
  if (mask) dz = dz.cwiseProduct(*mask);
  backprop_features(dz);
}

std::vector<ParamView> Classifier::parameters() {
  auto out = extractor_parameters();
  out.push_back({"head.weight", {head_w_.data(), static_cast<std::size_t>(head_w_.size())},
                 {head_w_grad_.data(), static_cast<std::size_t>(head_w_grad_.size())}});
  out.push_back({"head.bias", head_b_, head_b_grad_});
  return out;
}

void Classifier::zero_grad() {
  for (auto& p : parameters()) std::fill(p.grad.begin(), p.grad.end(), 0.0f);
}

std::size_t Classifier::parameter_count() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.value.size();
  return n;
}

std::vector<std::vector<float>> snapshot_parameters(Classifier& model) {
  std::vector<std::vector<float>> out;
  for (auto& p : model.parameters()) out.emplace_back(p.value.begin(), p.value.end());
  return out;
}

void restore_parameters(Classifier& model, const std::vector<std::vector<float>>& values) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    std::copy(values[i].begin(), values[i].end(), params[i].value.begin());
}

void copy_parameters(Classifier& dst, Classifier& src) { restore_parameters(dst, snapshot_parameters(src)); }

}  // namespace debias
