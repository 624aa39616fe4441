#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "debias/tensor.hpp"

namespace debias {

struct ParamView {
  std::string name;
  std::span<float> value;
  std::span<float> grad;
};

/// Binary classifier split into a feature extractor (image -> z in R^d) and
/// a linear head (z -> 2 logits). The split exposes z so training methods can
/// mute representation entries.
///
/// extract() caches whatever backprop_features() needs; a model therefore
/// supports one forward/backward in flight at a time.
class Classifier {
 public:
  explicit Classifier(int feature_dim);
  virtual ~Classifier() = default;

  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;

  int feature_dim() const { return feature_dim_; }
  virtual int input_channels() const = 0;
  virtual int input_size() const = 0;

  /// Representation z (batch x d).
  virtual Matrix extract(const Tensor4& x) = 0;
  /// Accumulates extractor gradients given dLoss/dz from the last extract().
  virtual void backprop_features(const Matrix& dz) = 0;

  /// Spatial activations (NCHW) of a named extractor layer. Invalidates the
  /// cache of the last extract().
  virtual Tensor4 layer_activation(const Tensor4& x, std::string_view layer) = 0;
  virtual std::vector<std::string> layer_names() const = 0;

  virtual nlohmann::json architecture() const = 0;

  Matrix head(const Matrix& z) const;
  /// head(z ⊙ mask). With an all-ones mask this equals head(z) exactly.
  Matrix masked_head(const Matrix& z, const Matrix& mask) const;
  Matrix logits(const Tensor4& x) { return head(extract(x)); }
  /// Melanoma probability softmax(logits)[1] per sample.
  std::vector<double> predict_proba(const Tensor4& x);

  /// d logit_{y_i} / d z_i for every sample.
  Matrix true_class_score_gradient(const Matrix& z, std::span<const int> labels) const;

  /// Backprop of dLoss/dlogits. `z_used` is the head input of the forward
  /// pass (masked when `mask` is given); gradient into z is multiplied by mask.
  void backward(const Matrix& z_used, const Matrix& dlogits, const Matrix* mask = nullptr);

  std::vector<ParamView> parameters();
  void zero_grad();
  std::size_t parameter_count();

 protected:
  virtual std::vector<ParamView> extractor_parameters() = 0;

 private:
  int feature_dim_;
  Matrix head_w_;  // 2 x d
  std::vector<float> head_b_;
  Matrix head_w_grad_;
  std::vector<float> head_b_grad_;

  friend void init_head(Classifier&, std::uint64_t seed);
};

/// Small-normal initialisation of the head.
void init_head(Classifier& model, std::uint64_t seed);

/// Deep copy of all parameter values from `src` into `dst` (same architecture).
void copy_parameters(Classifier& dst, Classifier& src);
std::vector<std::vector<float>> snapshot_parameters(Classifier& model);
void restore_parameters(Classifier& model, const std::vector<std::vector<float>>& values);

}  // namespace debias
