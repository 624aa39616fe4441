#pragma once

#include <array>
#include <cstdint>

#include "debias/classifier.hpp"

namespace debias {

struct SmallCnnSpec {
  int input_size = 32;
  int input_channels = 3;
  // Output channels of the three conv blocks; the last is the feature size.
  std::array<int, 3> channels{16, 32, 64};
};

/// Three 3x3 conv blocks (conv-ReLU-maxpool, conv-ReLU-maxpool, conv-ReLU),
/// global average pooling, linear head. Layers: "block1", "block2", "block3".
class SmallCnn final : public Classifier {
 public:
  SmallCnn(const SmallCnnSpec& spec, std::uint64_t seed);

  int input_channels() const override { return spec_.input_channels; }
  int input_size() const override { return spec_.input_size; }
  const SmallCnnSpec& spec() const { return spec_; }

  Matrix extract(const Tensor4& x) override;
  void backprop_features(const Matrix& dz) override;
  Tensor4 layer_activation(const Tensor4& x, std::string_view layer) override;
  std::vector<std::string> layer_names() const override { return {"block1", "block2", "block3"}; }
  nlohmann::json architecture() const override;

 protected:
  std::vector<ParamView> extractor_parameters() override;

 private:
  // Activations are stored channel-major across the batch (C x N x H x W) so
  // each conv is a single GEMM over the whole batch.
  struct Act {
    int c = 0, n = 0, h = 0, w = 0;
    std::vector<float> v;
  };
  struct Conv {
    int cin = 0, cout = 0;
    Matrix w;  // cout x cin*9
    std::vector<float> b;
    Matrix w_grad;
    std::vector<float> b_grad;
    // cache
    Matrix cols;
    Act out;  // post-ReLU
  };
  struct Pool {
    Act out;
    std::vector<std::uint32_t> argmax;
    int in_h = 0, in_w = 0;
  };

  void conv_forward(Conv& conv, const Act& in, bool cache);
  Act conv_backward(Conv& conv, const Act& in_shape, const Act& dout);
  static void pool_forward(Pool& pool, const Act& in);
  static Act pool_backward(const Pool& pool, const Act& dout, const Act& in_shape);
  Matrix pool_features(const Act& a) const;

  SmallCnnSpec spec_;
  std::array<Conv, 3> convs_;
  std::array<Pool, 2> pools_;
  Act input_;
};

std::unique_ptr<Classifier> make_classifier(const nlohmann::json& architecture, std::uint64_t seed);

}  // namespace debias
