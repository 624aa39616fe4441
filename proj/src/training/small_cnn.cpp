#include "debias/small_cnn.hpp"

#include <fmt/format.h>

#include <cmath>

#include "debias/errors.hpp"
#include "debias/random.hpp"

namespace debias {

SmallCnn::SmallCnn(const SmallCnnSpec& spec, std::uint64_t seed)
    : Classifier(spec.channels[2]), spec_(spec) {
  if (spec.input_size % 4 != 0 || spec.input_size < 8)
    throw ConfigError(fmt::format("SmallCnn input size {} must be a multiple of 4 and >= 8", spec.input_size));
  int cin = spec.input_channels;
  for (int l = 0; l < 3; ++l) {
    auto& c = convs_[l];
    c.cin = cin;
    c.cout = spec.channels[l];
    c.w.resize(c.cout, c.cin * 9);
    c.w_grad = Matrix::Zero(c.cout, c.cin * 9);
    c.b.assign(c.cout, 0.0f);
    c.b_grad.assign(c.cout, 0.0f);
    Rng rng(derive_seed(seed, fmt::format("conv{}", l)));
    const double std = std::sqrt(2.0 / (c.cin * 9));
    for (int i = 0; i < c.w.size(); ++i) c.w.data()[i] = static_cast<float>(rng.normal() * std);
    cin = c.cout;
  }
  init_head(*this, seed);
}

nlohmann::json SmallCnn::architecture() const {
  return {{"type", "small_cnn"},
          {"input_size", spec_.input_size},
          {"input_channels", spec_.input_channels},
          {"channels", spec_.channels}};
}

std::vector<ParamView> SmallCnn::extractor_parameters() {
  std::vector<ParamView> out;
  for (int l = 0; l < 3; ++l) {
    auto& c = convs_[l];
    out.push_back({fmt::format("block{}.conv.weight", l + 1),
                   {c.w.data(), static_cast<std::size_t>(c.w.size())},
                   {c.w_grad.data(), static_cast<std::size_t>(c.w_grad.size())}});
    out.push_back({fmt::format("block{}.conv.bias", l + 1), c.b, c.b_grad});
  }
  return out;
}

namespace {

// cols[(ci*9 + ky*3 + kx), (n*h + y)*w + x] = in[ci, n, y+ky-1, x+kx-1]
void im2col(const std::vector<float>& in, int c, int n, int h, int w, Matrix& cols) {
  const int hw = h * w;
  cols.resize(c * 9, static_cast<Eigen::Index>(n) * hw);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        float* row = cols.row(ci * 9 + ky * 3 + kx).data();
        for (int ni = 0; ni < n; ++ni) {
          const float* src = in.data() + (static_cast<std::size_t>(ci) * n + ni) * hw;
          float* dst = row + static_cast<std::size_t>(ni) * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            float* d = dst + y * w;
            if (sy < 0 || sy >= h) {
              std::fill(d, d + w, 0.0f);
              continue;
            }
            const float* s = src + sy * w;
            for (int x = 0; x < w; ++x) {
              const int sx = x + kx - 1;
              d[x] = (sx >= 0 && sx < w) ? s[sx] : 0.0f;
            }
          }
        }
      }
}

void col2im(const Matrix& cols, int c, int n, int h, int w, std::vector<float>& out) {
  const int hw = h * w;
  out.assign(static_cast<std::size_t>(c) * n * hw, 0.0f);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const float* row = cols.row(ci * 9 + ky * 3 + kx).data();
        for (int ni = 0; ni < n; ++ni) {
          float* dst = out.data() + (static_cast<std::size_t>(ci) * n + ni) * hw;
          const float* src = row + static_cast<std::size_t>(ni) * hw;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int x = 0; x < w; ++x) {
              const int sx = x + kx - 1;
              if (sx >= 0 && sx < w) dst[sy * w + sx] += src[y * w + x];
            }
          }
        }
      }
}

}  // namespace

void SmallCnn::conv_forward(Conv& conv, const Act& in, bool cache) {
  Matrix local;
  Matrix& cols = cache ? conv.cols : local;
  im2col(in.v, in.c, in.n, in.h, in.w, cols);
  const Eigen::Index spatial = static_cast<Eigen::Index>(in.n) * in.h * in.w;
  conv.out.c = conv.cout;
  conv.out.n = in.n;
  conv.out.h = in.h;
  conv.out.w = in.w;
  conv.out.v.resize(static_cast<std::size_t>(conv.cout) * spatial);
  MatrixMap out(conv.out.v.data(), conv.cout, spatial);
  out.noalias() = conv.w * cols;
  for (int co = 0; co < conv.cout; ++co) {
    float* r = out.row(co).data();
    const float b = conv.b[co];
    for (Eigen::Index i = 0; i < spatial; ++i) r[i] = std::max(0.0f, r[i] + b);
  }
}

SmallCnn::Act SmallCnn::conv_backward(Conv& conv, const Act& in_shape, const Act& dout_in) {
  const Eigen::Index spatial = static_cast<Eigen::Index>(dout_in.n) * dout_in.h * dout_in.w;
  Matrix dout(conv.cout, spatial);
  const float* o = conv.out.v.data();
  const float* g = dout_in.v.data();
  for (Eigen::Index i = 0; i < dout.size(); ++i) dout.data()[i] = o[i] > 0.0f ? g[i] : 0.0f;

  conv.w_grad.noalias() += dout * conv.cols.transpose();
  for (int co = 0; co < conv.cout; ++co) conv.b_grad[co] += dout.row(co).sum();

  Act din;
  if (&conv == &convs_[0]) return din;  // input gradient is not needed
  Matrix dcols = conv.w.transpose() * dout;
  din.c = in_shape.c;
  din.n = in_shape.n;
  din.h = in_shape.h;
  din.w = in_shape.w;
  col2im(dcols, din.c, din.n, din.h, din.w, din.v);
  return din;
}

void SmallCnn::pool_forward(Pool& pool, const Act& in) {
  pool.in_h = in.h;
  pool.in_w = in.w;
  const int oh = in.h / 2, ow = in.w / 2;
  pool.out.c = in.c;
  pool.out.n = in.n;
  pool.out.h = oh;
  pool.out.w = ow;
  const std::size_t planes = static_cast<std::size_t>(in.c) * in.n;
  pool.out.v.resize(planes * oh * ow);
  pool.argmax.resize(pool.out.v.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = in.v.data() + p * in.h * in.w;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        std::uint32_t best = (2 * y) * in.w + 2 * x;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::uint32_t idx = (2 * y + dy) * in.w + 2 * x + dx;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = p * oh * ow + y * ow + x;
        pool.out.v[o] = src[best];
        pool.argmax[o] = best;
      }
  }
}

SmallCnn::Act SmallCnn::pool_backward(const Pool& pool, const Act& dout, const Act& in_shape) {
  Act din;
  din.c = in_shape.c;
  din.n = in_shape.n;
  din.h = pool.in_h;
  din.w = pool.in_w;
  din.v.assign(static_cast<std::size_t>(din.c) * din.n * din.h * din.w, 0.0f);
  const std::size_t per_out = static_cast<std::size_t>(dout.h) * dout.w;
  const std::size_t per_in = static_cast<std::size_t>(din.h) * din.w;
  for (std::size_t o = 0; o < dout.v.size(); ++o) {
    const std::size_t plane = o / per_out;
    din.v[plane * per_in + pool.argmax[o]] += dout.v[o];
  }
  return din;
}

Matrix SmallCnn::pool_features(const Act& a) const {
  Matrix z(a.n, a.c);
  const std::size_t hw = static_cast<std::size_t>(a.h) * a.w;
  for (int c = 0; c < a.c; ++c)
    for (int n = 0; n < a.n; ++n) {
      const float* p = a.v.data() + (static_cast<std::size_t>(c) * a.n + n) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
      z(n, c) = static_cast<float>(s / static_cast<double>(hw));
    }
  return z;
}

namespace {

template <typename ActT>
void to_channel_major(const Tensor4& x, ActT& a) {
  a.c = x.c;
  a.n = x.n;
  a.h = x.h;
  a.w = x.w;
  const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
  a.v.resize(x.data.size());
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      std::copy_n(x.data.data() + (static_cast<std::size_t>(n) * x.c + c) * hw, hw,
                  a.v.data() + (static_cast<std::size_t>(c) * x.n + n) * hw);
}

}  // namespace

Matrix SmallCnn::extract(const Tensor4& x) {
  if (x.c != spec_.input_channels || x.h != spec_.input_size || x.w != spec_.input_size)
    throw ValidationError(fmt::format("SmallCnn expects {}x{}x{} input, got {}x{}x{}", spec_.input_channels,
                                      spec_.input_size, spec_.input_size, x.c, x.h, x.w));
  to_channel_major(x, input_);
  conv_forward(convs_[0], input_, true);
  pool_forward(pools_[0], convs_[0].out);
  conv_forward(convs_[1], pools_[0].out, true);
  pool_forward(pools_[1], convs_[1].out);
  conv_forward(convs_[2], pools_[1].out, true);
  return pool_features(convs_[2].out);
}

void SmallCnn::backprop_features(const Matrix& dz) {
  const Act& a3 = convs_[2].out;
  Act d3;
  d3.c = a3.c;
  d3.n = a3.n;
  d3.h = a3.h;
  d3.w = a3.w;
  const std::size_t hw = static_cast<std::size_t>(a3.h) * a3.w;
  d3.v.resize(a3.v.size());
  const float inv = 1.0f / static_cast<float>(hw);
  for (int c = 0; c < a3.c; ++c)
    for (int n = 0; n < a3.n; ++n) {
      float* p = d3.v.data() + (static_cast<std::size_t>(c) * a3.n + n) * hw;
      std::fill(p, p + hw, dz(n, c) * inv);
    }
  Act d2p = conv_backward(convs_[2], pools_[1].out, d3);
  Act d2 = pool_backward(pools_[1], d2p, convs_[1].out);
  Act d1p = conv_backward(convs_[1], pools_[0].out, d2);
  Act d1 = pool_backward(pools_[0], d1p, convs_[0].out);
  conv_backward(convs_[0], input_, d1);
}

Tensor4 SmallCnn::layer_activation(const Tensor4& x, std::string_view layer) {
  int upto = -1;
  if (layer == "block1") upto = 0;
  else if (layer == "block2") upto = 1;
  else if (layer == "block3") upto = 2;
  else throw ValidationError(fmt::format("SmallCnn has no layer '{}'", layer));

  Act in;
  to_channel_major(x, in);
  for (int l = 0; l <= upto; ++l) {
    conv_forward(convs_[l], in, false);
    in = convs_[l].out;
    if (l < 2 && l < upto) {
      Pool p;
      pool_forward(p, in);
      in = std::move(p.out);
    }
  }
  Tensor4 out(in.n, in.c, in.h, in.w);
  const std::size_t hw = static_cast<std::size_t>(in.h) * in.w;
  for (int c = 0; c < in.c; ++c)
    for (int n = 0; n < in.n; ++n)
      std::copy_n(in.v.data() + (static_cast<std::size_t>(c) * in.n + n) * hw, hw,
                  out.data.data() + (static_cast<std::size_t>(n) * in.c + c) * hw);
  return out;
}

std::unique_ptr<Classifier> make_classifier(const nlohmann::json& arch, std::uint64_t seed) {
  const auto type = arch.value("type", std::string("small_cnn"));
  if (type != "small_cnn") throw ConfigError(fmt::format("unknown classifier type '{}'", type));
  SmallCnnSpec spec;
  spec.input_size = arch.value("input_size", spec.input_size);
  spec.input_channels = arch.value("input_channels", spec.input_channels);
  if (arch.contains("channels")) spec.channels = arch.at("channels").get<std::array<int, 3>>();
  return std::make_unique<SmallCnn>(spec, seed);
}

}  // namespace debias
