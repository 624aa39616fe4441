#include "support.hpp"

#include <unistd.h>

#include <cmath>

#include <fmt/format.h>

#include "debias/contingency.hpp"

namespace fs = std::filesystem;

namespace testing {

TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  path_ = fs::temp_directory_path() /
          fmt::format("debias-test-{}-{}-{}", tag, static_cast<long>(::getpid()), counter++);
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

debias::DatasetManifest make_manifest(const std::vector<int>& labels, const std::vector<std::uint8_t>& masks,
                                      const std::string& name) {
  std::vector<debias::SampleRecord> records;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    debias::SampleRecord r;
    r.id = fmt::format("s{:05d}", i);
    r.image_path = "images/" + r.id + ".png";
    r.label = labels[i];
    r.artifacts = debias::ArtifactVector::from_bitmask(masks[i]);
    records.push_back(std::move(r));
  }
  return debias::DatasetManifest(name, std::move(records));
}

debias::DatasetManifest random_manifest(std::size_t n, const std::vector<double>& rho,
                                        const std::vector<double>& marginal, std::uint64_t seed, double prevalence) {
  debias::Rng rng(seed);
  std::vector<debias::ArtifactConditionals> cond;
  for (std::size_t a = 0; a < rho.size(); ++a) cond.push_back(debias::solve_contingency(rho[a], marginal[a], prevalence));
  std::vector<int> labels;
  std::vector<std::uint8_t> masks;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.bernoulli(prevalence) ? 1 : 0;
    std::uint8_t m = 0;
    for (std::size_t a = 0; a < cond.size(); ++a)
      if (rng.bernoulli(y ? cond[a].given_positive : cond[a].given_negative)) m |= static_cast<std::uint8_t>(1u << a);
    labels.push_back(y);
    masks.push_back(m);
  }
  return make_manifest(labels, masks, "random");
}

LinearProbe::LinearProbe(int channels, int size, int d, std::uint64_t seed)
    : Classifier(d), channels_(channels), size_(size) {
  const int in = channels * size * size;
  w_ = debias::Matrix(d, in);
  w_grad_ = debias::Matrix::Zero(d, in);
  debias::Rng rng(seed);
  for (int i = 0; i < w_.size(); ++i) w_.data()[i] = static_cast<float>(0.1 * rng.normal());
  debias::init_head(*this, debias::derive_seed(seed, "head"));
}

debias::Matrix LinearProbe::extract(const debias::Tensor4& x) {
  x_ = debias::ConstMatrixMap(x.data.data(), x.n, static_cast<long>(x.sample_size()));
  return x_ * w_.transpose();
}

void LinearProbe::backprop_features(const debias::Matrix& dz) { w_grad_ += dz.transpose() * x_; }

debias::Tensor4 LinearProbe::layer_activation(const debias::Tensor4& x, std::string_view) {
  const debias::Matrix z = extract(x);
  debias::Tensor4 t(x.n, feature_dim(), 1, 1);
  std::copy(z.data(), z.data() + z.size(), t.data.begin());
  return t;
}

std::vector<debias::ParamView> LinearProbe::extractor_parameters() {
  return {{"probe.weight", {w_.data(), static_cast<std::size_t>(w_.size())},
           {w_grad_.data(), static_cast<std::size_t>(w_grad_.size())}}};
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace testing
