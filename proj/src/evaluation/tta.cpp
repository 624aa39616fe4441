#include <algorithm>

#include "debias/errors.hpp"
#include "debias/evaluation.hpp"

namespace debias {

namespace {

std::uint64_t parameter_hash(Classifier& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : model.parameters()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value.data());
    for (std::size_t i = 0; i < p.value.size_bytes(); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace

double roc_auc(const PredictionSet& p) { return roc_auc(p.probabilities, p.labels); }

PredictionSet predict_tta(Classifier& model, const ImageSet& images, std::span<const std::size_t> idx, int n_replicas,
                          const AugmentRecipe& augmentation, std::uint64_t seed) {
  if (n_replicas < 1) throw ConfigError("predict_tta: n_replicas must be at least 1");
  PredictionSet out;
  out.tta_replicas = n_replicas;
  out.model_hash = parameter_hash(model);
  out.probabilities.assign(idx.size(), 0.0);
  for (auto i : idx) {
    out.ids.push_back(images.ids[i]);
    out.labels.push_back(images.labels[i]);
  }

  constexpr std::size_t kChunk = 64;
  const std::size_t ss = images.sample_size();
  for (std::size_t b = 0; b < idx.size(); b += kChunk) {
    const std::size_t bs = std::min(kChunk, idx.size() - b);
    std::vector<std::uint64_t> sample_seeds;
    for (std::size_t k = 0; k < bs; ++k) sample_seeds.push_back(derive_seed(seed, images.ids[idx[b + k]]));
    Tensor4 batch(static_cast<int>(bs), images.channels, images.size, images.size);
    for (int r = 0; r < n_replicas; ++r) {
      for (std::size_t k = 0; k < bs; ++k) {
        Rng rng(derive_seed(sample_seeds[k], static_cast<std::uint64_t>(r)));
        augment_image(images.sample(idx[b + k]), batch.data.data() + k * ss, images.channels, images.size,
                      augmentation, rng);
      }
      const auto p = model.predict_proba(batch);
      for (std::size_t k = 0; k < bs; ++k) out.probabilities[b + k] += p[k];
    }
  }
  for (auto& p : out.probabilities) p /= n_replicas;
  return out;
}

}  // namespace debias
