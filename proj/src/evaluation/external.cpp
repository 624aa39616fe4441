#include <fmt/format.h>

#include "debias/errors.hpp"
#include "debias/evaluation.hpp"

namespace debias {

std::vector<ArtifactPrevalence> artifact_prevalence(const DatasetManifest& m) {
  std::vector<ArtifactPrevalence> out;
  const auto n_pos = static_cast<double>(m.count_label(1));
  const auto n_neg = static_cast<double>(m.count_label(0));
  for (std::size_t a = 0; a < kNumArtifacts; ++a) {
    double all = 0, pos = 0, neg = 0;
    for (const auto& r : m.records()) {
      if (!r.artifacts[a]) continue;
      ++all;
      (r.label == 1 ? pos : neg) += 1;
    }
    out.push_back({std::string(kArtifactNames[a]), m.size() ? all / static_cast<double>(m.size()) : 0.0,
                   n_neg > 0 ? neg / n_neg : 0.0, n_pos > 0 ? pos / n_pos : 0.0});
  }
  return out;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json prev = nlohmann::json::array();
  for (const auto& p : r.prevalence)
    prev.push_back({{"artifact", p.artifact}, {"overall", p.overall}, {"benign", p.benign}, {"melanoma", p.melanoma}});
  nlohmann::json preds = nlohmann::json::array();
  for (std::size_t i = 0; i < r.predictions.ids.size(); ++i)
    preds.push_back({{"id", r.predictions.ids[i]},
                     {"label", r.predictions.labels[i]},
                     {"probability", r.predictions.probabilities[i]}});
  return {{"manifest", r.manifest},
          {"auc", r.auc},
          {"n", r.n},
          {"positives", r.positives},
          {"tta_replicas", r.tta_replicas},
          {"noisecrop", r.noisecrop},
          {"fallback_masks", r.fallback_masks},
          {"model_hash", fmt::format("{:016x}", r.predictions.model_hash)},
          {"artifact_prevalence", prev},
          {"predictions", preds}};
}

EvalReport evaluate_external(Classifier& model, const DatasetManifest& external, const ExternalEvalOptions& options) {
  if (external.count_label(0) == 0 || external.count_label(1) == 0)
    throw UndefinedMetricError(fmt::format("manifest '{}' lacks one class; AUC is undefined", external.name()));
  EvalReport report;
  report.manifest = external.name();
  report.noisecrop = options.noisecrop;
  report.tta_replicas = options.tta_replicas;
  report.prevalence = artifact_prevalence(external);

  DatasetManifest evaluated = external;
  if (options.noisecrop) {
    auto nc = batch_noisecrop(external, options.noisecrop_config, options.work_dir / "noisecrop");
    if (!nc.failures.empty())
      throw IoError(fmt::format("NoiseCrop failed for {} record(s), first '{}': {}", nc.failures.size(),
                                nc.failures.front().id, nc.failures.front().error));
    report.fallback_masks = nc.fallback_count;
    evaluated = std::move(nc.manifest);
  }
  const auto images = load_image_set(evaluated, model.input_size());
  std::vector<std::size_t> idx(images.count());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  report.predictions =
      predict_tta(model, images, idx, options.tta_replicas, options.augmentation, options.seed);
  report.predictions.noisecrop = options.noisecrop;
  report.n = idx.size();
  report.positives = evaluated.count_label(1);
  report.auc = roc_auc(report.predictions);
  return report;
}

}  // namespace debias
