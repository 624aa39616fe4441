#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <map>

#include "debias/errors.hpp"
#include "debias/metrics.hpp"
#include "debias/training.hpp"

namespace debias {

nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json groups = nlohmann::json::object();
  for (const auto& [k, v] : m.group_losses) groups[k] = v;
  nlohmann::json j{{"epoch", m.epoch},
                   {"train_loss", m.train_loss},
                   {"val_auc", m.val_auc},
                   {"group_losses", groups}};
  if (!m.q.empty()) j["q"] = m.q;
  return j;
}

bool EarlyStopper::update(int epoch, double score) {
  improved_ = score > best_;
  if (improved_) {
    best_ = score;
    best_epoch_ = epoch;
    return false;
  }
  return epoch - best_epoch_ >= patience_;
}

nlohmann::json run_summary(const TrainRun& run) {
  return {{"config", run.config},
          {"best_epoch", run.best_epoch},
          {"best_val_auc", run.best_val_auc},
          {"epochs_run", run.epochs.size()},
          {"wall_seconds", run.wall_seconds},
          {"n_train", run.train_ids.size()},
          {"n_val", run.val_ids.size()},
          {"read_test_labels", run.read_test_labels},
          {"privileged", run.config.privileged}};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> carve_validation(
    const ImageSet& images, std::span<const std::size_t> train_idx, double val_fraction, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "validation-carve"));
  std::vector<std::size_t> fit, val;
  for (int c = 0; c < 2; ++c) {
    std::vector<std::size_t> members;
    for (auto i : train_idx)
      if (images.labels[i] == c) members.push_back(i);
    shuffle(members.begin(), members.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(members.size())));
    val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    fit.insert(fit.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(fit.begin(), fit.end());
  std::sort(val.begin(), val.end());
  return {fit, val};
}

std::vector<double> predict(Classifier& model, const ImageSet& images, std::span<const std::size_t> idx,
                            int batch_size) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    const auto chunk = idx.subspan(b, std::min<std::size_t>(batch_size, idx.size() - b));
    const auto p = model.predict_proba(images.gather(chunk));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

TrainRun train(const ImageSet& images, std::span<const std::size_t> train_idx, const EnvironmentPartition* envs,
               const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_idx.empty()) throw ValidationError("train: empty training set");
  if (config.model.input_size != images.size)
    throw ConfigError(fmt::format("model input size {} differs from loaded image size {}", config.model.input_size,
                                  images.size));
  if (config.method == Method::GroupDRO && envs == nullptr)
    throw ValidationError("GroupDRO training requires an environment partition");

  const auto t0 = std::chrono::steady_clock::now();
  TrainRun run;
  run.config = config;

  auto [fit, val] = carve_validation(images, train_idx, config.val_fraction, config.seed);
  std::vector<int> val_labels;
  for (auto i : val) val_labels.push_back(images.labels[i]);
  if (std::count(val_labels.begin(), val_labels.end(), 1) == 0 ||
      std::count(val_labels.begin(), val_labels.end(), 0) == 0)
    throw ValidationError("validation set is missing a class; validation AUC is undefined");
  if (fit.empty()) throw ValidationError("no training samples left after the validation carve");
  for (auto i : fit) run.train_ids.push_back(images.ids[i]);
  for (auto i : val) run.val_ids.push_back(images.ids[i]);

  GroupWeights weights;
  if (config.method == Method::GroupDRO) {
    std::map<int, std::size_t> sizes;
    for (auto i : fit) {
      const auto key = EnvironmentKey::from_code(images.env_codes[i]);
      if (envs->group_size(key) == 0)
        throw IntegrityError(fmt::format("sample '{}' belongs to environment {} absent from the partition",
                                         images.ids[i], key.to_string()));
      ++sizes[images.env_codes[i]];
    }
    std::vector<EnvironmentKey> keys;
    std::vector<std::size_t> counts;
    for (auto [code, n] : sizes) {
      keys.push_back(EnvironmentKey::from_code(code));
      counts.push_back(n);
    }
    weights = GroupWeights(std::move(keys), std::move(counts), config.eta_q, config.adjustment);
  }

  SmallCnnSpec spec = config.model;
  spec.input_channels = images.channels;
  auto model = std::make_unique<SmallCnn>(spec, derive_seed(config.seed, "init"));
  Sgd opt({config.learning_rate, config.momentum, config.weight_decay});
  Rng rsc_rng(derive_seed(config.seed, "rsc"));
  const RscParams rsc{config.rsc_percentile, config.rsc_fraction};

  std::ofstream metrics_out;
  if (options.metrics_path) {
    if (options.metrics_path->has_parent_path()) std::filesystem::create_directories(options.metrics_path->parent_path());
    metrics_out.open(*options.metrics_path, std::ios::app);
    if (!metrics_out) throw IoError(fmt::format("cannot open metrics file '{}'", options.metrics_path->string()));
  }

  EarlyStopper stopper(config.patience);
  std::vector<std::vector<float>> best_params = snapshot_parameters(*model);
  const std::size_t sample_size = images.sample_size();

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto e0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = fit;
    Rng order_rng(derive_seed(config.seed, fmt::format("epoch-{}", epoch)));
    shuffle(order.begin(), order.end(), order_rng);
    Rng aug_rng(derive_seed(config.seed, fmt::format("augment-{}", epoch)));

    double loss_sum = 0.0;
    std::map<int, std::pair<double, int>> group_acc;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t bs = std::min<std::size_t>(config.batch_size, order.size() - b);
      Batch batch;
      batch.images = Tensor4(static_cast<int>(bs), images.channels, images.size, images.size);
      for (std::size_t k = 0; k < bs; ++k) {
        const auto i = order[b + k];
        augment_image(images.sample(i), batch.images.data.data() + k * sample_size, images.channels, images.size,
                      config.augmentation, aug_rng);
        batch.labels.push_back(images.labels[i]);
        batch.env_codes.push_back(images.env_codes[i]);
      }

      std::vector<double> losses;
      switch (config.method) {
        case Method::ERM: losses = erm_step(*model, opt, batch).sample_losses; break;
        case Method::GroupDRO: losses = groupdro_step(*model, opt, batch, weights).sample_losses; break;
        case Method::RSC: losses = rsc_step(*model, opt, batch, rsc, rsc_rng).sample_losses; break;
      }
      for (std::size_t k = 0; k < bs; ++k) {
        loss_sum += losses[k];
        auto& acc = group_acc[batch.env_codes[k]];
        acc.first += losses[k];
        ++acc.second;
      }
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(order.size());
    for (const auto& [code, acc] : group_acc)
      m.group_losses.emplace_back(EnvironmentKey::from_code(code).to_string(), acc.first / acc.second);
    if (config.method == Method::GroupDRO) m.q = weights.weights();
    const auto val_scores = predict(*model, images, val);
    m.val_auc = roc_auc(val_scores, val_labels);
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();

    const bool stop = stopper.update(epoch, m.val_auc);
    if (stopper.improved()) best_params = snapshot_parameters(*model);
    if (metrics_out.is_open()) metrics_out << to_json(m).dump() << '\n' << std::flush;
    if (options.on_epoch) options.on_epoch(m);
    run.epochs.push_back(std::move(m));
    if (stop) break;
  }

  restore_parameters(*model, best_params);
  run.best_epoch = stopper.best_epoch();
  run.best_val_auc = stopper.best_score();
  run.model = std::move(model);
  run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

TrainRun train(const DatasetManifest& m, const TrapSplit& split, const EnvironmentPartition* envs,
               const TrainConfig& config, const TrainOptions& options) {
  std::vector<std::size_t> idx;
  for (const auto& id : split.train_ids) idx.push_back(m.require(id));
  const auto train_side = subset(m, idx, m.name() + "-train");
  const auto images = load_image_set(train_side, config.model.input_size);
  std::vector<std::size_t> all(train_side.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return train(images, all, envs, config, options);
}

}  // namespace debias
