#include <fmt/format.h>

#include "debias/errors.hpp"
#include "debias/training.hpp"

namespace debias {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::ERM: return "ERM";
    case Method::GroupDRO: return "GroupDRO";
    case Method::RSC: return "RSC";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  if (s == "ERM" || s == "erm") return Method::ERM;
  if (s == "GroupDRO" || s == "groupdro") return Method::GroupDRO;
  if (s == "RSC" || s == "rsc") return Method::RSC;
  throw ConfigError(fmt::format("unknown training method '{}' (expected ERM, GroupDRO or RSC)", s));
}

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be non-negative");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eta_q < 0.0) throw ConfigError("eta_q must be non-negative");
  if (adjustment < 0.0) throw ConfigError("adjustment must be non-negative");
  if (!(rsc_percentile >= 0.0 && rsc_percentile < 100.0))
    throw ConfigError(fmt::format("rsc_percentile {} must lie in [0, 100)", rsc_percentile));
  if (!(rsc_fraction >= 0.0 && rsc_fraction <= 1.0)) throw ConfigError("rsc_fraction must lie in [0, 1]");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"method", std::string(to_string(c.method))},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"momentum", c.momentum},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"batch_size", c.batch_size},
       {"eta_q", c.eta_q},
       {"adjustment", c.adjustment},
       {"rsc_percentile", c.rsc_percentile},
       {"rsc_fraction", c.rsc_fraction},
       {"seed", c.seed},
       {"augmentation", c.augmentation},
       {"val_fraction", c.val_fraction},
       {"model", {{"input_size", c.model.input_size}, {"channels", c.model.channels}}},
       {"privileged", c.privileged}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.momentum = j.value("momentum", c.momentum);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.eta_q = j.value("eta_q", c.eta_q);
  c.adjustment = j.value("adjustment", c.adjustment);
  c.rsc_percentile = j.value("rsc_percentile", c.rsc_percentile);
  c.rsc_fraction = j.value("rsc_fraction", c.rsc_fraction);
  c.seed = j.value("seed", c.seed);
  if (j.contains("augmentation")) c.augmentation = j.at("augmentation").get<AugmentRecipe>();
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.model.input_size = m.value("input_size", c.model.input_size);
    if (m.contains("channels")) c.model.channels = m.at("channels").get<std::array<int, 3>>();
  }
  c.privileged = j.value("privileged", c.privileged);
}

std::uint64_t TrainConfig::hash() const { return fnv1a64(nlohmann::json(*this).dump()); }

}  // namespace debias
