#include "euda/config.hpp"

#include <json.hpp>

#include "euda/error.hpp"

namespace euda {
namespace {

using nlohmann::json;

template <class T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("invalid config field '" + std::string(key) + "': wrong type");
  }
}

std::size_t count_field(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("invalid config field '" + std::string(key) + "': must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

std::string bottleneck_to_string(const BottleneckConfig& cfg) {
  if (cfg == BottleneckConfig::small()) return "S";
  if (cfg == BottleneckConfig::base()) return "B";
  if (cfg == BottleneckConfig::large()) return "L";
  if (cfg == BottleneckConfig::huge()) return "H";
  std::string out = "custom:";
  for (std::size_t i = 0; i < cfg.hidden_sizes.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(cfg.hidden_sizes[i]);
  }
  return out;
}

TrainConfig parse_config(std::string_view json_text, TrainConfig cfg) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  for (const auto& [key, value] : j.items()) {
    if (key == "lambda") {
      cfg.lambda = field<double>(j, "lambda");
    } else if (key == "lr0") {
      cfg.lr0 = field<double>(j, "lr0");
    } else if (key == "gamma") {
      cfg.gamma = field<double>(j, "gamma");
    } else if (key == "alpha") {
      cfg.alpha = field<double>(j, "alpha");
    } else if (key == "momentum") {
      cfg.momentum = field<double>(j, "momentum");
    } else if (key == "weight_decay") {
      cfg.weight_decay = field<double>(j, "weight_decay");
    } else if (key == "epochs") {
      cfg.epochs = count_field(j, "epochs");
    } else if (key == "batch_size") {
      cfg.batch_size = count_field(j, "batch_size");
    } else if (key == "seed") {
      cfg.seed = field<std::uint64_t>(j, "seed");
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = count_field(j, "checkpoint_every");
    } else if (key == "kernel") {
      const auto name = field<std::string>(j, "kernel");
      if (name == "linear") {
        cfg.kernel.family = KernelFamily::kLinear;
      } else if (name == "rbf") {
        cfg.kernel.family = KernelFamily::kRbfMulti;
      } else {
        throw ConfigError("invalid config field 'kernel': expected rbf or linear");
      }
    } else if (key == "bandwidths" || key == "median_multipliers" || key == "bottleneck" || key == "estimator") {
      // handled below, after the kernel family is known
    } else {
      throw ConfigError("unknown config field '" + key + "'");
    }
  }

  if (j.contains("median_multipliers")) {
    cfg.kernel.multipliers = field<std::vector<double>>(j, "median_multipliers");
    cfg.kernel.bandwidth_mode = BandwidthMode::kMedianTimes;
  }
  if (j.contains("bandwidths")) {
    cfg.kernel.bandwidths = field<std::vector<double>>(j, "bandwidths");
    cfg.kernel.bandwidth_mode = BandwidthMode::kExplicit;
  }
  if (j.contains("bottleneck")) {
    const auto& b = j.at("bottleneck");
    if (b.is_string()) {
      try {
        cfg.bottleneck = BottleneckConfig::parse(b.get<std::string>());
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("invalid config field 'bottleneck': ") + e.what());
      }
    } else {
      cfg.bottleneck.hidden_sizes = field<std::vector<std::size_t>>(j, "bottleneck");
    }
  }
  if (j.contains("estimator")) {
    const auto name = field<std::string>(j, "estimator");
    if (name == "biased") {
      cfg.estimator = Estimator::kBiased;
    } else if (name == "unbiased") {
      cfg.estimator = Estimator::kUnbiased;
    } else {
      throw ConfigError("invalid config field 'estimator': expected biased or unbiased");
    }
  }
  cfg.validate();
  return cfg;
}

std::string config_to_json(const TrainConfig& cfg) {
  json j;
  j["lambda"] = cfg.lambda;
  j["lr0"] = cfg.lr0;
  j["gamma"] = cfg.gamma;
  j["alpha"] = cfg.alpha;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["kernel"] = cfg.kernel.family == KernelFamily::kLinear ? "linear" : "rbf";
  if (cfg.kernel.family == KernelFamily::kRbfMulti) {
    if (cfg.kernel.bandwidth_mode == BandwidthMode::kExplicit) {
      j["bandwidths"] = cfg.kernel.bandwidths;
    } else {
      j["median_multipliers"] = cfg.kernel.multipliers;
    }
  }
  j["bottleneck"] = bottleneck_to_string(cfg.bottleneck);
  j["estimator"] = cfg.estimator == Estimator::kBiased ? "biased" : "unbiased";
  return j.dump(2);
}

std::string metrics_to_json(const MetricsRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["lr"] = r.lr;
  j["loss_total"] = r.loss_total;
  j["loss_ce"] = r.loss_ce;
  j["loss_mmd"] = r.loss_mmd;
  j["source_batch_accuracy"] = r.source_batch_accuracy;
  j["target_accuracy"] = r.target_accuracy ? json(*r.target_accuracy) : json(nullptr);
  return j.dump();
}

MetricsRecord metrics_from_json(std::string_view line) {
  const json j = json::parse(line);
  MetricsRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.step = j.at("step").get<std::size_t>();
  r.lr = j.at("lr").get<double>();
  r.loss_total = j.at("loss_total").get<double>();
  r.loss_ce = j.at("loss_ce").get<double>();
  r.loss_mmd = j.at("loss_mmd").get<double>();
  r.source_batch_accuracy = j.at("source_batch_accuracy").get<double>();
  if (!j.at("target_accuracy").is_null()) r.target_accuracy = j.at("target_accuracy").get<double>();
  return r;
}

}  // namespace euda
