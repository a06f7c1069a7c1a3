#pragma once

#include <string>
#include <string_view>

#include "euda/trainer.hpp"

namespace euda {

// Flat snake_case JSON object mirroring TrainConfig. Keys that are absent keep
// the value from `base`; unknown keys and out-of-range values raise ConfigError
// naming the field.
//
//   lambda, lr0, gamma, alpha, momentum, weight_decay, epochs, batch_size, seed,
//   kernel ("rbf" | "linear"), bandwidths [sigmas], median_multipliers [m],
//   bottleneck ("S" | "B" | "L" | "H" | "custom:a,b,c"), estimator
//   ("biased" | "unbiased"), checkpoint_every
TrainConfig parse_config(std::string_view json_text, TrainConfig base = {});

std::string config_to_json(const TrainConfig& cfg);

std::string bottleneck_to_string(const BottleneckConfig& cfg);

// One line of the metrics log (no trailing newline).
std::string metrics_to_json(const MetricsRecord& record);
MetricsRecord metrics_from_json(std::string_view line);

}  // namespace euda
