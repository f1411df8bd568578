#pragma once

#include <json.hpp>

#include "icehrnet/model.hpp"
#include "icehrnet/training.hpp"

namespace icehrnet {

// JSON mirrors of the configuration structs. Readers start from `base` and
// override only the keys that are present; unknown keys are rejected.
nlohmann::json seg_config_to_json(const SegConfig& c);
SegConfig seg_config_from_json(const nlohmann::json& j, const SegConfig& base = SegConfig{});

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = TrainConfig{});

nlohmann::json report_to_json(const EvalReport& r);

}  // namespace icehrnet
