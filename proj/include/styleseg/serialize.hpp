// Copyright 2026 The StyleSeg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "styleseg/model.hpp"
#include "styleseg/synth.hpp"
#include "styleseg/training.hpp"

namespace styleseg {

using Json = nlohmann::ordered_json;

// Throws ConfigError naming `context` for any key not in `allowed`.
void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed,
                         const std::string& context);

Json to_json(const ConditioningMode& mode);
ConditioningMode conditioning_from_json(const Json& j, const std::string& context);

Json to_json(const ModelConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const Json& j, const std::string& context);

Json to_json(const CohortSpec& spec);
// `source` is required; everything else defaults.
CohortSpec cohort_spec_from_json(const Json& j, const std::string& context);

Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j, const std::string& context);

}  // namespace styleseg
