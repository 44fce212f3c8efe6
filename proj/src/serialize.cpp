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

#include "styleseg/serialize.hpp"

#include <algorithm>
#include <array>
#include <cstring>

#include "styleseg/errors.hpp"

namespace styleseg {

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed,
                         const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return key == a; });
    if (!known) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

Json to_json(const ConditioningMode& mode) {
  Json j;
  j["kind"] = to_string(mode.kind);
  if (mode.kind == ConditioningKind::PerSource) j["sources"] = mode.sources();
  if (mode.kind == ConditioningKind::Grouped) j["groups"] = mode.groups;
  return j;
}

ConditioningMode conditioning_from_json(const Json& j, const std::string& context) {
  reject_unknown_keys(j, {"kind", "sources", "groups"}, context);
  ConditioningMode mode;
  try {
    mode.kind = conditioning_kind_from_string(j.at("kind").get<std::string>());
    if (mode.kind == ConditioningKind::PerSource)
      mode = ConditioningMode::per_source(j.at("sources").get<std::vector<std::string>>());
    else if (mode.kind == ConditioningKind::Grouped)
      mode = ConditioningMode::grouped(
          j.at("groups").get<std::vector<std::vector<std::string>>>());
    mode.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return mode;
}

Json to_json(const ModelConfig& c) {
  Json j;
  j["in_channels"] = c.in_channels;
  j["widths"] = std::vector<Index>(c.widths.begin(), c.widths.end());
  j["dropout"] = c.dropout_p;
  j["leaky_slope"] = c.leaky_slope;
  j["conditioning"] = to_json(c.conditioning);
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_config_from_json(const Json& j, const std::string& context) {
  reject_unknown_keys(j, {"in_channels", "widths", "dropout", "leaky_slope", "conditioning", "seed"},
                      context);
  ModelConfig c;
  try {
    if (j.contains("in_channels")) c.in_channels = j["in_channels"].get<Index>();
    if (j.contains("widths")) {
      auto w = j["widths"].get<std::vector<Index>>();
      if (w.size() != kBlockCount) throw ConfigError(context + ": widths must have 7 entries");
      std::copy(w.begin(), w.end(), c.widths.begin());
    }
    if (j.contains("dropout")) c.dropout_p = j["dropout"].get<double>();
    if (j.contains("leaky_slope")) c.leaky_slope = j["leaky_slope"].get<double>();
    if (j.contains("conditioning"))
      c.conditioning = conditioning_from_json(j["conditioning"], context + ".conditioning");
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    c.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return c;
}

Json to_json(const CohortSpec& s) {
  Json j;
  j["source"] = s.source;
  j["n_samples"] = s.n_samples;
  j["style"] = to_string(s.style);
  j["lesion_count"] = {s.lesion_count_min, s.lesion_count_max};
  j["radius"] = {s.radius_min, s.radius_max};
  j["marker_probability"] = s.marker_probability;
  j["noise"] = s.noise;
  j["seed"] = s.seed;
  j["height"] = s.height;
  j["width"] = s.width;
  j["in_channels"] = s.in_channels;
  return j;
}

CohortSpec cohort_spec_from_json(const Json& j, const std::string& context) {
  reject_unknown_keys(j,
                      {"source", "n_samples", "style", "lesion_count", "radius",
                       "marker_probability", "noise", "seed", "height", "width", "in_channels"},
                      context);
  CohortSpec s;
  try {
    s.source = j.at("source").get<std::string>();
    if (j.contains("n_samples")) s.n_samples = j["n_samples"].get<Index>();
    if (j.contains("style")) s.style = parse_style(j["style"].get<std::string>());
    if (j.contains("lesion_count")) {
      const auto r = j["lesion_count"].get<std::array<Index, 2>>();
      s.lesion_count_min = r[0];
      s.lesion_count_max = r[1];
    }
    if (j.contains("radius")) {
      const auto r = j["radius"].get<std::array<double, 2>>();
      s.radius_min = r[0];
      s.radius_max = r[1];
    }
    if (j.contains("marker_probability"))
      s.marker_probability = j["marker_probability"].get<double>();
    if (j.contains("noise")) s.noise = j["noise"].get<double>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("height")) s.height = j["height"].get<Index>();
    if (j.contains("width")) s.width = j["width"].get<Index>();
    if (j.contains("in_channels")) s.in_channels = j["in_channels"].get<Index>();
    s.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return s;
}

namespace {

std::string mask_name(TrainableMask m) {
  return m == TrainableMask::Full ? "full" : "norm_affine_only";
}

}  // namespace

Json to_json(const TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["milestones"] = c.milestones;
  j["gamma"] = c.gamma;
  const AugmentConfig& a = c.augmentation;
  j["augmentation"] = {{"enabled", a.enabled},         {"rotation_deg", a.rotation_deg},
                       {"translation_px", a.translation_px}, {"scale", {a.scale_min, a.scale_max}},
                       {"gain", {a.gain_min, a.gain_max}}};
  j["seed"] = c.seed;
  j["trainable"] = mask_name(c.trainable);
  return j;
}

TrainConfig train_config_from_json(const Json& j, const std::string& context) {
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "lr", "weight_decay", "milestones", "gamma",
                       "augmentation", "seed", "trainable"},
                      context);
  TrainConfig c;
  try {
    if (j.contains("epochs")) c.epochs = j["epochs"].get<Index>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<Index>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("milestones")) c.milestones = j["milestones"].get<std::vector<Index>>();
    if (j.contains("gamma")) c.gamma = j["gamma"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("trainable")) {
      const auto m = j["trainable"].get<std::string>();
      if (m == "full")
        c.trainable = TrainableMask::Full;
      else if (m == "norm_affine_only")
        c.trainable = TrainableMask::NormAffineOnly;
      else
        throw ConfigError(context + ".trainable: expected 'full' or 'norm_affine_only'");
    }
    if (j.contains("augmentation")) {
      const Json& a = j["augmentation"];
      reject_unknown_keys(a, {"enabled", "rotation_deg", "translation_px", "scale", "gain"},
                          context + ".augmentation");
      AugmentConfig& g = c.augmentation;
      if (a.contains("enabled")) g.enabled = a["enabled"].get<bool>();
      if (a.contains("rotation_deg")) g.rotation_deg = a["rotation_deg"].get<double>();
      if (a.contains("translation_px")) g.translation_px = a["translation_px"].get<double>();
      if (a.contains("scale")) {
        const auto r = a["scale"].get<std::array<double, 2>>();
        g.scale_min = r[0];
        g.scale_max = r[1];
      }
      if (a.contains("gain")) {
        const auto r = a["gain"].get<std::array<double, 2>>();
        g.gain_min = r[0];
        g.gain_max = r[1];
      }
    }
    c.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(context + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(context + ": " + e.what());
  }
  return c;
}

}  // namespace styleseg
