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

#include <map>

#include "styleseg/errors.hpp"
#include "styleseg/experiment.hpp"

namespace styleseg {

namespace {

// Canned desk-scale experiments. Cohorts sharing a "seed" share images and
// base truths; the recipe seed varies everything. The learning rate is raised
// above the library default because 60 short epochs give only ~500 optimizer
// steps, too few for the normalization affines to drift apart at 2e-4.
const std::map<std::string, const char*>& recipes() {
  static const std::map<std::string, const char*> table{
      {"trial-cond", R"J({
  "schema_version": 1,
  "name": "trial-cond",
  "description": "Two cohorts with identical images and base truths, labeled as-is (A) or grown by one pixel (B). Single-source, naive-pooled and per-source-conditioned models are scored on both test splits under every conditioning.",
  "seed": 1,
  "train": {"lr": 0.003},
  "cohorts": [
    {"source": "A", "style": "identity", "seed": 1},
    {"source": "B", "style": "grow(1)", "seed": 1}
  ],
  "runs": [
    {"name": "single-A", "label": "Single-Trial A", "conditioning": {"kind": "naive"}, "train_on": ["A"]},
    {"name": "single-B", "label": "Single-Trial B", "conditioning": {"kind": "naive"}, "train_on": ["B"]},
    {"name": "naive", "label": "Naive-Pooling", "conditioning": {"kind": "naive"}, "train_on": ["A", "B"]},
    {"name": "conditioned", "label": "Trial-Conditioned", "conditioning": {"kind": "per_source"}, "train_on": ["A", "B"]}
  ],
  "evaluate": ["A", "B"]
})J"},
      {"group-cond", R"J({
  "schema_version": 1,
  "name": "group-cond",
  "description": "Four cohorts, two labeled as-is and two grown by one pixel. A per-source model is trained, its parameters are clustered into style groups, and a group-conditioned model is trained on the discovered partition.",
  "seed": 1,
  "train": {"lr": 0.003},
  "cohorts": [
    {"source": "A", "style": "identity", "seed": 1},
    {"source": "B", "style": "identity", "seed": 2},
    {"source": "C", "style": "grow(1)", "seed": 3},
    {"source": "D", "style": "grow(1)", "seed": 4}
  ],
  "runs": [
    {"name": "naive", "label": "Naive-Pooling", "conditioning": {"kind": "naive"}, "train_on": ["A", "B", "C", "D"]},
    {"name": "per-source", "label": "Trial-Conditioned", "conditioning": {"kind": "per_source"}, "train_on": ["A", "B", "C", "D"]},
    {"name": "grouped", "label": "Group-Conditioned", "conditioning": {"kind": "grouped", "groups_from": "per-source"}, "train_on": ["A", "B", "C", "D"]}
  ],
  "evaluate": ["A", "B", "C", "D"],
  "analysis": {"run": "per-source", "threshold": 0.5}
})J"},
      {"msl", R"J({
  "schema_version": 1,
  "name": "msl",
  "description": "One image population split into two cohorts: labels kept (orig) or with every component of at most 10 pixels removed (msl). All models are scored on the orig test split.",
  "seed": 1,
  "train": {"lr": 0.003},
  "cohorts": [
    {"source": "orig", "style": "identity", "seed": 1},
    {"source": "msl", "style": "remove_small(10)", "seed": 2}
  ],
  "runs": [
    {"name": "single-orig", "label": "Single-Trial Orig", "conditioning": {"kind": "naive"}, "train_on": ["orig"]},
    {"name": "single-msl", "label": "Single-Trial MSL", "conditioning": {"kind": "naive"}, "train_on": ["msl"]},
    {"name": "naive", "label": "Naive-Pooling", "conditioning": {"kind": "naive"}, "train_on": ["orig", "msl"]},
    {"name": "conditioned", "label": "Trial-Conditioned", "conditioning": {"kind": "per_source"}, "train_on": ["orig", "msl"], "styles": ["orig", "msl"]}
  ],
  "evaluate": ["orig"]
})J"},
      {"finetune10", R"J({
  "schema_version": 1,
  "name": "finetune10",
  "description": "A per-source model trained on cohorts A (as-is) and B (grown by one pixel) is adapted to held-out cohort C (grown by two pixels) by optimizing only a new set of normalization affines on 10 samples.",
  "seed": 1,
  "train": {"lr": 0.003},
  "cohorts": [
    {"source": "A", "style": "identity", "seed": 1},
    {"source": "B", "style": "grow(1)", "seed": 2},
    {"source": "C", "style": "grow(2)", "seed": 3}
  ],
  "runs": [
    {"name": "base", "label": "Trial-Conditioned", "conditioning": {"kind": "per_source"}, "train_on": ["A", "B"], "evaluate": ["A", "B", "C"]},
    {"name": "finetuned", "label": "Fine-Tuned on C", "finetune": {"base": "base", "source": "C", "k": 10, "init_from": "B", "train": {"epochs": 60, "lr": 0.01, "milestones": [40], "weight_decay": 0.0}}, "evaluate": ["C"]}
  ],
  "evaluate": ["C"]
})J"},
      {"gad-film", R"J({
  "schema_version": 1,
  "name": "gad-film",
  "description": "One cohort whose labels are dilated only when a bright marker blob is present in the second channel. A naive-pooled model is compared with an image-conditioned (FiLM) model on the marker and no-marker test subsets.",
  "seed": 1,
  "train": {"lr": 0.003},
  "cohorts": [
    {"source": "G", "style": "dilate_if_marker(1)", "marker_probability": 0.34, "n_samples": 100, "seed": 1}
  ],
  "runs": [
    {"name": "naive", "label": "Naive-Pooling", "conditioning": {"kind": "naive"}, "train_on": ["G"]},
    {"name": "image", "label": "Image-Conditioned", "conditioning": {"kind": "image"}, "train_on": ["G"]}
  ],
  "evaluate": ["G:no_marker", "G:marker"]
})J"},
      {"analyze", R"J({
  "schema_version": 1,
  "name": "analyze",
  "description": "Four cohorts with planted style groups {A, B} (as-is) and {C, D} (grown by one pixel). A per-source model is trained and its normalization parameters are compared across sources.",
  "seed": 1,
  "train": {"lr": 0.003},
  "cohorts": [
    {"source": "A", "style": "identity", "seed": 1},
    {"source": "B", "style": "identity", "seed": 2},
    {"source": "C", "style": "grow(1)", "seed": 3},
    {"source": "D", "style": "grow(1)", "seed": 4}
  ],
  "runs": [
    {"name": "per-source", "label": "Trial-Conditioned", "conditioning": {"kind": "per_source"}, "train_on": ["A", "B", "C", "D"]}
  ],
  "evaluate": ["A", "B", "C", "D"],
  "analysis": {"run": "per-source", "threshold": 0.5}
})J"},
  };
  return table;
}

}  // namespace

std::vector<std::string> builtin_recipe_names() {
  std::vector<std::string> names;
  for (const auto& [name, _] : recipes()) names.push_back(name);
  return names;
}

Json builtin_recipe(const std::string& name) {
  auto it = recipes().find(name);
  if (it == recipes().end()) throw ConfigError("unknown recipe '" + name + "'");
  return Json::parse(it->second);
}

}  // namespace styleseg
