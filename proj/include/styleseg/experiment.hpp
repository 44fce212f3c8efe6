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

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "styleseg/analysis.hpp"
#include "styleseg/serialize.hpp"
#include "styleseg/training.hpp"

namespace styleseg {

inline constexpr int kRecipeSchemaVersion = 1;

// How a run picks its conditioning. Per-source runs condition on their
// training cohorts; grouped runs take a partition literally or from the
// subgroup discovery of an earlier per-source run.
struct RunConditioning {
  ConditioningKind kind = ConditioningKind::Naive;
  std::vector<std::vector<std::string>> groups;
  std::string groups_from;  // run name, Grouped only
};

struct FinetuneSpec {
  std::string base;    // earlier per-source run
  std::string source;  // cohort to adapt to
  Index k = 10;
  std::optional<std::string> init_from;
  TrainConfig train;  // trainable mask is forced to norm_affine_only
};

struct RunSpec {
  std::string name;
  std::string label;  // free text for result tables
  RunConditioning conditioning;
  std::vector<std::string> train_on;
  std::optional<FinetuneSpec> finetune;
  std::vector<std::string> styles;    // default derived from conditioning
  std::vector<std::string> evaluate;  // default: recipe-level list
};

struct AnalysisSpec {
  std::string run;
  double threshold = kDefaultGroupThreshold;
};

// A complete experiment: cohorts, shared model/train settings, runs, and
// the evaluation layout. Evaluation cohort entries are cohort ids,
// optionally suffixed ":marker" or ":no_marker" to score a subset of the
// test split (thresholds still come from the full validation split).
struct ExperimentRecipe {
  std::string name;
  std::string description;
  std::uint64_t seed = 0;
  std::vector<CohortSpec> cohorts;
  ModelConfig model;  // conditioning and seed are set per run
  TrainConfig train;
  std::vector<RunSpec> runs;
  std::vector<std::string> evaluate;
  std::optional<AnalysisSpec> analysis;

  // Throws ConfigError for dangling references and inconsistent settings.
  void validate() const;
  const CohortSpec& cohort(const std::string& source) const;
  // Styles a run is queried with after defaults are applied.
  std::vector<std::string> styles_of(const RunSpec& run) const;
  std::vector<std::string> evaluate_of(const RunSpec& run) const;
};

Json to_json(const ExperimentRecipe& recipe);
ExperimentRecipe recipe_from_json(const Json& j);

// Applies "a.b.0.c=value" overrides; values parse as JSON, else as strings.
void apply_override(Json& config, const std::string& assignment);

// Accepts a recipe document or a run-manifest (whose "recipe" is used).
ExperimentRecipe load_recipe(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides = {},
                             std::optional<std::uint64_t> seed = std::nullopt);

// Same, for an already parsed document.
ExperimentRecipe resolve_recipe(Json document, const std::vector<std::string>& overrides = {},
                                std::optional<std::uint64_t> seed = std::nullopt);

// The resolved recipe plus its seed; enough to rerun the experiment.
Json run_manifest(const ExperimentRecipe& recipe);

std::vector<std::string> builtin_recipe_names();
Json builtin_recipe(const std::string& name);

struct RunnerOptions {
  bool train = true;     // train (or reuse) checkpoints
  bool evaluate = true;  // write results.csv / results.json
  bool analyze = true;
  // Reuse runs/<name>/checkpoint when its stored run fingerprint matches.
  bool reuse = false;
  // Fail instead of training when no reusable checkpoint exists.
  bool require_existing = false;
  std::vector<std::string> only_runs;  // empty = all
  int threads = 1;
  bool verbose = false;
};

struct RunOutcome {
  std::string name;
  EvalMatrix matrix;
  History history;
  bool reused = false;
};

struct ExperimentResult {
  std::vector<RunOutcome> runs;
  std::optional<SimilarityReport> report;
  std::optional<GroupPartition> partition;
  const RunOutcome& run(const std::string& name) const;
};

// Cohort data for one recipe, generated once and split deterministically.
struct PreparedData {
  std::map<std::string, Cohort> cohorts;
  std::map<std::string, CohortSplit> splits;
};
PreparedData prepare_data(const ExperimentRecipe& recipe, int threads = 1);

// Layout under out_dir:
//   run-manifest.json, results.csv, results.json,
//   runs/<name>/{checkpoint/, history.csv, matrix.csv, fingerprint.json},
//   analysis/ (when the recipe asks for it)
ExperimentResult run_experiment(const ExperimentRecipe& recipe,
                                const std::filesystem::path& out_dir,
                                const RunnerOptions& options = {});

std::string results_csv(const ExperimentRecipe& recipe, const ExperimentResult& result);

}  // namespace styleseg
