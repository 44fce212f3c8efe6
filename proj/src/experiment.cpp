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

#include "styleseg/experiment.hpp"

#include <algorithm>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>

#include "styleseg/container.hpp"
#include "styleseg/errors.hpp"
#include "styleseg/parallel.hpp"

namespace styleseg {

namespace {

constexpr const char* kMarkerSuffix = ":marker";
constexpr const char* kNoMarkerSuffix = ":no_marker";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// "G:no_marker" -> ("G", subset)
std::pair<std::string, std::string> split_eval_id(const std::string& id) {
  for (const char* suffix : {kMarkerSuffix, kNoMarkerSuffix})
    if (ends_with(id, suffix)) return {id.substr(0, id.size() - std::string(suffix).size()), suffix};
  return {id, ""};
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  return j.contains(key) ? j[key].get<T>() : fallback;
}

Json conditioning_json(const RunConditioning& c) {
  Json j;
  j["kind"] = to_string(c.kind);
  if (c.kind == ConditioningKind::Grouped) {
    if (!c.groups_from.empty())
      j["groups_from"] = c.groups_from;
    else
      j["groups"] = c.groups;
  }
  return j;
}

RunConditioning conditioning_from(const Json& j, const std::string& ctx) {
  reject_unknown_keys(j, {"kind", "groups", "groups_from"}, ctx);
  RunConditioning c;
  c.kind = conditioning_kind_from_string(j.at("kind").get<std::string>());
  if (c.kind == ConditioningKind::Grouped) {
    if (j.contains("groups") == j.contains("groups_from"))
      throw ConfigError(ctx + ": grouped conditioning needs exactly one of groups, groups_from");
    if (j.contains("groups"))
      c.groups = j["groups"].get<std::vector<std::vector<std::string>>>();
    else
      c.groups_from = j["groups_from"].get<std::string>();
  } else if (j.contains("groups") || j.contains("groups_from")) {
    throw ConfigError(ctx + ": groups apply to grouped conditioning only");
  }
  return c;
}

Json run_json(const RunSpec& r) {
  Json j;
  j["name"] = r.name;
  if (!r.label.empty()) j["label"] = r.label;
  if (r.finetune) {
    const FinetuneSpec& f = *r.finetune;
    Json fj;
    fj["base"] = f.base;
    fj["source"] = f.source;
    fj["k"] = f.k;
    fj["init_from"] = f.init_from ? Json(*f.init_from) : Json(nullptr);
    Json tj = to_json(f.train);
    tj.erase("seed");
    tj.erase("trainable");
    fj["train"] = tj;
    j["finetune"] = fj;
  } else {
    j["conditioning"] = conditioning_json(r.conditioning);
    j["train_on"] = r.train_on;
  }
  if (!r.styles.empty()) j["styles"] = r.styles;
  if (!r.evaluate.empty()) j["evaluate"] = r.evaluate;
  return j;
}

std::string fixed(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

// ---- Recipe schema ----------------------------------------------------------

const CohortSpec& ExperimentRecipe::cohort(const std::string& source) const {
  for (const auto& c : cohorts)
    if (c.source == source) return c;
  throw ConfigError("recipe '" + name + "': unknown cohort '" + source + "'");
}

std::vector<std::string> ExperimentRecipe::styles_of(const RunSpec& run) const {
  if (!run.styles.empty()) return run.styles;
  if (run.finetune) return {run.finetune->source};
  switch (run.conditioning.kind) {
    case ConditioningKind::Naive: return {"naive"};
    case ConditioningKind::Image: return {"image"};
    default: return run.train_on;
  }
}

std::vector<std::string> ExperimentRecipe::evaluate_of(const RunSpec& run) const {
  return run.evaluate.empty() ? evaluate : run.evaluate;
}

void ExperimentRecipe::validate() const {
  const std::string ctx = "recipe '" + name + "'";
  auto fail = [&](const std::string& what) { throw ConfigError(ctx + ": " + what); };
  if (name.empty()) throw ConfigError("recipe: name is empty");
  if (cohorts.empty()) fail("no cohorts");
  std::set<std::string> ids;
  for (const auto& c : cohorts) {
    if (!ids.insert(c.source).second) fail("duplicate cohort '" + c.source + "'");
    if (c.source.find(':') != std::string::npos) fail("cohort ids may not contain ':'");
    if (c.in_channels != model.in_channels)
      fail("cohort '" + c.source + "' has " + std::to_string(c.in_channels) +
           " channels but the model expects " + std::to_string(model.in_channels));
  }
  if (runs.empty()) fail("no runs");
  std::map<std::string, const RunSpec*> seen;
  auto known_sources = [&](const RunSpec& r) {
    std::set<std::string> s(r.train_on.begin(), r.train_on.end());
    if (r.finetune) {
      s = std::set<std::string>(seen.at(r.finetune->base)->train_on.begin(),
                                seen.at(r.finetune->base)->train_on.end());
      s.insert(r.finetune->source);
    }
    return s;
  };
  for (const auto& r : runs) {
    const std::string rc = "run '" + r.name + "'";
    if (r.name.empty() || seen.count(r.name)) fail("run names must be unique and nonempty");
    if (r.finetune) {
      const FinetuneSpec& f = *r.finetune;
      auto base = seen.find(f.base);
      if (base == seen.end()) fail(rc + ": finetune base '" + f.base + "' is not an earlier run");
      if (base->second->finetune || base->second->conditioning.kind != ConditioningKind::PerSource)
        fail(rc + ": finetune base must be a per-source run");
      if (!ids.count(f.source)) fail(rc + ": unknown cohort '" + f.source + "'");
      const auto& bs = base->second->train_on;
      if (std::find(bs.begin(), bs.end(), f.source) != bs.end())
        fail(rc + ": '" + f.source + "' already has a parameter set in the base run");
      if (f.init_from && std::find(bs.begin(), bs.end(), *f.init_from) == bs.end())
        fail(rc + ": init_from '" + *f.init_from + "' is not a base source");
      if (f.k < 1) fail(rc + ": k must be >= 1");
    } else {
      if (r.train_on.empty()) fail(rc + ": train_on is empty");
      std::set<std::string> uniq;
      for (const auto& s : r.train_on) {
        if (!ids.count(s)) fail(rc + ": unknown cohort '" + s + "'");
        if (!uniq.insert(s).second) fail(rc + ": cohort '" + s + "' listed twice");
      }
      const RunConditioning& c = r.conditioning;
      if (c.kind == ConditioningKind::Grouped) {
        if (!c.groups_from.empty()) {
          auto src = seen.find(c.groups_from);
          if (src == seen.end()) fail(rc + ": groups_from '" + c.groups_from + "' is not an earlier run");
          if (src->second->finetune ||
              src->second->conditioning.kind != ConditioningKind::PerSource)
            fail(rc + ": groups_from must name a per-source run");
        } else {
          try {
            ConditioningMode::grouped(c.groups).validate();
          } catch (const ValidationError& e) {
            fail(rc + ": " + e.what());
          }
          std::set<std::string> covered;
          for (const auto& g : c.groups) covered.insert(g.begin(), g.end());
          for (const auto& s : r.train_on)
            if (!covered.count(s)) fail(rc + ": cohort '" + s + "' is in no group");
        }
      }
    }
    seen[r.name] = &r;
    const auto styles = styles_of(r);
    const bool conditioned = r.finetune || r.conditioning.kind == ConditioningKind::PerSource ||
                             r.conditioning.kind == ConditioningKind::Grouped;
    if (conditioned) {
      const auto known = known_sources(r);
      for (const auto& s : styles)
        if (!known.count(s)) fail(rc + ": style '" + s + "' is not a source of this run");
    }
    const auto eval = evaluate_of(r);
    for (const auto& e : eval)
      if (!ids.count(split_eval_id(e).first)) fail(rc + ": unknown evaluation cohort '" + e + "'");
  }
  if (analysis) {
    auto it = seen.find(analysis->run);
    if (it == seen.end()) fail("analysis run '" + analysis->run + "' does not exist");
    if (it->second->finetune || it->second->conditioning.kind != ConditioningKind::PerSource)
      fail("analysis run must be a per-source run");
    if (!(analysis->threshold >= -1.0 && analysis->threshold <= 2.0))
      fail("analysis threshold out of range");
  }
}

Json to_json(const ExperimentRecipe& r) {
  Json j;
  j["schema_version"] = kRecipeSchemaVersion;
  j["name"] = r.name;
  if (!r.description.empty()) j["description"] = r.description;
  j["seed"] = r.seed;
  Json cohorts = Json::array();
  for (const auto& c : r.cohorts) cohorts.push_back(to_json(c));
  j["cohorts"] = cohorts;
  Json m = to_json(r.model);
  m.erase("conditioning");
  m.erase("seed");
  j["model"] = m;
  Json t = to_json(r.train);
  t.erase("seed");
  t.erase("trainable");
  j["train"] = t;
  Json runs = Json::array();
  for (const auto& run : r.runs) runs.push_back(run_json(run));
  j["runs"] = runs;
  j["evaluate"] = r.evaluate;
  if (r.analysis) j["analysis"] = {{"run", r.analysis->run}, {"threshold", r.analysis->threshold}};
  return j;
}

ExperimentRecipe recipe_from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"schema_version", "name", "description", "seed", "cohorts", "model",
                       "train", "runs", "evaluate", "analysis"},
                      "recipe");
  if (!j.contains("schema_version"))
    throw ConfigError("recipe: missing schema_version");
  if (!j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != kRecipeSchemaVersion)
    throw ConfigError("recipe: unsupported schema_version " + j["schema_version"].dump() +
                      " (expected " + std::to_string(kRecipeSchemaVersion) + ")");
  ExperimentRecipe r;
  try {
    r.name = j.at("name").get<std::string>();
    r.description = get_or<std::string>(j, "description", "");
    r.seed = get_or<std::uint64_t>(j, "seed", 0);
    for (std::size_t i = 0; i < j.at("cohorts").size(); ++i)
      r.cohorts.push_back(
          cohort_spec_from_json(j["cohorts"][i], "recipe.cohorts[" + std::to_string(i) + "]"));
    const Json model = j.value("model", Json::object());
    reject_unknown_keys(model, {"in_channels", "widths", "dropout", "leaky_slope"}, "recipe.model");
    r.model = model_config_from_json(model, "recipe.model");
    r.model.seed = r.seed;
    const Json train = j.value("train", Json::object());
    reject_unknown_keys(train,
                        {"epochs", "batch_size", "lr", "weight_decay", "milestones", "gamma",
                         "augmentation"},
                        "recipe.train");
    r.train = train_config_from_json(train, "recipe.train");
    r.train.seed = r.seed;
    for (std::size_t i = 0; i < j.at("runs").size(); ++i) {
      const Json& rj = j["runs"][i];
      const std::string ctx = "recipe.runs[" + std::to_string(i) + "]";
      reject_unknown_keys(rj,
                          {"name", "label", "conditioning", "train_on", "finetune", "styles",
                           "evaluate"},
                          ctx);
      RunSpec run;
      run.name = rj.at("name").get<std::string>();
      run.label = get_or<std::string>(rj, "label", "");
      run.styles = get_or<std::vector<std::string>>(rj, "styles", {});
      run.evaluate = get_or<std::vector<std::string>>(rj, "evaluate", {});
      if (rj.contains("finetune")) {
        if (rj.contains("conditioning") || rj.contains("train_on"))
          throw ConfigError(ctx + ": finetune runs take neither conditioning nor train_on");
        const Json& fj = rj["finetune"];
        reject_unknown_keys(fj, {"base", "source", "k", "init_from", "train"}, ctx + ".finetune");
        FinetuneSpec f;
        f.base = fj.at("base").get<std::string>();
        f.source = fj.at("source").get<std::string>();
        f.k = get_or<Index>(fj, "k", 10);
        if (fj.contains("init_from") && !fj["init_from"].is_null())
          f.init_from = fj["init_from"].get<std::string>();
        Json tj = to_json(r.train);
        tj.erase("seed");
        tj.erase("trainable");
        if (fj.contains("train")) {
          reject_unknown_keys(fj["train"],
                              {"epochs", "batch_size", "lr", "weight_decay", "milestones",
                               "gamma", "augmentation"},
                              ctx + ".finetune.train");
          for (const auto& [k, v] : fj["train"].items()) tj[k] = v;
        }
        f.train = train_config_from_json(tj, ctx + ".finetune.train");
        f.train.seed = r.seed;
        f.train.trainable = TrainableMask::NormAffineOnly;
        run.finetune = f;
      } else {
        run.conditioning = conditioning_from(rj.at("conditioning"), ctx + ".conditioning");
        run.train_on = rj.at("train_on").get<std::vector<std::string>>();
      }
      r.runs.push_back(std::move(run));
    }
    r.evaluate = get_or<std::vector<std::string>>(j, "evaluate", {});
    if (j.contains("analysis")) {
      const Json& aj = j["analysis"];
      reject_unknown_keys(aj, {"run", "threshold"}, "recipe.analysis");
      r.analysis = AnalysisSpec{aj.at("run").get<std::string>(),
                                get_or<double>(aj, "threshold", kDefaultGroupThreshold)};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("recipe: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("recipe: ") + e.what());
  }
  r.validate();
  return r;
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  Json* node = &config;
  std::stringstream ss(path);
  std::vector<std::string> parts;
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string& key = parts[i];
    const bool last = i + 1 == parts.size();
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(key);
      } catch (const std::exception&) {
        throw ConfigError("override '" + path + "': '" + key + "' is not an array index");
      }
      if (idx >= node->size()) throw ConfigError("override '" + path + "': index out of range");
      node = &(*node)[idx];
    } else if (node->is_object()) {
      // Missing sections are created; the schema check rejects unknown keys afterwards.
      if (!last && !node->contains(key)) (*node)[key] = Json::object();
      node = &(*node)[key];
    } else {
      throw ConfigError("override '" + path + "': '" + key + "' is not inside an object");
    }
  }
  *node = value;
}

ExperimentRecipe load_recipe(const std::filesystem::path& path,
                             const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> seed) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return resolve_recipe(std::move(j), overrides, seed);
}

ExperimentRecipe resolve_recipe(Json j, const std::vector<std::string>& overrides,
                                std::optional<std::uint64_t> seed) {
  if (j.is_object() && j.contains("recipe") && j.value("kind", "") == "run-manifest")
    j = j["recipe"];
  for (const auto& o : overrides) apply_override(j, o);
  if (seed) j["seed"] = *seed;
  return recipe_from_json(j);
}

Json run_manifest(const ExperimentRecipe& recipe) {
  Json j;
  j["kind"] = "run-manifest";
  j["schema_version"] = kRecipeSchemaVersion;
  j["seed"] = recipe.seed;
  j["recipe"] = to_json(recipe);
  return j;
}

// ---- Runner -----------------------------------------------------------------

const RunOutcome& ExperimentResult::run(const std::string& name) const {
  for (const auto& r : runs)
    if (r.name == name) return r;
  throw ValidationError("no run named '" + name + "'");
}

PreparedData prepare_data(const ExperimentRecipe& recipe, int threads) {
  PreparedData d;
  for (const auto& spec : recipe.cohorts) {
    CohortSpec s = spec;
    s.seed = derive_seed(recipe.seed, "cohort-content-" + std::to_string(spec.seed));
    Cohort c = generate_cohort(s, threads);
    c.spec.seed = spec.seed;
    d.splits[spec.source] = split_cohort(c, recipe.seed);
    d.cohorts[spec.source] = std::move(c);
  }
  return d;
}

namespace {

struct RunState {
  std::optional<Model> model;
  RunOutcome outcome;
};

std::vector<Sample> filter_subset(const std::vector<Sample>& samples, const std::string& subset) {
  if (subset.empty()) return samples;
  std::vector<Sample> out;
  const bool want = subset == kMarkerSuffix;
  for (const auto& s : samples)
    if (s.has_marker == want) out.push_back(s);
  return out;
}

std::string matrix_csv(const EvalMatrix& m) {
  std::ostringstream os;
  os << "style,cohort,n_test,threshold,threshold_fallback,dice,pr_auc,pr_auc_defined,"
        "detection_f1,small_lesion_f1,components_pred,components_gt\n";
  for (const auto& c : m.cells)
    os << c.style << ',' << c.cohort << ',' << c.n_test << ',' << fixed(c.threshold.threshold)
       << ',' << c.threshold.fallback << ',' << fixed(c.report.dice) << ','
       << fixed(c.report.pr_auc) << ',' << c.report.pr_auc_defined << ','
       << fixed(c.report.detection_f1) << ',' << fixed(c.report.small_lesion_f1) << ','
       << c.report.component_count_pred << ',' << c.report.component_count_gt << '\n';
  return os.str();
}

Json cell_json(const EvalCell& c) {
  Json j;
  j["style"] = c.style;
  j["cohort"] = c.cohort;
  j["n_test"] = c.n_test;
  j["threshold"] = c.threshold.threshold;
  j["threshold_fallback"] = c.threshold.fallback;
  j["val_f1"] = c.threshold.f1;
  j["dice"] = c.report.dice;
  j["pr_auc"] = c.report.pr_auc_defined ? Json(c.report.pr_auc) : Json(nullptr);
  j["detection_f1"] = c.report.detection_f1;
  j["small_lesion_f1"] = c.report.small_lesion_f1;
  j["components_pred"] = c.report.component_count_pred;
  j["components_gt"] = c.report.component_count_gt;
  return j;
}

std::vector<std::string> eval_columns(const ExperimentRecipe& recipe) {
  std::vector<std::string> cols;
  for (const auto& run : recipe.runs)
    for (const auto& e : recipe.evaluate_of(run))
      if (std::find(cols.begin(), cols.end(), e) == cols.end()) cols.push_back(e);
  return cols;
}

std::string conditioning_label(const RunSpec& r) {
  if (r.finetune) return "finetune";
  return to_string(r.conditioning.kind);
}

std::string trained_on(const ExperimentRecipe& recipe, const RunSpec& r) {
  if (r.finetune) {
    for (const auto& b : recipe.runs)
      if (b.name == r.finetune->base) {
        std::string s;
        for (const auto& t : b.train_on) s += t + ";";
        return s + r.finetune->source + "(k=" + std::to_string(r.finetune->k) + ")";
      }
  }
  std::string s;
  for (std::size_t i = 0; i < r.train_on.size(); ++i) s += (i ? ";" : "") + r.train_on[i];
  return s;
}

GroupPartition groups_of(const Model& model, double threshold) {
  return discover_groups(build_report(model.bank()), threshold);
}

}  // namespace

std::string results_csv(const ExperimentRecipe& recipe, const ExperimentResult& result) {
  const auto cols = eval_columns(recipe);
  std::ostringstream os;
  os << "run,label,conditioning,trained_on,style";
  for (const auto& c : cols)
    for (const char* m : {"dice", "pr_auc", "detection_f1", "small_lesion_f1", "threshold"})
      os << ',' << c << '.' << m;
  os << '\n';
  for (const auto& run : recipe.runs) {
    const RunOutcome* out = nullptr;
    for (const auto& o : result.runs)
      if (o.name == run.name) out = &o;
    if (!out) continue;
    for (const auto& style : out->matrix.styles) {
      os << run.name << ',' << run.label << ',' << conditioning_label(run) << ','
         << trained_on(recipe, run) << ',' << style;
      for (const auto& c : cols) {
        const auto& ms = out->matrix.cohorts;
        if (std::find(ms.begin(), ms.end(), c) == ms.end()) {
          os << ",,,,,";
          continue;
        }
        const EvalCell& cell = out->matrix.at(style, c);
        os << ',' << fixed(cell.report.dice) << ','
           << (cell.report.pr_auc_defined ? fixed(cell.report.pr_auc) : "") << ','
           << fixed(cell.report.detection_f1) << ',' << fixed(cell.report.small_lesion_f1) << ','
           << fixed(cell.threshold.threshold);
      }
      os << '\n';
    }
  }
  return os.str();
}

ExperimentResult run_experiment(const ExperimentRecipe& recipe, const std::filesystem::path& out,
                                const RunnerOptions& options) {
  recipe.validate();
  for (const auto& name : options.only_runs) {
    bool found = false;
    for (const auto& r : recipe.runs) found = found || r.name == name;
    if (!found) throw ConfigError("no run named '" + name + "' in recipe '" + recipe.name + "'");
  }
  std::filesystem::create_directories(out / "runs");
  write_text_file(out / "run-manifest.json", run_manifest(recipe).dump(2) + "\n");
  const PreparedData data = prepare_data(recipe, options.threads);
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!options.verbose) return;
    std::lock_guard lock(log_mutex);
    std::cerr << "[" << recipe.name << "] " << msg << '\n';
  };

  const std::size_t R = recipe.runs.size();
  std::vector<RunState> states(R);
  auto index_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < R; ++i)
      if (recipe.runs[i].name == name) return i;
    throw ConfigError("no run named '" + name + "'");
  };
  // Runs needed: the selected ones plus everything they depend on.
  std::vector<bool> wanted(R, options.only_runs.empty());
  for (const auto& n : options.only_runs) wanted[index_of(n)] = true;
  if (options.analyze && recipe.analysis && options.only_runs.empty())
    wanted[index_of(recipe.analysis->run)] = true;
  for (std::size_t i = R; i-- > 0;) {
    if (!wanted[i]) continue;
    const RunSpec& r = recipe.runs[i];
    if (r.finetune) wanted[index_of(r.finetune->base)] = true;
    if (!r.conditioning.groups_from.empty()) wanted[index_of(r.conditioning.groups_from)] = true;
  }

  auto group_threshold = [&](const std::string& run) {
    return recipe.analysis && recipe.analysis->run == run ? recipe.analysis->threshold
                                                          : kDefaultGroupThreshold;
  };

  auto execute = [&](std::size_t i) {
    const RunSpec& run = recipe.runs[i];
    RunState& st = states[i];
    st.outcome.name = run.name;
    const auto dir = out / "runs" / run.name;
    std::filesystem::create_directories(dir);

    Json fp;
    fp["run"] = run_json(run);
    fp["seed"] = recipe.seed;
    fp["model"] = to_json(recipe.model);
    fp["train"] = to_json(recipe.train);
    Json cj = Json::array();
    for (const auto& c : recipe.cohorts) cj.push_back(to_json(c));
    fp["cohorts"] = cj;

    ModelConfig mc = recipe.model;
    mc.seed = recipe.seed;
    if (!run.finetune) {
      switch (run.conditioning.kind) {
        case ConditioningKind::Naive: mc.conditioning = ConditioningMode::naive(); break;
        case ConditioningKind::Image: mc.conditioning = ConditioningMode::image(); break;
        case ConditioningKind::PerSource:
          mc.conditioning = ConditioningMode::per_source(run.train_on);
          break;
        case ConditioningKind::Grouped: {
          auto groups = run.conditioning.groups;
          if (!run.conditioning.groups_from.empty()) {
            const RunState& src = states[index_of(run.conditioning.groups_from)];
            groups = groups_of(*src.model, group_threshold(run.conditioning.groups_from)).groups;
          }
          std::vector<std::vector<std::string>> kept;
          for (const auto& g : groups) {
            std::vector<std::string> members;
            for (const auto& s : g)
              if (std::find(run.train_on.begin(), run.train_on.end(), s) != run.train_on.end())
                members.push_back(s);
            if (!members.empty()) kept.push_back(members);
          }
          mc.conditioning = ConditioningMode::grouped(kept);
          std::set<std::string> covered;
          for (const auto& g : kept) covered.insert(g.begin(), g.end());
          for (const auto& s : run.train_on)
            if (!covered.count(s))
              throw ConfigError("run '" + run.name + "': cohort '" + s + "' is in no group");
          fp["resolved_groups"] = kept;
          break;
        }
      }
    }

    const auto ckpt = dir / "checkpoint";
    bool reused = false;
    if (options.reuse && std::filesystem::exists(dir / "fingerprint.json") &&
        std::filesystem::exists(ckpt)) {
      try {
        if (Json::parse(read_text_file(dir / "fingerprint.json")) == fp) {
          st.model = load_checkpoint(ckpt);
          reused = true;
        }
      } catch (const nlohmann::json::exception&) {
      }
    }
    if (!reused && options.require_existing)
      throw FormatError("run '" + run.name + "': no matching checkpoint under " + ckpt.string());
    if (!reused && !options.train)
      throw FormatError("run '" + run.name + "': training disabled and no checkpoint to reuse");

    if (!reused) {
      log("training " + run.name);
      TrainResult tr = [&] {
        if (run.finetune) {
          const FinetuneSpec& f = *run.finetune;
          const RunState& base = states[index_of(f.base)];
          const auto& pool = data.splits.at(f.source).train;
          if (static_cast<Index>(pool.size()) < f.k)
            throw ConfigError("run '" + run.name + "': cohort '" + f.source + "' has only " +
                              std::to_string(pool.size()) + " training samples, k = " +
                              std::to_string(f.k));
          std::vector<Sample> few(pool.begin(), pool.begin() + f.k);
          return finetune(*base.model, f.source, few, FinetuneConfig{f.train, f.k, f.init_from});
        }
        std::vector<Sample> train_set;
        std::vector<ValCohort> val;
        for (const auto& s : run.train_on) {
          const auto& sp = data.splits.at(s);
          train_set.insert(train_set.end(), sp.train.begin(), sp.train.end());
          val.push_back({s, sp.val});
        }
        TrainOptions topt;
        topt.on_epoch = [&](const HistoryRow& row) {
          std::ostringstream os;
          os << run.name << " epoch " << row.epoch << " loss " << row.train_loss << " val "
             << row.mean_val_dice;
          log(os.str());
        };
        return train(Model(mc), train_set, val, recipe.train, topt);
      }();
      st.model = std::move(tr.model);
      st.outcome.history = tr.history;
      save_checkpoint(*st.model, ckpt);
      write_text_file(dir / "history.csv", tr.history.to_csv());
      write_text_file(dir / "fingerprint.json", fp.dump(2) + "\n");
    }
    st.outcome.reused = reused;
  };

  // Runs without dependencies first (in parallel when allowed), then the rest in order.
  std::vector<std::size_t> free_runs, dependent;
  for (std::size_t i = 0; i < R; ++i) {
    if (!wanted[i]) continue;
    const RunSpec& r = recipe.runs[i];
    (r.finetune || !r.conditioning.groups_from.empty() ? dependent : free_runs).push_back(i);
  }
  parallel_for(static_cast<Index>(free_runs.size()), options.threads,
               [&](Index k) { execute(free_runs[k]); });
  for (std::size_t i : dependent) execute(i);

  ExperimentResult result;
  if (options.evaluate) {
    for (std::size_t i = 0; i < R; ++i) {
      const RunSpec& run = recipe.runs[i];
      if (!wanted[i]) continue;
      if (!options.only_runs.empty() &&
          std::find(options.only_runs.begin(), options.only_runs.end(), run.name) ==
              options.only_runs.end())
        continue;
      std::vector<EvalCohort> cohorts;
      for (const auto& e : recipe.evaluate_of(run)) {
        const auto [id, subset] = split_eval_id(e);
        const auto& sp = data.splits.at(id);
        cohorts.push_back({e, sp.val, filter_subset(sp.test, subset)});
      }
      log("evaluating " + run.name);
      states[i].outcome.matrix = evaluate_matrix(*states[i].model, recipe.styles_of(run), cohorts);
      write_text_file(out / "runs" / run.name / "matrix.csv", matrix_csv(states[i].outcome.matrix));
      result.runs.push_back(states[i].outcome);
    }
  } else {
    for (std::size_t i = 0; i < R; ++i)
      if (wanted[i]) result.runs.push_back(states[i].outcome);
  }

  if (options.analyze && recipe.analysis && options.only_runs.empty()) {
    const Model& m = *states[index_of(recipe.analysis->run)].model;
    result.report = build_report(m.bank());
    if (!result.report->all_undefined())
      result.partition = discover_groups(*result.report, recipe.analysis->threshold);
    export_analysis(*result.report, build_norm_table(m.bank()), result.partition,
                    out / "analysis", recipe.analysis->threshold);
  }

  if (options.evaluate) {
    write_text_file(out / "results.csv", results_csv(recipe, result));
    Json rj;
    rj["recipe"] = recipe.name;
    rj["seed"] = recipe.seed;
    Json runs = Json::array();
    for (const auto& o : result.runs) {
      const RunSpec& spec = recipe.runs[index_of(o.name)];
      Json r;
      r["name"] = o.name;
      r["label"] = spec.label;
      r["conditioning"] = conditioning_label(spec);
      r["trained_on"] = trained_on(recipe, spec);
      Json cells = Json::array();
      for (const auto& c : o.matrix.cells) cells.push_back(cell_json(c));
      r["cells"] = cells;
      runs.push_back(r);
    }
    rj["runs"] = runs;
    if (result.partition) rj["groups"] = result.partition->groups;
    write_text_file(out / "results.json", rj.dump(2) + "\n");
  }
  return result;
}

}  // namespace styleseg
