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

// styleseg: command-line driver with one subcommand per pipeline stage, plus
// `recipe` to run a canned experiment end to end.
//
// Exit codes: 0 success, 2 configuration, 3 data/format, 4 numeric failure.
// Failures print one line to stderr: "styleseg: error=<class> reason=<text>".

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "styleseg/analysis.hpp"
#include "styleseg/container.hpp"
#include "styleseg/errors.hpp"
#include "styleseg/experiment.hpp"
#include "styleseg/parallel.hpp"

namespace fs = std::filesystem;
using namespace styleseg;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
  int threads = 0;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config,
                              "Recipe file (JSON with schema_version) or a run-manifest.json");
  if (config_required) opt->required();
  cmd->add_option("--seed", c.seed, "Override the recipe seed");
  cmd->add_option("--out", c.out, "Output directory (default: out/<recipe name>)");
  cmd->add_option("--override", c.overrides,
                  "Set a recipe value, e.g. train.epochs=5 or cohorts.0.noise=0.1; repeatable");
  cmd->add_option("--threads", c.threads,
                  "Worker threads (default: all cores, capped by STYLESEG_THREADS)");
  cmd->add_flag("-v,--verbose", c.verbose, "Log progress to stderr");
}

int threads_of(const Common& c) {
  const int limit = worker_limit();
  return c.threads > 0 ? std::min(c.threads, limit) : limit;
}

fs::path out_dir(const Common& c, const ExperimentRecipe& r) {
  return c.out.empty() ? fs::path("out") / r.name : fs::path(c.out);
}

ExperimentRecipe recipe_of(const Common& c) { return load_recipe(c.config, c.overrides, c.seed); }

RunnerOptions runner(const Common& c) {
  RunnerOptions o;
  o.threads = threads_of(c);
  o.verbose = c.verbose;
  return o;
}

void check_runs(const ExperimentRecipe& r, const std::vector<std::string>& names) {
  for (const auto& n : names) {
    bool found = false;
    for (const auto& run : r.runs) found = found || run.name == n;
    if (!found) throw ConfigError("no run named '" + n + "' in recipe '" + r.name + "'");
  }
}

void gen_data(const Common& c) {
  const ExperimentRecipe r = recipe_of(c);
  const fs::path out = out_dir(c, r);
  const PreparedData data = prepare_data(r, threads_of(c));
  fs::create_directories(out / "data");
  write_text_file(out / "run-manifest.json", run_manifest(r).dump(2) + "\n");
  Json splits;
  for (const auto& [id, cohort] : data.cohorts) {
    save_cohort(cohort, out / "data" / id);
    const SplitIndices s = split_indices(static_cast<Index>(cohort.samples.size()), id, r.seed);
    splits[id] = {{"train", s.train}, {"val", s.val}, {"test", s.test}};
  }
  write_text_file(out / "data" / "splits.json", splits.dump(2) + "\n");
  std::cout << "wrote " << data.cohorts.size() << " cohorts to " << (out / "data").string()
            << '\n';
}

void print_summary(const fs::path& out) {
  if (fs::exists(out / "results.csv")) std::cout << read_text_file(out / "results.csv");
  std::cout << "artifacts in " << out.string() << '\n';
}

void analyze_bank(const std::string& bank_path, const std::string& out, double threshold) {
  const ConditionBank bank = load_bank(bank_path);
  SimilarityReport report = build_report(bank);
  const fs::path dir = out.empty() ? fs::path("out") / "analysis" : fs::path(out);
  std::optional<GroupPartition> partition;
  if (report.all_undefined()) {
    std::cerr << "styleseg: warning=undefined reason=every similarity is undefined; "
                 "the bank looks untrained\n";
  } else if (report.source_count() >= 2) {
    partition = discover_groups(report, threshold);
  }
  export_analysis(report, build_norm_table(bank), partition, dir, threshold);
  std::cout << "analysis of " << report.source_count() << " sources, " << report.layer_count()
            << " layers written to " << dir.string() << '\n';
  if (partition) {
    std::cout << "groups:";
    for (const auto& g : partition->groups) {
      std::cout << " {";
      for (std::size_t i = 0; i < g.size(); ++i) std::cout << (i ? "," : "") << g[i];
      std::cout << '}';
    }
    std::cout << '\n';
  }
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

int fail(const char* kind, const std::string& what, int code) {
  std::cerr << "styleseg: error=" << kind << " reason=" << one_line(what) << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  CLI::App app{"Style-conditioned segmentation experiments on synthetic cohorts"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "styleseg 1.0");

  Common gen, tr, ev, ft, an, rc;
  std::vector<std::string> train_runs, eval_runs, ft_runs;
  bool reuse = false;

  auto* gen_cmd = app.add_subcommand("gen-data", "Generate and save the cohorts of a recipe");
  add_common(gen_cmd, gen, true);

  auto* train_cmd = app.add_subcommand("train", "Train the runs of a recipe (no evaluation)");
  add_common(train_cmd, tr, true);
  train_cmd->add_option("--run", train_runs, "Only this run (and its dependencies); repeatable");
  train_cmd->add_flag("--reuse", reuse, "Reuse checkpoints whose fingerprint matches");

  auto* eval_cmd = app.add_subcommand(
      "eval", "Evaluate existing checkpoints under --out and write the result tables");
  add_common(eval_cmd, ev, true);
  eval_cmd->add_option("--run", eval_runs, "Only this run; repeatable");

  auto* ft_cmd = app.add_subcommand(
      "finetune", "Run the fine-tuning runs of a recipe, reusing cached base checkpoints");
  add_common(ft_cmd, ft, true);
  ft_cmd->add_option("--run", ft_runs, "Only this fine-tuning run; repeatable");

  std::string bank_path;
  double group_threshold = kDefaultGroupThreshold;
  auto* an_cmd = app.add_subcommand(
      "analyze", "Compare normalization parameters across sources and discover style groups");
  add_common(an_cmd, an, false);
  auto* bank_opt =
      an_cmd->add_option("--bank", bank_path, "Bank or checkpoint directory to analyze");
  an_cmd->add_option("--group-threshold", group_threshold,
                     "Similarity needed to merge groups when using --bank");
  bank_opt->excludes(an_cmd->get_option("--config"));

  std::string recipe_name;
  bool list = false;
  auto* rc_cmd = app.add_subcommand("recipe", "Run a builtin recipe (or --config) end to end");
  add_common(rc_cmd, rc, false);
  rc_cmd->add_option("name", recipe_name, "Builtin recipe name");
  rc_cmd->add_flag("--list", list, "List builtin recipes and exit");
  rc_cmd->add_flag("--reuse", reuse, "Reuse checkpoints whose fingerprint matches");
  bool dump = false;
  rc_cmd->add_flag("--dump", dump, "Print the resolved recipe JSON and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("config", e.what(), kConfig);
  }

  try {
    if (*gen_cmd) {
      gen_data(gen);
    } else if (*train_cmd) {
      const ExperimentRecipe r = recipe_of(tr);
      check_runs(r, train_runs);
      RunnerOptions o = runner(tr);
      o.evaluate = false;
      o.analyze = false;
      o.reuse = reuse;
      o.only_runs = train_runs;
      run_experiment(r, out_dir(tr, r), o);
      std::cout << "checkpoints in " << (out_dir(tr, r) / "runs").string() << '\n';
    } else if (*eval_cmd) {
      const ExperimentRecipe r = recipe_of(ev);
      check_runs(r, eval_runs);
      RunnerOptions o = runner(ev);
      o.train = false;
      o.reuse = true;
      o.require_existing = true;
      o.only_runs = eval_runs;
      run_experiment(r, out_dir(ev, r), o);
      print_summary(out_dir(ev, r));
    } else if (*ft_cmd) {
      const ExperimentRecipe r = recipe_of(ft);
      check_runs(r, ft_runs);
      std::vector<std::string> runs = ft_runs;
      if (runs.empty())
        for (const auto& run : r.runs)
          if (run.finetune) runs.push_back(run.name);
      if (runs.empty()) throw ConfigError("recipe '" + r.name + "' has no fine-tuning runs");
      for (const auto& n : runs)
        for (const auto& run : r.runs)
          if (run.name == n && !run.finetune)
            throw ConfigError("run '" + n + "' is not a fine-tuning run");
      RunnerOptions o = runner(ft);
      o.reuse = true;
      o.analyze = false;
      o.only_runs = runs;
      run_experiment(r, out_dir(ft, r), o);
      print_summary(out_dir(ft, r));
    } else if (*an_cmd) {
      if (!bank_path.empty()) {
        analyze_bank(bank_path, an.out, group_threshold);
      } else {
        if (an.config.empty()) throw ConfigError("analyze needs --bank or --config");
        const ExperimentRecipe r = recipe_of(an);
        if (!r.analysis) throw ConfigError("recipe '" + r.name + "' has no analysis section");
        RunnerOptions o = runner(an);
        o.reuse = true;
        o.evaluate = false;
        run_experiment(r, out_dir(an, r), o);
        std::cout << "analysis written to " << (out_dir(an, r) / "analysis").string() << '\n';
      }
    } else if (*rc_cmd) {
      if (list) {
        for (const auto& n : builtin_recipe_names()) std::cout << n << '\n';
        return kOk;
      }
      if (recipe_name.empty() == rc.config.empty())
        throw ConfigError("recipe needs exactly one of a builtin name or --config");
      const ExperimentRecipe r =
          rc.config.empty() ? resolve_recipe(builtin_recipe(recipe_name), rc.overrides, rc.seed)
                            : recipe_of(rc);
      if (dump) {
        std::cout << to_json(r).dump(2) << '\n';
        return kOk;
      }
      RunnerOptions o = runner(rc);
      o.reuse = reuse;
      run_experiment(r, out_dir(rc, r), o);
      print_summary(out_dir(rc, r));
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const ValidationError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const UnknownSource& e) {
    return fail("config", e.what(), kConfig);
  } catch (const FormatError& e) {
    return fail("data", e.what(), kData);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), kNumeric);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("data", e.what(), kData);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return kOk;
}
