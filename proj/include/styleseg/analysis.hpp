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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "styleseg/conditional_norm.hpp"

namespace styleseg {

// Vectors whose norm falls below this are treated as carrying no direction.
inline constexpr double kZeroNorm = 1e-12;

// cos(γa − 1, γb − 1); nullopt when either shifted vector is ~zero.
std::optional<double> scale_cosine(std::span<const double> gamma_a,
                                   std::span<const double> gamma_b);
// cos(βa, βb); nullopt when either vector is ~zero.
std::optional<double> shift_cosine(std::span<const double> beta_a, std::span<const double> beta_b);

using SimMatrix = std::vector<std::vector<std::optional<double>>>;

struct SimilarityReport {
  std::vector<std::string> sources;  // row/column labels, sorted
  std::vector<SimMatrix> scale;      // one matrix per layer
  std::vector<SimMatrix> shift;
  SimMatrix summary_scale;  // mean over layers of the defined entries
  SimMatrix summary_shift;

  Index layer_count() const { return static_cast<Index>(scale.size()); }
  Index source_count() const { return static_cast<Index>(sources.size()); }
  // Pairs (i, j) with i < j in row-major order.
  std::vector<std::pair<Index, Index>> pairs() const;
  // Mean of the defined summary entries for a pair.
  std::optional<double> pair_similarity(Index i, Index j) const;
  bool all_undefined() const;
};

struct NormRow {
  Index layer = 0;  // 1-based
  std::string source;
  double scale_norm = 0.0;  // ||γ − 1||
  double shift_norm = 0.0;  // ||β||
  double gamma_norm = 0.0;  // ||γ||
};
using NormTable = std::vector<NormRow>;

// One entry per source in the bank's map (sorted). A bank with no mapped
// sources reports its sets as "set0", "set1", ...
SimilarityReport build_report(const ConditionBank& bank);
NormTable build_norm_table(const ConditionBank& bank);

// Fills the summary matrices from the per-layer ones.
void summarize(SimilarityReport& report);

struct MergeStep {
  std::vector<std::string> left, right;
  double distance = 0.0;
};

struct GroupPartition {
  std::vector<std::vector<std::string>> groups;  // members sorted, groups by first member
  std::vector<MergeStep> trace;
};

inline constexpr double kDefaultGroupThreshold = 0.5;

// Average-linkage clustering on d = 1 − pair_similarity. Merging stops when
// the closest pair of clusters is farther than 1 − threshold. Equal
// distances resolve toward the lexicographically smallest cluster pair.
// Pairs with no defined similarity sit at distance 1.
GroupPartition discover_groups(const SimilarityReport& report,
                               double threshold = kDefaultGroupThreshold);

// Writes similarity.csv, norms.csv, groups.json and layer_NN.svg. Output is
// a pure function of the inputs.
void export_analysis(const SimilarityReport& report, const NormTable& norms,
                     const std::optional<GroupPartition>& partition,
                     const std::filesystem::path& out_dir, double threshold);

// Rebuilds a report (per-layer matrices and summary) from similarity.csv.
SimilarityReport read_similarity_csv(const std::filesystem::path& path);

}  // namespace styleseg
