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

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "styleseg/mask.hpp"

namespace styleseg {

// 2|P ∩ G| / (|P| + |G|); 1.0 when both masks are empty.
double dice(const Mask& pred, const Mask& gt);

// Same as dice() but pooled over many masks (global voxel counts).
struct OverlapCounts {
  Index intersection = 0;
  Index pred = 0;
  Index gt = 0;
  void add(const Mask& pred, const Mask& gt);
  double dice() const;
};

struct PrAuc {
  double value = -1.0;  // -1 when undefined
  bool defined = false;
};

// Exact precision-recall curve over every distinct score, highest first.
// Area is the step-wise sum  Σ_k (R_k − R_{k−1}) · P_k  with R_0 = 0, where
// tied scores form a single operating point. Undefined without positives.
PrAuc pr_auc(std::span<const double> scores, std::span<const std::uint8_t> gt);
PrAuc pr_auc(const Tensor& scores_hw, const Mask& gt);

enum class Connectivity { Four = 4, Eight = 8 };

struct Components {
  // 0 for background, 1..n in row-major order of each component's first pixel.
  std::vector<std::int32_t> labels;
  std::vector<Index> sizes;  // sizes[i] belongs to label i + 1
  Index count() const { return static_cast<Index>(sizes.size()); }
};

Components connected_components(const Mask& mask, Connectivity conn = Connectivity::Eight);

struct DetectionCounts {
  Index tp = 0;  // GT components hit by the prediction
  Index fn = 0;  // GT components missed
  Index fp = 0;  // predicted components touching no GT foreground
  Index pred_components = 0;
  Index gt_components = 0;

  DetectionCounts& operator+=(const DetectionCounts& o);
  // 2TP / (2TP + FP + FN); 1.0 when nothing is in scope.
  double f1() const;
};

struct DetectionOptions {
  std::optional<Index> small_only;  // restrict to components of at most this size
  Index min_overlap = 1;            // pixels of overlap that count as a hit
  Connectivity connectivity = Connectivity::Eight;
};

DetectionCounts detection_counts(const Mask& pred, const Mask& gt,
                                 const DetectionOptions& options = {});
double detection_f1(const Mask& pred, const Mask& gt, const DetectionOptions& options = {});

inline constexpr Index kSmallLesionMax = 10;

struct MetricReport {
  double dice = 0.0;
  double pr_auc = 0.0;
  bool pr_auc_defined = false;
  double detection_f1 = 0.0;
  double small_lesion_f1 = 0.0;
  double threshold_used = 0.5;
  Index component_count_pred = 0;
  Index component_count_gt = 0;
};

// Pools every image of a set: global Dice, one PR curve over all pixels, and
// detection counts summed over images before forming F1.
MetricReport evaluate_set(std::span<const Tensor> scores, std::span<const Mask> gts,
                          double threshold, Index small_max = kSmallLesionMax);

}  // namespace styleseg
