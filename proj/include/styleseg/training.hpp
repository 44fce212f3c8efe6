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

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "styleseg/metrics.hpp"
#include "styleseg/model.hpp"
#include "styleseg/synth.hpp"

namespace styleseg {

struct AugmentConfig {
  bool enabled = true;
  double rotation_deg = 10.0;   // uniform in ±rotation_deg
  double translation_px = 3.0;  // uniform in ±translation_px per axis
  double scale_min = 0.9;
  double scale_max = 1.1;
  double gain_min = 0.8;  // contrast gain about each channel's mean
  double gain_max = 1.2;

  void validate() const;
};

struct TrainConfig {
  Index epochs = 60;
  Index batch_size = 8;
  double lr = 2e-4;
  double weight_decay = 1e-5;
  std::vector<Index> milestones{30, 45};
  double gamma = 0.5;
  AugmentConfig augmentation;
  std::uint64_t seed = 0;
  TrainableMask trainable = TrainableMask::Full;

  void validate() const;
};

struct Augmented {
  Tensor image;  // [C, H, W]
  Mask label;
};

// One random similarity transform (rotation, isotropic scale, translation
// about the image center) applied to image and label alike, then a contrast
// gain on the image only. Images are resampled bilinearly with edge clamping,
// labels by nearest neighbour with zero fill.
Augmented augment(const Tensor& image, const Mask& label, const AugmentConfig& config, Rng& rng);

struct HistoryRow {
  Index epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::vector<double> val_dice;  // one per validation cohort
  double mean_val_dice = 0.0;
  bool operator==(const HistoryRow&) const = default;
};

struct History {
  std::vector<std::string> cohorts;
  std::vector<HistoryRow> rows;
  Index best_epoch = 0;  // 0 = the initialization
  std::string to_csv() const;
  bool operator==(const History&) const = default;
};

struct ValCohort {
  std::string name;  // conditioning id used for the cohort's samples
  std::vector<Sample> samples;
};

struct TrainResult {
  Model model;  // best by mean validation Dice (final when no validation data)
  History history;
};

struct TrainOptions {
  // Restricts a NormAffineOnly run to one parameter set.
  std::optional<Index> only_set;
  std::function<void(const HistoryRow&)> on_epoch;
};

// Mini-batch AdamW on mean BCE. Each sample's `source` selects its
// conditioning. Throws NumericError naming the epoch and step on NaN.
TrainResult train(const Model& init, const std::vector<Sample>& train_set,
                  const std::vector<ValCohort>& val, const TrainConfig& config,
                  const TrainOptions& options = {});

struct FinetuneConfig {
  TrainConfig train;
  Index k = 10;
  std::optional<std::string> init_from;  // copy an existing source's set instead of (1, 0)
};

// Adds a parameter set for `new_source` and optimizes only that set on
// exactly k samples. Every other parameter keeps its bits.
TrainResult finetune(const Model& base, const std::string& new_source,
                     const std::vector<Sample>& samples, const FinetuneConfig& config);

// Foreground probabilities [H, W] per sample. `query` selects the
// conditioning for every sample; empty means each sample's own source.
std::vector<Tensor> predict(const Model& model, std::span<const Sample> samples,
                            const std::string& query = "", Index batch_size = 8);

struct ThresholdChoice {
  double threshold = 0.5;
  double f1 = 0.0;
  bool fallback = false;  // labels were all empty
};

inline constexpr Index kThresholdGrid = 101;

// Grid t_k = k / (grid − 1). Predicted positive iff score >= t. The pooled
// pixel F1 is maximized; ties go to the lowest threshold.
ThresholdChoice select_threshold(std::span<const Tensor> scores, std::span<const Mask> labels,
                                 Index grid = kThresholdGrid);

struct EvalCohort {
  std::string name;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

struct EvalCell {
  std::string style;
  std::string cohort;
  ThresholdChoice threshold;
  MetricReport report;
  Index n_test = 0;
};

struct EvalMatrix {
  std::vector<std::string> styles;
  std::vector<std::string> cohorts;
  std::vector<EvalCell> cells;  // style-major
  const EvalCell& at(const std::string& style, const std::string& cohort) const;
};

// Style "naive" / "image" (or any id in Naive and Image models) queries the
// model without a source; otherwise the style must resolve in the bank.
// Thresholds come from each cohort's validation samples under that style.
EvalMatrix evaluate_matrix(const Model& model, const std::vector<std::string>& styles,
                           const std::vector<EvalCohort>& cohorts);

}  // namespace styleseg
