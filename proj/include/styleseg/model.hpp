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

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "styleseg/conditional_norm.hpp"

namespace styleseg {

inline constexpr Index kBlockCount = 7;
inline constexpr Index kScinLayerCount = 14;

struct ModelConfig {
  Index in_channels = 2;
  // Encoder (3), center (1), decoder (3); symmetric about the center.
  std::array<Index, kBlockCount> widths{8, 16, 32, 64, 32, 16, 8};
  double dropout_p = 0.1;
  double leaky_slope = 0.01;
  ConditioningMode conditioning;
  std::uint64_t seed = 0;

  void validate() const;
  // Channel count of each of the 14 normalization layers.
  std::vector<Index> norm_widths() const;
};

enum class TrainableMask { Full, NormAffineOnly };

// UNet-style segmenter: seven blocks of two (conv -> SCIN -> LeakyReLU)
// units, stride-2 convs down, stride-2 transposed convs up, concatenating
// skips, a 1x1 logit head. Normalization affines come from the bank or,
// in Image mode, from the FiLM generator.
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ConditionBank& bank() { return bank_; }
  const ConditionBank& bank() const { return bank_; }
  bool has_film() const { return config_.conditioning.kind == ConditioningKind::Image; }
  const FilmGenerator& film() const { return film_; }

  // images: [N, Cin, H, W] with H, W divisible by 8. `sources` supplies one
  // id per item (ignored in Naive and Image modes but still length-checked).
  // `dropout_rng` is required when train is true.
  Var forward(const Tensor& images, std::span<const std::string> sources, bool train = false,
              Rng* dropout_rng = nullptr) const;

  // Backbone parameters (convs, transposed convs, head) in a fixed order.
  std::vector<NamedParam> backbone_parameters() const;
  // Everything: backbone, then bank, then FiLM.
  std::vector<NamedParam> parameters() const;
  Index parameter_count() const;
  Index scin_layer_count() const { return kScinLayerCount; }

  // Registers a new source with a fresh parameter set (PerSource models).
  Index add_source(const std::string& source, std::optional<std::string> copy_from = std::nullopt);

  // Replaces the skip tensor of encoder block `block` (0..2) with zeros.
  void set_skip_ablation(Index block, bool zero) { skip_ablation_.at(block) = zero; }

  // Overwrites parameters by name; throws when a name or shape is missing.
  void load_parameters(std::span<const std::pair<std::string, Tensor>> values);

  Model clone() const;

 private:
  struct Conv {
    Var weight;
    Var bias;
  };
  Var unit(const Var& x, const Conv& conv, int stride, Index layer,
           std::span<const std::string> sources, const std::vector<FilmAffine>* film) const;

  ModelConfig config_;
  std::vector<Conv> convs_;        // 14, two per block
  std::vector<Conv> up_;           // 3 transposed convs
  Conv head_;
  ConditionBank bank_;
  FilmGenerator film_;
  std::array<bool, 3> skip_ablation_{false, false, false};
};

// Parameters an optimizer may update. NormAffineOnly selects the bank (or the
// FiLM heads in Image mode); `only_set` further restricts to one bank set.
std::vector<NamedParam> trainable_parameters(const Model& model, TrainableMask mask,
                                             std::optional<Index> only_set = std::nullopt);

// ---- Containers -------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

// Bank exchange: same container layout, kind "bank".
void save_bank(const ConditionBank& bank, const std::filesystem::path& dir);
ConditionBank load_bank(const std::filesystem::path& dir);

}  // namespace styleseg
