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

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "styleseg/autograd.hpp"
#include "styleseg/gradcheck.hpp"
#include "styleseg/rng.hpp"

namespace styleseg {

inline constexpr double kNormEps = 1e-5;

enum class ConditioningKind { Naive, PerSource, Grouped, Image };

// How items select their normalization affine parameters.
struct ConditioningMode {
  ConditioningKind kind = ConditioningKind::Naive;
  // PerSource: one entry per source, in parameter-set order.
  // Grouped: the partition; group g owns parameter set g.
  std::vector<std::vector<std::string>> groups;

  static ConditioningMode naive() { return {}; }
  static ConditioningMode per_source(const std::vector<std::string>& sources);
  static ConditioningMode grouped(std::vector<std::vector<std::string>> partition);
  static ConditioningMode image() { return {ConditioningKind::Image, {}}; }

  // Number of parameter sets a bank needs (0 for Image).
  Index set_count() const;
  // Every source id named by the mode, in set order.
  std::vector<std::string> sources() const;
  // Throws ValidationError when a Grouped partition repeats a source or has
  // an empty group, or PerSource repeats an id.
  void validate() const;
  std::string name() const;

  bool operator==(const ConditioningMode&) const = default;
};

std::string to_string(ConditioningKind kind);
ConditioningKind conditioning_kind_from_string(const std::string& name);

// Per-layer, per-parameter-set (gamma, beta) vectors plus the source map.
// In shared mode (Naive) every source id resolves to set 0.
class ConditionBank {
 public:
  ConditionBank() = default;
  ConditionBank(std::vector<Index> widths, Index set_count,
                std::map<std::string, Index> source_map, bool shared);
  static ConditionBank for_mode(std::vector<Index> widths, const ConditioningMode& mode);

  Index layer_count() const { return static_cast<Index>(widths_.size()); }
  Index set_count() const { return set_count_; }
  const std::vector<Index>& widths() const { return widths_; }
  bool shared() const { return shared_; }
  const std::map<std::string, Index>& source_map() const { return source_map_; }

  const Var& gamma(Index layer, Index set) const;
  const Var& beta(Index layer, Index set) const;
  // Rows of one layer, indexed by parameter set.
  const std::vector<Var>& gammas(Index layer) const { return gamma_.at(layer); }
  const std::vector<Var>& betas(Index layer) const { return beta_.at(layer); }

  // Throws UnknownSource for ids outside the map (unless shared).
  Index resolve(const std::string& source) const;

  // Appends a parameter set initialized at (1, 0) or copied from `copy_from`.
  Index add_parameter_set(std::optional<Index> copy_from = std::nullopt);
  void map_source(const std::string& source, Index set);

  // Parameters named "norm.L<layer>.set<set>.gamma|beta", layer-major.
  std::vector<NamedParam> parameters() const;
  std::vector<NamedParam> parameters_of_set(Index set) const;

  // Deep copy: fresh leaves holding the same values.
  ConditionBank clone() const;

 private:
  std::vector<Index> widths_;
  Index set_count_ = 0;
  std::map<std::string, Index> source_map_;
  bool shared_ = false;
  std::vector<std::vector<Var>> gamma_;
  std::vector<std::vector<Var>> beta_;
};

// Parameter-set index for a source. Naive -> 0; PerSource -> that source's
// own set; Grouped -> the set of the group containing it.
Index resolve_parameter_set(const std::string& source, const ConditioningMode& mode,
                            const ConditionBank& bank);

// gamma_s * (z - mean(z)) / sigma(z) + beta_s with s chosen per item.
Var scin_forward(const Var& z, std::span<const std::string> sources, const ConditionBank& bank,
                 Index layer, double eps = kNormEps);

struct FilmAffine {
  Var gamma;  // [N, C_layer]
  Var beta;   // [N, C_layer]
};

// Image encoder (stride-2 conv + LeakyReLU stages, global average pool) and
// one linear head per normalization layer producing (gamma, beta).
class FilmGenerator {
 public:
  FilmGenerator() = default;
  FilmGenerator(Index in_channels, std::vector<Index> layer_widths, Rng& init_rng,
                std::vector<Index> encoder_widths = {8, 16, 32}, double slope = 0.01);

  Index head_count() const { return static_cast<Index>(head_w_.size()); }
  Index latent_size() const { return encoder_widths_.back(); }
  const std::vector<Index>& layer_widths() const { return layer_widths_; }
  const std::vector<Index>& encoder_widths() const { return encoder_widths_; }

  Var latent(const Var& image) const;
  std::vector<FilmAffine> condition(const Var& image) const;

  std::vector<NamedParam> encoder_parameters() const;
  std::vector<NamedParam> head_parameters() const;
  std::vector<NamedParam> parameters() const;

  FilmGenerator clone() const;

 private:
  Index in_channels_ = 0;
  double slope_ = 0.01;
  std::vector<Index> layer_widths_;
  std::vector<Index> encoder_widths_;
  std::vector<Var> enc_w_, enc_b_;
  std::vector<Var> head_w_, head_b_;
};

// Shorthand used by callers that run SCIN with generator output.
Var film_forward(const Var& z, const FilmAffine& affine, double eps = kNormEps);

}  // namespace styleseg
