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
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "styleseg/mask.hpp"
#include "styleseg/rng.hpp"
#include "styleseg/tensor.hpp"

namespace styleseg {

// Channel layout of generated images.
inline constexpr Index kIntensityChannel = 0;
inline constexpr Index kMarkerChannel = 1;
inline constexpr double kMarkerThreshold = 0.5;

enum class StyleKind { Identity, RemoveSmall, BoundaryGrow, BoundaryShrink, DilateIfMarker };

// Annotation style: a deterministic function of (base label, image).
struct StyleTransform {
  StyleKind kind = StyleKind::Identity;
  Index param = 0;  // max_size for RemoveSmall, radius otherwise

  static StyleTransform identity() { return {}; }
  static StyleTransform remove_small(Index max_size) { return {StyleKind::RemoveSmall, max_size}; }
  static StyleTransform grow(Index radius) { return {StyleKind::BoundaryGrow, radius}; }
  static StyleTransform shrink(Index radius) { return {StyleKind::BoundaryShrink, radius}; }
  static StyleTransform dilate_if_marker(Index radius) {
    return {StyleKind::DilateIfMarker, radius};
  }

  void validate() const;
  friend bool operator==(const StyleTransform&, const StyleTransform&) = default;
};

// Text form: "identity", "remove_small(10)", "grow(1)", "shrink(1)",
// "dilate_if_marker(2)".
std::string to_string(const StyleTransform& style);
StyleTransform parse_style(const std::string& text);

// Structuring element: every offset (dy, dx) with dy² + dx² <= r².
// Radius 1 is the 5-pixel plus, radius 2 a 13-pixel disc.
std::vector<std::pair<Index, Index>> disc_offsets(Index radius);

// Pixels outside the mask count as background for both operations.
Mask dilate(const Mask& mask, Index radius);
Mask erode(const Mask& mask, Index radius);
// Deletes every 8-connected component of at most max_size pixels.
Mask remove_small_components(const Mask& mask, Index max_size);

bool image_has_marker(const Tensor& image_chw);

Mask apply_style(const Mask& base, const Tensor& image_chw, const StyleTransform& style);

struct CohortSpec {
  std::string source;
  Index n_samples = 60;
  StyleTransform style;
  Index lesion_count_min = 2;
  Index lesion_count_max = 8;
  double radius_min = 1.0;
  double radius_max = 6.0;
  double marker_probability = 0.0;
  double noise = 0.05;
  std::uint64_t seed = 0;  // content seed; cohorts sharing it share images and base truths
  Index height = 64;
  Index width = 64;
  Index in_channels = 2;

  void validate() const;
};

struct Sample {
  Tensor image;  // [Cin, H, W], values representable in float32
  Mask label;
  Mask base_truth;
  std::string source;
  bool has_marker = false;
};

struct Cohort {
  CohortSpec spec;
  std::vector<Sample> samples;
};

// Sample i draws from Rng(spec.seed).split(i), so samples are independent
// of each other and of generation order. `threads` > 1 generates in parallel.
Cohort generate_cohort(const CohortSpec& spec, int threads = 1);

// Re-labels samples under another style (base truths and images unchanged).
std::vector<Sample> restyle(const std::vector<Sample>& samples, const StyleTransform& style);

struct SplitIndices {
  std::vector<Index> train, val, test;
};

struct SplitFractions {
  double train = 0.6, val = 0.2, test = 0.2;
};

// Shuffles 0..n-1 with a stream derived from (seed, source) and cuts it at
// round(train*n) and round((train+val)*n).
SplitIndices split_indices(Index n, const std::string& source, std::uint64_t seed,
                           SplitFractions fractions = {});

struct CohortSplit {
  std::vector<Sample> train, val, test;
};
CohortSplit split_cohort(const Cohort& cohort, std::uint64_t seed, SplitFractions fractions = {});

// ---- Dataset container ------------------------------------------------------
//
//   <dir>/manifest.json  {"format": "styleseg-cohort", "schema_version": 1,
//                         "spec": {...}, "channels", "height", "width",
//                         "samples": [{"index", "has_marker"}]}
//   <dir>/images.f32     little-endian float32, samples back to back (C,H,W)
//   <dir>/labels.bits    bit-packed masks, row-major, LSB first,
//   <dir>/base.bits      each mask padded to a whole byte

inline constexpr int kCohortSchemaVersion = 1;

void save_cohort(const Cohort& cohort, const std::filesystem::path& dir);
Cohort load_cohort(const std::filesystem::path& dir);

}  // namespace styleseg
