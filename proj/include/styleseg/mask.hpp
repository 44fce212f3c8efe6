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
#include <vector>

#include "styleseg/tensor.hpp"

namespace styleseg {

// Binary 2D mask, row-major, one byte per pixel holding 0 or 1.
struct Mask {
  Index height = 0;
  Index width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(Index h, Index w) : height(h), width(w), bits(static_cast<std::size_t>(h * w), 0) {}

  Index size() const { return height * width; }
  std::uint8_t& operator()(Index y, Index x) { return bits[y * width + x]; }
  std::uint8_t operator()(Index y, Index x) const { return bits[y * width + x]; }
  Index count() const;
  bool empty() const { return count() == 0; }

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Throws DimensionError naming the axis when the extents differ.
void check_same_extent(const Mask& a, const Mask& b, const char* what);

// pred = score >= t, pixelwise.
Mask threshold_scores(const Tensor& scores_hw, double t);

}  // namespace styleseg
