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

#include "styleseg/mask.hpp"

#include <algorithm>
#include <string>

#include "styleseg/errors.hpp"

namespace styleseg {

Index Mask::count() const {
  return static_cast<Index>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

void check_same_extent(const Mask& a, const Mask& b, const char* what) {
  if (a.height != b.height)
    throw DimensionError(std::string(what) + ": axis 0 (height) differs: " +
                         std::to_string(a.height) + " vs " + std::to_string(b.height));
  if (a.width != b.width)
    throw DimensionError(std::string(what) + ": axis 1 (width) differs: " +
                         std::to_string(a.width) + " vs " + std::to_string(b.width));
}

Mask threshold_scores(const Tensor& scores, double t) {
  check_rank(scores, 2, "threshold_scores");
  Mask m(scores.dim(0), scores.dim(1));
  for (Index i = 0; i < m.size(); ++i) m.bits[i] = scores[i] >= t ? 1 : 0;
  return m;
}

}  // namespace styleseg
