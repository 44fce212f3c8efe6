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
#include <span>
#include <string>
#include <vector>

#include "styleseg/autograd.hpp"

namespace styleseg {

struct NamedParam {
  std::string name;
  Var var;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  Index checked = 0;
  // Elements whose +-h probe crossed a LeakyReLU kink and were re-probed
  // with a smaller step.
  Index kink_retries = 0;
};

// Sign pattern of every LeakyReLU input reachable from `root`.
std::vector<bool> kink_pattern(const Var& root);

// Compares backward() against central differences for every element of
// every parameter. Relative error is |a - n| / max(|a|, |n|, floor). At
// h = 1e-5 the difference quotient carries ~1e-10 of rounding noise on
// network-sized losses, so gradients below the floor are judged by their
// absolute error instead.
// `loss_fn` must be deterministic and rebuild the graph on each call.
GradCheckResult check_gradients(std::span<const NamedParam> params,
                                const std::function<Var()>& loss_fn, double h = 1e-5,
                                double floor = 1e-5);

}  // namespace styleseg
