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

#include "styleseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace styleseg {

std::vector<bool> kink_pattern(const Var& root) {
  std::vector<bool> signs;
  for (const auto& node : topological_order(root)) {
    if (node->op != "leaky_relu" || node->parents.empty()) continue;
    const auto& in = node->parents[0]->value;
    for (Index i = 0; i < in.size(); ++i) signs.push_back(in[i] >= 0.0);
  }
  return signs;
}

GradCheckResult check_gradients(std::span<const NamedParam> params,
                                const std::function<Var()>& loss_fn, double h, double floor) {
  GradCheckResult result;
  for (const auto& p : params) p.var.node()->ensure_grad().fill(0.0);
  Var loss = loss_fn();
  const std::vector<bool> base_pattern = kink_pattern(loss);
  backward(loss);
  loss = Var();

  for (const auto& p : params) {
    Var v = p.var;
    const Tensor analytic = v.grad();
    for (Index i = 0; i < v.size(); ++i) {
      const double original = v.value()[i];
      double step = h;
      double numeric = 0.0;
      for (int attempt = 0; attempt < 4; ++attempt) {
        v.mutable_value()[i] = original + step;
        Var plus = loss_fn();
        const bool plus_same = kink_pattern(plus) == base_pattern;
        const double f_plus = plus.value().item();
        v.mutable_value()[i] = original - step;
        Var minus = loss_fn();
        const bool minus_same = kink_pattern(minus) == base_pattern;
        const double f_minus = minus.value().item();
        v.mutable_value()[i] = original;
        numeric = (f_plus - f_minus) / (2.0 * step);
        if (plus_same && minus_same) break;
        ++result.kink_retries;
        step /= 10.0;
      }
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.checked;
      if (rel > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = std::max(rel, result.max_rel_error);
        if (rel >= result.max_rel_error) {
          result.worst_param = p.name;
          result.worst_index = i;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace styleseg
