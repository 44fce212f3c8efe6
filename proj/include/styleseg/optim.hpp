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

#include <vector>

#include "styleseg/autograd.hpp"

namespace styleseg {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

// Decoupled weight decay Adam. State is keyed by position in the parameter
// list handed to the constructor; only those parameters are ever touched.
class AdamW {
 public:
  AdamW(std::vector<Var> params, AdamWConfig config);

  // p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
  void step();
  void zero_grad();

  void set_lr(double lr);
  double lr() const { return config_.lr; }
  long step_count() const { return step_; }
  const std::vector<Var>& params() const { return params_; }

 private:
  std::vector<Var> params_;
  AdamWConfig config_;
  std::vector<Eigen::VectorXd> m_;
  std::vector<Eigen::VectorXd> v_;
  long step_ = 0;
};

// Multiplies the base rate by gamma at each milestone epoch.
class MultiStepLR {
 public:
  MultiStepLR(double base_lr, std::vector<int> milestones, double gamma);
  double lr_at(int epoch) const;

 private:
  double base_lr_;
  std::vector<int> milestones_;
  double gamma_;
};

}  // namespace styleseg
