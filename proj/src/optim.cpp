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

#include "styleseg/optim.hpp"

#include <algorithm>
#include <cmath>

#include "styleseg/errors.hpp"

namespace styleseg {

AdamW::AdamW(std::vector<Var> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  set_lr(config.lr);
  if (config_.eps <= 0) throw ValidationError("AdamW: eps must be positive");
  if (config_.weight_decay < 0) throw ValidationError("AdamW: weight_decay must be >= 0");
  for (const auto& p : params_) {
    if (!p.node()->is_leaf() || !p.requires_grad())
      throw ContractError("AdamW: parameters must be trainable leaves");
    m_.push_back(Eigen::VectorXd::Zero(p.size()));
    v_.push_back(Eigen::VectorXd::Zero(p.size()));
  }
}

void AdamW::set_lr(double lr) {
  if (!(lr > 0.0)) throw ValidationError("AdamW: lr must be positive");
  config_.lr = lr;
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    const Eigen::VectorXd& g = p.grad().vec();
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();
    Eigen::VectorXd& w = p.mutable_value().vec();
    const Eigen::ArrayXd m_hat = m_[i].array() / bc1;
    const Eigen::ArrayXd v_hat = v_[i].array() / bc2;
    w.array() -= config_.lr * (m_hat / (v_hat.sqrt() + config_.eps)) +
                 config_.lr * config_.weight_decay * w.array();
    if (!w.allFinite()) throw NumericError("AdamW: non-finite parameter after update");
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

MultiStepLR::MultiStepLR(double base_lr, std::vector<int> milestones, double gamma)
    : base_lr_(base_lr), milestones_(std::move(milestones)), gamma_(gamma) {
  if (!std::is_sorted(milestones_.begin(), milestones_.end()) ||
      std::adjacent_find(milestones_.begin(), milestones_.end()) != milestones_.end())
    throw ValidationError("MultiStepLR: milestones must be strictly ascending");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("MultiStepLR: gamma must be in (0,1]");
}

double MultiStepLR::lr_at(int epoch) const {
  double lr = base_lr_;
  for (int m : milestones_)
    if (epoch >= m) lr *= gamma_;
  return lr;
}

}  // namespace styleseg
