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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "styleseg/rng.hpp"
#include "styleseg/tensor.hpp"

namespace styleseg {

// One vertex of the recorded forward graph. `grad` stays empty until the
// node takes part in a backward pass.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  // Pushes this node's grad into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }
  Tensor& ensure_grad();
};

// Handle to a node. Copies share the node, so a parameter Var held by a model
// and the same Var used inside a graph see the same gradient.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  static Var parameter(Tensor value) { return Var(std::move(value), true); }
  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var from_node(std::shared_ptr<Node> node);

  explicit operator bool() const { return node_ != nullptr; }

  const Tensor& value() const { return node_->value; }
  // Direct write access; only valid on leaves (optimizer updates, loading).
  Tensor& mutable_value();
  const Shape& shape() const { return node_->value.shape(); }
  Index size() const { return node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && node_->grad.size(); }
  const Tensor& grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_node(const Var& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
// calls; intermediate gradients are recomputed each call.
void backward(const Var& root);

// Every node reachable from `root`, parents before children.
std::vector<std::shared_ptr<Node>> topological_order(const Var& root);

enum class Padding { Same, Valid };

// ---- Pure statistics --------------------------------------------------------

struct InstanceStats {
  Tensor mean;   // [N, C]
  Tensor sigma;  // [N, C], sqrt(population variance + eps)
};
InstanceStats instance_stats(const Tensor& z, double eps);

// ---- Differentiable operations ---------------------------------------------

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride = 1,
           Padding padding = Padding::Same);
// Stride-2 transposed convolution with a 2x2 kernel; weight is [Cin, Cout, 2, 2].
Var conv_transpose2x2(const Var& input, const Var& weight, const Var& bias);
Var upsample_nearest2x(const Var& input);
Var concat_channels(const Var& a, const Var& b);

// (z - mean) / sqrt(var + eps) per (n, c); no affine.
Var instance_norm(const Var& z, double eps);
// gamma[n, c] * u + beta[n, c], broadcast over H, W.
Var channel_affine(const Var& u, const Var& gamma, const Var& beta);
// Stacks rows[which[n]] (each of shape [C]) into an [N, C] tensor.
Var gather_rows(std::span<const Var> rows, std::span<const Index> which);

Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double factor);
// Inverted dropout: kept units are scaled by 1/(1-p). Identity when !train.
Var dropout(const Var& x, double p, bool train, Rng& rng);

Var sum(const Var& x);
Var mean(const Var& x);
// Mean binary cross entropy computed from logits in log-sigmoid form.
Var bce_with_logits(const Var& logits, const Tensor& targets);

Var global_avg_pool(const Var& x);
// x[N, L] * weight[O, L]^T + bias[O].
Var linear(const Var& x, const Var& weight, const Var& bias);
Var slice_cols(const Var& x, Index begin, Index count);

// Elementwise logistic function on a plain tensor.
Tensor sigmoid(const Tensor& x);

}  // namespace styleseg
