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

#include "styleseg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "styleseg/errors.hpp"

namespace styleseg {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

void require_finite(const Tensor& t, const std::string& op, const char* phase) {
  if (!t.all_finite())
    throw NumericError(std::string("non-finite value in ") + phase + " of " + op);
}

Var make_result(Tensor value, std::string op, std::vector<Var> inputs,
                std::function<void(Node&)> backward_fn) {
  require_finite(value, op, "forward");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = std::move(op);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  node->requires_grad = any;
  if (any) {
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var::from_node(std::move(node));
}

// Grad buffer of parent i, or nullptr when that parent does not need one.
Tensor* parent_grad(Node& self, std::size_t i) {
  auto& p = self.parents.at(i);
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

void check_nchw(const Tensor& t, const std::string& what) { check_rank(t, 4, what); }

Index out_extent(Index in, int kernel, int stride, Padding padding) {
  const Index pad = padding == Padding::Same ? kernel / 2 : 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

// Output columns [lo, hi) whose input column ow*stride + offset lies in [0, W).
inline void valid_range(Index offset, int stride, Index W, Index Wo, Index& lo, Index& hi) {
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  hi = W - offset <= 0 ? 0 : (W - offset + stride - 1) / stride;
  hi = std::min(hi, Wo);
  lo = std::min(lo, hi);
}

// Unfolds one image [C, H, W] into a [C*k*k, Ho*Wo] row-major matrix.
void im2col(const double* x, Index C, Index H, Index W, int k, int stride, Index pad, Index Ho,
            Index Wo, double* cols) {
  for (Index c = 0; c < C; ++c)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        double* row = cols + ((c * k + kh) * k + kw) * Ho * Wo;
        Index lo, hi;
        valid_range(kw - pad, stride, W, Wo, lo, hi);
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride + kh - pad;
          double* dst = row + oh * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = x + (c * H + ih) * W + (kw - pad);
          std::fill(dst, dst + lo, 0.0);
          if (stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (Index ow = lo; ow < hi; ++ow) dst[ow] = src[ow * stride];
          }
          std::fill(dst + hi, dst + Wo, 0.0);
        }
      }
}

void col2im(const double* cols, Index C, Index H, Index W, int k, int stride, Index pad, Index Ho,
            Index Wo, double* dx) {
  for (Index c = 0; c < C; ++c)
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw) {
        const double* row = cols + ((c * k + kh) * k + kw) * Ho * Wo;
        Index lo, hi;
        valid_range(kw - pad, stride, W, Wo, lo, hi);
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih = oh * stride + kh - pad;
          if (ih < 0 || ih >= H) continue;
          double* dst = dx + (c * H + ih) * W + (kw - pad);
          const double* src = row + oh * Wo;
          for (Index ow = lo; ow < hi; ++ow) dst[ow * stride] += src[ow];
        }
      }
}


// 3x3, stride 1, same padding without unfolding: on a zero-padded image laid
// out with row pitch W+2, every kernel tap is a constant offset, so the
// output is a sum of nine [K,C] x [C, rows*(W+2)] products over shifted
// views. Columns that fall in the padding pitch are computed and discarded.
Var conv3x3_same(const Var& input, const Var& weight, const Var& bias) {
  const Tensor& x = input.value();
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), K = weight.value().dim(0);
  const Index Wp = W + 2, Hp = H + 2, padded = Hp * Wp, span = (H - 1) * Wp + W;

  // Taps as nine contiguous [K, C] blocks.
  auto taps = [K, C](const Tensor& w) {
    RowMat t(9 * K, C);
    for (Index kk = 0; kk < K; ++kk)
      for (Index c = 0; c < C; ++c)
        for (Index tap = 0; tap < 9; ++tap) t(tap * K + kk, c) = w[(kk * C + c) * 9 + tap];
    return t;
  };
  auto pad_image = [=](const double* src, RowMat& dst) {
    dst.setZero(C, padded);
    for (Index c = 0; c < C; ++c)
      for (Index h = 0; h < H; ++h)
        std::copy_n(src + (c * H + h) * W, W, dst.row(c).data() + (h + 1) * Wp + 1);
  };

  const RowMat wt = taps(weight.value());
  Tensor out = Tensor::uninitialized({N, K, H, W});
  RowMat xp, acc(K, span);
  for (Index n = 0; n < N; ++n) {
    pad_image(x.data() + n * C * H * W, xp);
    acc.noalias() = wt.topRows(K) * xp.leftCols(span);
    for (Index tap = 1; tap < 9; ++tap) {
      const Index off = (tap / 3) * Wp + tap % 3;
      acc.noalias() += wt.middleRows(tap * K, K) * xp.middleCols(off, span);
    }
    for (Index kk = 0; kk < K; ++kk) {
      const double bk = bias.value()[kk];
      for (Index h = 0; h < H; ++h) {
        const double* src = acc.row(kk).data() + h * Wp;
        double* dst = out.data() + ((n * K + kk) * H + h) * W;
        for (Index w = 0; w < W; ++w) dst[w] = src[w] + bk;
      }
    }
  }

  return make_result(std::move(out), "conv2d", {input, weight, bias}, [=](Node& self) {
    Tensor* dx = parent_grad(self, 0);
    Tensor* dw = parent_grad(self, 1);
    Tensor* db = parent_grad(self, 2);
    const Tensor& xv = self.parents[0]->value;
    const RowMat wtaps = taps(self.parents[1]->value);
    RowMat dwt = RowMat::Zero(9 * K, C);
    RowMat xpad, gy(K, span), dxp;
    for (Index n = 0; n < N; ++n) {
      // Output gradient in the pitched layout; padding columns stay zero.
      for (Index kk = 0; kk < K; ++kk)
        for (Index h = 0; h < H; ++h) {
          double* dst = gy.row(kk).data() + h * Wp;
          std::copy_n(self.grad.data() + ((n * K + kk) * H + h) * W, W, dst);
          if (h + 1 < H) dst[W] = dst[W + 1] = 0.0;
        }
      if (db) Eigen::Map<Eigen::VectorXd>(db->data(), K) += gy.rowwise().sum();
      if (dw) {
        pad_image(xv.data() + n * C * H * W, xpad);
        for (Index tap = 0; tap < 9; ++tap) {
          const Index off = (tap / 3) * Wp + tap % 3;
          dwt.middleRows(tap * K, K).noalias() += gy * xpad.middleCols(off, span).transpose();
        }
      }
      if (dx) {
        dxp.setZero(C, padded);
        for (Index tap = 0; tap < 9; ++tap) {
          const Index off = (tap / 3) * Wp + tap % 3;
          dxp.middleCols(off, span).noalias() += wtaps.middleRows(tap * K, K).transpose() * gy;
        }
        for (Index c = 0; c < C; ++c)
          for (Index h = 0; h < H; ++h) {
            const double* src = dxp.row(c).data() + (h + 1) * Wp + 1;
            double* dst = dx->data() + ((n * C + c) * H + h) * W;
            for (Index w = 0; w < W; ++w) dst[w] += src[w];
          }
      }
    }
    if (dw)
      for (Index kk = 0; kk < K; ++kk)
        for (Index c = 0; c < C; ++c)
          for (Index tap = 0; tap < 9; ++tap) (*dw)[(kk * C + c) * 9 + tap] += dwt(tap * K + kk, c);
  });
}

}  // namespace

// ---- Node / Var -------------------------------------------------------------

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size() || grad.shape() != value.shape())
    grad = Tensor::zeros(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->op = requires_grad ? "parameter" : "constant";
}

Var Var::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

Tensor& Var::mutable_value() {
  if (!node_->is_leaf()) throw ContractError("mutable_value() on a non-leaf node");
  return node_->value;
}

const Tensor& Var::grad() const {
  if (!has_grad()) node_->ensure_grad();
  return node_->grad;
}

void Var::zero_grad() {
  if (node_->requires_grad) node_->ensure_grad().fill(0.0);
}

std::vector<std::shared_ptr<Node>> topological_order(const Var& root) {
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS; graphs can be deep.
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (visited.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Var& root) {
  if (!root) throw ContractError("backward() on an empty Var");
  if (root.size() != 1)
    throw ContractError("backward() requires a scalar root, got shape " +
                        shape_str(root.shape()));
  if (!root.requires_grad()) return;
  auto order = topological_order(root);
  for (auto& node : order)
    if (!node->is_leaf() && node->requires_grad) node->ensure_grad().fill(0.0);
  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& node = **it;
    if (node.is_leaf() || !node.requires_grad || !node.backward_fn) continue;
    node.backward_fn(node);
  }
  for (auto& node : order)
    if (node->is_leaf() && node->requires_grad) require_finite(node->grad, "parameter", "backward");
}

// ---- Statistics -------------------------------------------------------------

InstanceStats instance_stats(const Tensor& z, double eps) {
  check_nchw(z, "instance_stats");
  if (eps <= 0) throw ValidationError("instance_stats: eps must be positive");
  const Index N = z.dim(0), C = z.dim(1), M = z.dim(2) * z.dim(3);
  if (M < 1) throw DimensionError("instance_stats: empty spatial extent");
  InstanceStats s{Tensor::zeros({N, C}), Tensor::zeros({N, C})};
  for (Index nc = 0; nc < N * C; ++nc) {
    Eigen::Map<const Eigen::VectorXd> x(z.data() + nc * M, M);
    const double mu = x.mean();
    const double var = (x.array() - mu).square().mean();
    s.mean[nc] = mu;
    s.sigma[nc] = std::sqrt(var + eps);
  }
  return s;
}

// ---- Convolutions -----------------------------------------------------------

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, Padding padding) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  check_nchw(x, "conv2d input");
  check_rank(w, 4, "conv2d weight");
  check_rank(bias.value(), 1, "conv2d bias");
  if (w.dim(2) != w.dim(3) || (w.dim(2) != 3 && w.dim(2) != 1))
    throw DimensionError("conv2d: kernel must be 3x3 or 1x1, got " + shape_str(w.shape()));
  if (stride != 1 && stride != 2) throw ValidationError("conv2d: stride must be 1 or 2");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index K = w.dim(0);
  const int k = static_cast<int>(w.dim(2));
  if (w.dim(1) != C)
    throw DimensionError("conv2d: axis 1 (channels) mismatch: input has " + std::to_string(C) +
                         ", weight expects " + std::to_string(w.dim(1)));
  if (bias.value().dim(0) != K)
    throw DimensionError("conv2d: axis 0 of bias must equal output channels " +
                         std::to_string(K));
  const Index pad = padding == Padding::Same ? k / 2 : 0;
  const Index Ho = out_extent(H, k, stride, padding), Wo = out_extent(W, k, stride, padding);
  if (Ho < 1 || Wo < 1) throw DimensionError("conv2d: input too small for valid padding");
  const Index P = Ho * Wo, CKK = C * k * k;

  if (k == 3 && stride == 1 && padding == Padding::Same)
    return conv3x3_same(input, weight, bias);

  Tensor out = Tensor::uninitialized({N, K, Ho, Wo});
  ConstRowMap wm(w.data(), K, CKK);
  RowMat cols(CKK, P);
  for (Index n = 0; n < N; ++n) {
    im2col(x.data() + n * C * H * W, C, H, W, k, stride, pad, Ho, Wo, cols.data());
    RowMap y(out.data() + n * K * P, K, P);
    y.noalias() = wm * cols;
    for (Index kk = 0; kk < K; ++kk) y.row(kk).array() += bias.value()[kk];
  }

  return make_result(std::move(out), "conv2d", {input, weight, bias},
                     [=](Node& self) {
                       const Tensor& xv = self.parents[0]->value;
                       const Tensor& wv = self.parents[1]->value;
                       Tensor* dx = parent_grad(self, 0);
                       Tensor* dw = parent_grad(self, 1);
                       Tensor* db = parent_grad(self, 2);
                       ConstRowMap wmat(wv.data(), K, CKK);
                       RowMat cols_n(CKK, P), dcols;
                       for (Index n = 0; n < N; ++n) {
                         ConstRowMap dy(self.grad.data() + n * K * P, K, P);
                         if (db) Eigen::Map<Eigen::VectorXd>(db->data(), K) += dy.rowwise().sum();
                         if (dw) {
                           im2col(xv.data() + n * C * H * W, C, H, W, k, stride, pad, Ho, Wo,
                                  cols_n.data());
                           RowMap(dw->data(), K, CKK).noalias() += dy * cols_n.transpose();
                         }
                         if (dx) {
                           dcols.noalias() = wmat.transpose() * dy;
                           col2im(dcols.data(), C, H, W, k, stride, pad, Ho, Wo,
                                  dx->data() + n * C * H * W);
                         }
                       }
                     });
}

Var conv_transpose2x2(const Var& input, const Var& weight, const Var& bias) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  check_nchw(x, "conv_transpose2x2 input");
  check_rank(w, 4, "conv_transpose2x2 weight");
  check_rank(bias.value(), 1, "conv_transpose2x2 bias");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (w.dim(0) != C)
    throw DimensionError("conv_transpose2x2: axis 0 of weight must equal input channels " +
                         std::to_string(C));
  if (w.dim(2) != 2 || w.dim(3) != 2)
    throw DimensionError("conv_transpose2x2: kernel must be 2x2, got " + shape_str(w.shape()));
  const Index K = w.dim(1);
  if (bias.value().dim(0) != K)
    throw DimensionError("conv_transpose2x2: axis 0 of bias must equal output channels");
  const Index HW = H * W, Ho = 2 * H, Wo = 2 * W;

  Tensor out = Tensor::uninitialized({N, K, Ho, Wo});
  ConstRowMap wm(w.data(), C, K * 4);
  RowMat y;
  for (Index n = 0; n < N; ++n) {
    ConstRowMap xn(x.data() + n * C * HW, C, HW);
    y.noalias() = wm.transpose() * xn;
    for (Index kk = 0; kk < K; ++kk) {
      const double bk = bias.value()[kk];
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double* row = y.row((kk * 2 + a) * 2 + b).data();
          for (Index i = 0; i < H; ++i)
            for (Index j = 0; j < W; ++j)
              out.at(n, kk, 2 * i + a, 2 * j + b) = row[i * W + j] + bk;
        }
    }
  }

  return make_result(std::move(out), "conv_transpose2x2", {input, weight, bias},
                     [=](Node& self) {
                       const Tensor& xv = self.parents[0]->value;
                       const Tensor& wv = self.parents[1]->value;
                       Tensor* dx = parent_grad(self, 0);
                       Tensor* dw = parent_grad(self, 1);
                       Tensor* db = parent_grad(self, 2);
                       const Tensor& g = self.grad;
                       RowMat dy(K * 4, HW);
                       for (Index n = 0; n < N; ++n) {
                         for (Index kk = 0; kk < K; ++kk)
                           for (int a = 0; a < 2; ++a)
                             for (int b = 0; b < 2; ++b) {
                               double* row = dy.row((kk * 2 + a) * 2 + b).data();
                               for (Index i = 0; i < H; ++i)
                                 for (Index j = 0; j < W; ++j)
                                   row[i * W + j] = g.at(n, kk, 2 * i + a, 2 * j + b);
                             }
                         if (db)
                           for (Index kk = 0; kk < K; ++kk)
                             (*db)[kk] += dy.middleRows(kk * 4, 4).sum();
                         if (dw)
                           RowMap(dw->data(), C, K * 4).noalias() +=
                               ConstRowMap(xv.data() + n * C * HW, C, HW) * dy.transpose();
                         if (dx)
                           RowMap(dx->data() + n * C * HW, C, HW).noalias() +=
                               ConstRowMap(wv.data(), C, K * 4) * dy;
                       }
                     });
}

Var upsample_nearest2x(const Var& input) {
  const Tensor& x = input.value();
  check_nchw(x, "upsample_nearest2x");
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out = Tensor::uninitialized({N, C, 2 * H, 2 * W});
  for (Index n = 0; n < N; ++n)
    for (Index c = 0; c < C; ++c)
      for (Index i = 0; i < 2 * H; ++i)
        for (Index j = 0; j < 2 * W; ++j) out.at(n, c, i, j) = x.at(n, c, i / 2, j / 2);
  return make_result(std::move(out), "upsample_nearest2x", {input}, [=](Node& self) {
    Tensor* dx = parent_grad(self, 0);
    if (!dx) return;
    for (Index n = 0; n < N; ++n)
      for (Index c = 0; c < C; ++c)
        for (Index i = 0; i < 2 * H; ++i)
          for (Index j = 0; j < 2 * W; ++j) dx->at(n, c, i / 2, j / 2) += self.grad.at(n, c, i, j);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  check_nchw(x, "concat_channels lhs");
  check_nchw(y, "concat_channels rhs");
  for (std::size_t axis : {0u, 2u, 3u})
    if (x.dim(axis) != y.dim(axis))
      throw DimensionError("concat_channels: axis " + std::to_string(axis) + " mismatch (" +
                           std::to_string(x.dim(axis)) + " vs " + std::to_string(y.dim(axis)) +
                           ")");
  const Index N = x.dim(0), Ca = x.dim(1), Cb = y.dim(1), M = x.dim(2) * x.dim(3);
  Tensor out = Tensor::uninitialized({N, Ca + Cb, x.dim(2), x.dim(3)});
  for (Index n = 0; n < N; ++n) {
    std::copy_n(x.data() + n * Ca * M, Ca * M, out.data() + n * (Ca + Cb) * M);
    std::copy_n(y.data() + n * Cb * M, Cb * M, out.data() + n * (Ca + Cb) * M + Ca * M);
  }
  return make_result(std::move(out), "concat_channels", {a, b}, [=](Node& self) {
    Tensor* da = parent_grad(self, 0);
    Tensor* db = parent_grad(self, 1);
    for (Index n = 0; n < N; ++n) {
      const double* g = self.grad.data() + n * (Ca + Cb) * M;
      if (da)
        Eigen::Map<Eigen::VectorXd>(da->data() + n * Ca * M, Ca * M) +=
            Eigen::Map<const Eigen::VectorXd>(g, Ca * M);
      if (db)
        Eigen::Map<Eigen::VectorXd>(db->data() + n * Cb * M, Cb * M) +=
            Eigen::Map<const Eigen::VectorXd>(g + Ca * M, Cb * M);
    }
  });
}

// ---- Normalization ----------------------------------------------------------

Var instance_norm(const Var& z, double eps) {
  const Tensor& x = z.value();
  InstanceStats stats = instance_stats(x, eps);
  const Index NC = x.dim(0) * x.dim(1), M = x.dim(2) * x.dim(3);
  Tensor out = Tensor::uninitialized(x.shape());
  Eigen::VectorXd inv_sigma(NC);
  for (Index nc = 0; nc < NC; ++nc) {
    inv_sigma[nc] = 1.0 / stats.sigma[nc];
    Eigen::Map<Eigen::VectorXd>(out.data() + nc * M, M) =
        (Eigen::Map<const Eigen::VectorXd>(x.data() + nc * M, M).array() - stats.mean[nc]) *
        inv_sigma[nc];
  }
  return make_result(std::move(out), "instance_norm", {z}, [=](Node& self) {
    Tensor* dx = parent_grad(self, 0);
    if (!dx) return;
    for (Index nc = 0; nc < NC; ++nc) {
      Eigen::Map<const Eigen::ArrayXd> g(self.grad.data() + nc * M, M);
      Eigen::Map<const Eigen::ArrayXd> u(self.value.data() + nc * M, M);
      const double g_mean = g.mean();
      const double gu_mean = (g * u).mean();
      Eigen::Map<Eigen::ArrayXd>(dx->data() + nc * M, M) +=
          inv_sigma[nc] * (g - g_mean - u * gu_mean);
    }
  });
}

Var channel_affine(const Var& u, const Var& gamma, const Var& beta) {
  const Tensor& x = u.value();
  check_nchw(x, "channel_affine input");
  const Index N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3);
  for (const Var* p : {&gamma, &beta}) {
    check_rank(p->value(), 2, "channel_affine parameters");
    if (p->value().dim(0) != N)
      throw DimensionError("channel_affine: axis 0 (batch) of parameters must be " +
                           std::to_string(N));
    if (p->value().dim(1) != C)
      throw DimensionError("channel_affine: axis 1 (channels) of parameters must be " +
                           std::to_string(C));
  }
  Tensor out = Tensor::uninitialized(x.shape());
  for (Index nc = 0; nc < N * C; ++nc)
    Eigen::Map<Eigen::ArrayXd>(out.data() + nc * M, M) =
        gamma.value()[nc] * Eigen::Map<const Eigen::ArrayXd>(x.data() + nc * M, M) +
        beta.value()[nc];
  return make_result(std::move(out), "channel_affine", {u, gamma, beta}, [=](Node& self) {
    Tensor* du = parent_grad(self, 0);
    Tensor* dg = parent_grad(self, 1);
    Tensor* db = parent_grad(self, 2);
    const Tensor& xv = self.parents[0]->value;
    const Tensor& gv = self.parents[1]->value;
    for (Index nc = 0; nc < N * C; ++nc) {
      Eigen::Map<const Eigen::ArrayXd> g(self.grad.data() + nc * M, M);
      if (du) Eigen::Map<Eigen::ArrayXd>(du->data() + nc * M, M) += gv[nc] * g;
      if (dg) (*dg)[nc] += (g * Eigen::Map<const Eigen::ArrayXd>(xv.data() + nc * M, M)).sum();
      if (db) (*db)[nc] += g.sum();
    }
  });
}

Var gather_rows(std::span<const Var> rows, std::span<const Index> which) {
  if (rows.empty()) throw DimensionError("gather_rows: no rows");
  const Index C = rows.front().size();
  for (const auto& r : rows) {
    check_rank(r.value(), 1, "gather_rows row");
    if (r.size() != C) throw DimensionError("gather_rows: axis 0 (channels) differs across rows");
  }
  const Index N = static_cast<Index>(which.size());
  // Parents are the distinct rows actually referenced, so unused rows never
  // receive a gradient buffer.
  std::vector<Var> used;
  std::vector<Index> slot(which.size());
  for (std::size_t n = 0; n < which.size(); ++n) {
    if (which[n] < 0 || which[n] >= static_cast<Index>(rows.size()))
      throw ValidationError("gather_rows: index out of range");
    const Var& r = rows[which[n]];
    auto it = std::find_if(used.begin(), used.end(), [&](const Var& v) { return v.same_node(r); });
    slot[n] = it - used.begin();
    if (it == used.end()) used.push_back(r);
  }
  Tensor out({N, C});
  for (Index n = 0; n < N; ++n)
    std::copy_n(used[slot[n]].value().data(), C, out.data() + n * C);
  return make_result(std::move(out), "gather_rows", used, [=](Node& self) {
    for (Index n = 0; n < N; ++n) {
      Tensor* d = parent_grad(self, slot[n]);
      if (!d) continue;
      Eigen::Map<Eigen::VectorXd>(d->data(), C) +=
          Eigen::Map<const Eigen::VectorXd>(self.grad.data() + n * C, C);
    }
  });
}

// ---- Elementwise ------------------------------------------------------------

Var leaky_relu(const Var& x, double slope) {
  if (!(slope > 0.0 && slope < 1.0)) throw ValidationError("leaky_relu: slope must be in (0,1)");
  Tensor out = Tensor::uninitialized(x.shape());
  // For slope in (0,1), max(v, slope*v) selects v on the positive side.
  out.vec() = x.value().vec().cwiseMax(slope * x.value().vec());
  return make_result(std::move(out), "leaky_relu", {x}, [slope](Node& self) {
    Tensor* dx = parent_grad(self, 0);
    if (!dx) return;
    const auto& in = self.parents[0]->value.vec().array();
    const auto& g = self.grad.vec().array();
    dx->vec().array() += (in >= 0.0).select(g, slope * g);
  });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::uninitialized(x.shape());
  out.vec() = x.vec().unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return out;
}

Var sigmoid(const Var& x) {
  Tensor out = sigmoid(x.value());
  return make_result(std::move(out), "sigmoid", {x}, [](Node& self) {
    Tensor* dx = parent_grad(self, 0);
    if (!dx) return;
    const auto& s = self.value.vec().array();
    dx->vec().array() += self.grad.vec().array() * s * (1.0 - s);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = Tensor::uninitialized(a.shape());
  out.vec() = a.value().vec() + b.value().vec();
  return make_result(std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (Tensor* d = parent_grad(self, i)) d->vec() += self.grad.vec();
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor out = Tensor::uninitialized(a.shape());
  out.vec() = a.value().vec().cwiseProduct(b.value().vec());
  return make_result(std::move(out), "mul", {a, b}, [](Node& self) {
    if (Tensor* d = parent_grad(self, 0))
      d->vec() += self.grad.vec().cwiseProduct(self.parents[1]->value.vec());
    if (Tensor* d = parent_grad(self, 1))
      d->vec() += self.grad.vec().cwiseProduct(self.parents[0]->value.vec());
  });
}

Var scale(const Var& x, double factor) {
  Tensor out = Tensor::uninitialized(x.shape());
  out.vec() = x.value().vec() * factor;
  return make_result(std::move(out), "scale", {x}, [factor](Node& self) {
    if (Tensor* d = parent_grad(self, 0)) d->vec() += factor * self.grad.vec();
  });
}

Var dropout(const Var& x, double p, bool train, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ValidationError("dropout: p must be in [0,1)");
  if (!train || p == 0.0) return x;
  const double keep = 1.0 / (1.0 - p);
  Tensor mask = Tensor::uninitialized(x.shape());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() >= p ? keep : 0.0;
  Tensor out = Tensor::uninitialized(x.shape());
  out.vec() = x.value().vec().cwiseProduct(mask.vec());
  return make_result(std::move(out), "dropout", {x}, [mask = std::move(mask)](Node& self) {
    if (Tensor* d = parent_grad(self, 0)) d->vec() += self.grad.vec().cwiseProduct(mask.vec());
  });
}

// ---- Reductions and losses --------------------------------------------------

Var sum(const Var& x) {
  return make_result(Tensor::scalar(x.value().vec().sum()), "sum", {x}, [](Node& self) {
    if (Tensor* d = parent_grad(self, 0)) d->vec().array() += self.grad[0];
  });
}

Var mean(const Var& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  return make_result(Tensor::scalar(x.value().vec().mean()), "mean", {x}, [inv](Node& self) {
    if (Tensor* d = parent_grad(self, 0)) d->vec().array() += self.grad[0] * inv;
  });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  check_same_shape(logits.value(), targets, "bce_with_logits");
  for (Index i = 0; i < targets.size(); ++i)
    if (targets[i] != 0.0 && targets[i] != 1.0)
      throw ValidationError("bce_with_logits: targets must be 0 or 1");
  const auto& x = logits.value().vec().array();
  const auto& t = targets.vec().array();
  // max(x,0) - x*t + log1p(exp(-|x|)) == -[t log s(x) + (1-t) log(1-s(x))]
  const double loss =
      (x.max(0.0) - x * t + (-x.abs()).exp().log1p()).mean();
  const double inv = 1.0 / static_cast<double>(targets.size());
  return make_result(Tensor::scalar(loss), "bce_with_logits", {logits},
                     [targets, inv](Node& self) {
                       Tensor* d = parent_grad(self, 0);
                       if (!d) return;
                       Tensor s = sigmoid(self.parents[0]->value);
                       d->vec() += (self.grad[0] * inv) * (s.vec() - targets.vec());
                     });
}

Var global_avg_pool(const Var& x) {
  const Tensor& v = x.value();
  check_nchw(v, "global_avg_pool");
  const Index N = v.dim(0), C = v.dim(1), M = v.dim(2) * v.dim(3);
  Tensor out({N, C});
  for (Index nc = 0; nc < N * C; ++nc)
    out[nc] = Eigen::Map<const Eigen::VectorXd>(v.data() + nc * M, M).mean();
  return make_result(std::move(out), "global_avg_pool", {x}, [=](Node& self) {
    Tensor* d = parent_grad(self, 0);
    if (!d) return;
    for (Index nc = 0; nc < N * C; ++nc)
      Eigen::Map<Eigen::ArrayXd>(d->data() + nc * M, M) += self.grad[nc] / static_cast<double>(M);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  check_rank(x.value(), 2, "linear input");
  check_rank(weight.value(), 2, "linear weight");
  check_rank(bias.value(), 1, "linear bias");
  const Index N = x.value().dim(0), L = x.value().dim(1), O = weight.value().dim(0);
  if (weight.value().dim(1) != L)
    throw DimensionError("linear: axis 1 of weight must equal input features " +
                         std::to_string(L));
  if (bias.value().dim(0) != O) throw DimensionError("linear: axis 0 of bias must equal outputs");
  Tensor out({N, O});
  RowMap(out.data(), N, O).noalias() =
      ConstRowMap(x.value().data(), N, L) * ConstRowMap(weight.value().data(), O, L).transpose();
  RowMap(out.data(), N, O).rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), O);
  return make_result(std::move(out), "linear", {x, weight, bias}, [=](Node& self) {
    ConstRowMap g(self.grad.data(), N, O);
    if (Tensor* d = parent_grad(self, 0))
      RowMap(d->data(), N, L).noalias() += g * ConstRowMap(self.parents[1]->value.data(), O, L);
    if (Tensor* d = parent_grad(self, 1))
      RowMap(d->data(), O, L).noalias() +=
          g.transpose() * ConstRowMap(self.parents[0]->value.data(), N, L);
    if (Tensor* d = parent_grad(self, 2))
      Eigen::Map<Eigen::RowVectorXd>(d->data(), O) += g.colwise().sum();
  });
}

Var slice_cols(const Var& x, Index begin, Index count) {
  check_rank(x.value(), 2, "slice_cols");
  const Index N = x.value().dim(0), M = x.value().dim(1);
  if (begin < 0 || count < 0 || begin + count > M)
    throw DimensionError("slice_cols: axis 1 range out of bounds");
  Tensor out({N, count});
  RowMap(out.data(), N, count) = ConstRowMap(x.value().data(), N, M).middleCols(begin, count);
  return make_result(std::move(out), "slice_cols", {x}, [=](Node& self) {
    if (Tensor* d = parent_grad(self, 0))
      RowMap(d->data(), N, M).middleCols(begin, count) += ConstRowMap(self.grad.data(), N, count);
  });
}

}  // namespace styleseg
