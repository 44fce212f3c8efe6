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

// Reference implementations used only by tests. They are written for
// clarity (nested loops, brute force) and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "styleseg/mask.hpp"
#include "styleseg/rng.hpp"
#include "styleseg/tensor.hpp"

namespace oracle {

using styleseg::Index;
using styleseg::Mask;
using styleseg::Tensor;

// Direct cross-correlation. weight [K, C, kh, kw]; padding (kh-1)/2 when same.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, bool same) {
  const Index N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index K = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const Index ph = same ? (kh - 1) / 2 : 0, pw = same ? (kw - 1) / 2 : 0;
  const Index Ho = same ? (H + stride - 1) / stride : (H - kh) / stride + 1;
  const Index Wo = same ? (W + stride - 1) / stride : (W - kw) / stride + 1;
  Tensor y({N, K, Ho, Wo});
  for (Index n = 0; n < N; ++n)
    for (Index k = 0; k < K; ++k)
      for (Index i = 0; i < Ho; ++i)
        for (Index j = 0; j < Wo; ++j) {
          double acc = b[k];
          for (Index c = 0; c < C; ++c)
            for (Index u = 0; u < kh; ++u)
              for (Index v = 0; v < kw; ++v) {
                const Index yy = i * stride + u - ph, xx = j * stride + v - pw;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                acc += w.at(k, c, u, v) * x.at(n, c, yy, xx);
              }
          y.at(n, k, i, j) = acc;
        }
  return y;
}

inline double dice(const Mask& p, const Mask& g) {
  long inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < p.bits.size(); ++i) {
    inter += p.bits[i] && g.bits[i];
    sp += p.bits[i];
    sg += g.bits[i];
  }
  return sp + sg == 0 ? 1.0 : 2.0 * inter / double(sp + sg);
}

// Union-find labeling; returns a component id per foreground pixel (-1 bg).
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) { return parent[a] == a ? a : parent[a] = find(parent[a]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

inline std::vector<int> component_roots(const Mask& m, bool eight) {
  const int H = int(m.height), W = int(m.width);
  UnionFind uf(H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!m(y, x)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!eight && dy != 0 && dx != 0) continue;
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= H || xx < 0 || xx >= W || !m(yy, xx)) continue;
          uf.unite(y * W + x, yy * W + xx);
        }
    }
  std::vector<int> roots(H * W, -1);
  for (int i = 0; i < H * W; ++i)
    if (m.bits[i]) roots[i] = uf.find(i);
  return roots;
}

inline int component_count(const Mask& m, bool eight) {
  const auto roots = component_roots(m, eight);
  std::set<int> s;
  for (int r : roots)
    if (r >= 0) s.insert(r);
  return int(s.size());
}

// Detection F1 from the union-find labeling, restricted to small
// components when max_size >= 0.
inline double detection_f1(const Mask& pred, const Mask& gt, long max_size = -1) {
  auto comps = [](const Mask& m) {
    const auto roots = component_roots(m, true);
    std::vector<std::vector<int>> out;
    std::vector<int> seen;
    for (int i = 0; i < int(roots.size()); ++i) {
      if (roots[i] < 0) continue;
      auto it = std::find(seen.begin(), seen.end(), roots[i]);
      if (it == seen.end()) {
        seen.push_back(roots[i]);
        out.push_back({i});
      } else {
        out[it - seen.begin()].push_back(i);
      }
    }
    return out;
  };
  long tp = 0, fn = 0, fp = 0;
  for (const auto& c : comps(gt)) {
    if (max_size >= 0 && long(c.size()) > max_size) continue;
    bool hit = false;
    for (int i : c) hit = hit || pred.bits[i];
    (hit ? tp : fn) += 1;
  }
  for (const auto& c : comps(pred)) {
    if (max_size >= 0 && long(c.size()) > max_size) continue;
    bool hit = false;
    for (int i : c) hit = hit || gt.bits[i];
    if (!hit) ++fp;
  }
  const long den = 2 * tp + fp + fn;
  return den == 0 ? 1.0 : 2.0 * tp / double(den);
}

// PR-AUC by enumerating every candidate threshold (each distinct score plus
// one above the maximum) and summing recall increments times precision.
inline double pr_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& g) {
  std::vector<double> ts(s.begin(), s.end());
  std::sort(ts.begin(), ts.end(), std::greater<>());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  long pos = 0;
  for (auto v : g) pos += v;
  double area = 0.0, prev_recall = 0.0;
  for (double t : ts) {
    long tp = 0, pp = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        ++pp;
        tp += g[i];
      }
    const double recall = double(tp) / pos, precision = double(tp) / pp;
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

inline Mask random_mask(styleseg::Rng& rng, Index h, Index w, double p) {
  Mask m(h, w);
  for (auto& b : m.bits) b = rng.uniform() < p;
  return m;
}

}  // namespace oracle
