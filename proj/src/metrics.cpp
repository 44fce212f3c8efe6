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

#include "styleseg/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "styleseg/errors.hpp"

namespace styleseg {

void OverlapCounts::add(const Mask& p, const Mask& g) {
  check_same_extent(p, g, "dice");
  for (Index i = 0; i < p.size(); ++i) {
    intersection += p.bits[i] & g.bits[i];
    pred += p.bits[i];
    gt += g.bits[i];
  }
}

double OverlapCounts::dice() const {
  if (pred + gt == 0) return 1.0;
  return 2.0 * static_cast<double>(intersection) / static_cast<double>(pred + gt);
}

double dice(const Mask& pred, const Mask& gt) {
  OverlapCounts c;
  c.add(pred, gt);
  return c.dice();
}

PrAuc pr_auc(std::span<const double> scores, std::span<const std::uint8_t> gt) {
  if (scores.size() != gt.size())
    throw DimensionError("pr_auc: axis 0 (pixels) differs: " + std::to_string(scores.size()) +
                         " vs " + std::to_string(gt.size()));
  const Index positives = std::count(gt.begin(), gt.end(), std::uint8_t{1});
  if (positives == 0) return {};
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double area = 0.0, prev_recall = 0.0;
  Index tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      tp += gt[order[i]];
      ++seen;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return {area, true};
}

PrAuc pr_auc(const Tensor& scores, const Mask& gt) {
  check_rank(scores, 2, "pr_auc scores");
  if (scores.dim(0) != gt.height || scores.dim(1) != gt.width)
    throw DimensionError("pr_auc: scores " + shape_str(scores.shape()) + " vs mask " +
                         std::to_string(gt.height) + "x" + std::to_string(gt.width));
  return pr_auc(scores.span(), gt.bits);
}

Components connected_components(const Mask& mask, Connectivity conn) {
  const Index H = mask.height, W = mask.width;
  Components out;
  out.labels.assign(static_cast<std::size_t>(H * W), 0);
  std::vector<Index> stack;
  for (Index start = 0; start < H * W; ++start) {
    if (!mask.bits[start] || out.labels[start]) continue;
    const auto label = static_cast<std::int32_t>(out.sizes.size() + 1);
    Index size = 0;
    out.labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const Index p = stack.back();
      stack.pop_back();
      ++size;
      const Index y = p / W, x = p % W;
      for (Index dy = -1; dy <= 1; ++dy)
        for (Index dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          if (conn == Connectivity::Four && dy != 0 && dx != 0) continue;
          const Index ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          const Index q = ny * W + nx;
          if (mask.bits[q] && !out.labels[q]) {
            out.labels[q] = label;
            stack.push_back(q);
          }
        }
    }
    out.sizes.push_back(size);
  }
  return out;
}

DetectionCounts& DetectionCounts::operator+=(const DetectionCounts& o) {
  tp += o.tp;
  fn += o.fn;
  fp += o.fp;
  pred_components += o.pred_components;
  gt_components += o.gt_components;
  return *this;
}

double DetectionCounts::f1() const {
  const Index denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

namespace {

// Pixels of each component of `comps` that land on foreground of `other`.
std::vector<Index> overlaps(const Components& comps, const Mask& other) {
  std::vector<Index> hit(comps.sizes.size(), 0);
  for (std::size_t i = 0; i < comps.labels.size(); ++i)
    if (comps.labels[i] && other.bits[i]) ++hit[comps.labels[i] - 1];
  return hit;
}

}  // namespace

DetectionCounts detection_counts(const Mask& pred, const Mask& gt,
                                 const DetectionOptions& options) {
  check_same_extent(pred, gt, "detection_f1");
  if (options.min_overlap < 1) throw ValidationError("detection_f1: min_overlap must be >= 1");
  const Components gc = connected_components(gt, options.connectivity);
  const Components pc = connected_components(pred, options.connectivity);
  const auto in_scope = [&](Index size) {
    return !options.small_only || size <= *options.small_only;
  };
  DetectionCounts c;
  c.gt_components = gc.count();
  c.pred_components = pc.count();
  const auto g_hit = overlaps(gc, pred);
  for (Index i = 0; i < gc.count(); ++i) {
    if (!in_scope(gc.sizes[i])) continue;
    (g_hit[i] >= options.min_overlap ? c.tp : c.fn) += 1;
  }
  const auto p_hit = overlaps(pc, gt);
  for (Index i = 0; i < pc.count(); ++i)
    if (in_scope(pc.sizes[i]) && p_hit[i] < options.min_overlap) ++c.fp;
  return c;
}

double detection_f1(const Mask& pred, const Mask& gt, const DetectionOptions& options) {
  return detection_counts(pred, gt, options).f1();
}

MetricReport evaluate_set(std::span<const Tensor> scores, std::span<const Mask> gts,
                          double threshold, Index small_max) {
  if (scores.size() != gts.size())
    throw DimensionError("evaluate_set: score and label counts differ");
  MetricReport r;
  r.threshold_used = threshold;
  OverlapCounts overlap;
  DetectionCounts all, small;
  std::vector<double> flat_scores;
  std::vector<std::uint8_t> flat_gt;
  DetectionOptions small_opts;
  small_opts.small_only = small_max;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const Mask pred = threshold_scores(scores[i], threshold);
    overlap.add(pred, gts[i]);
    all += detection_counts(pred, gts[i]);
    small += detection_counts(pred, gts[i], small_opts);
    flat_scores.insert(flat_scores.end(), scores[i].span().begin(), scores[i].span().end());
    flat_gt.insert(flat_gt.end(), gts[i].bits.begin(), gts[i].bits.end());
  }
  r.dice = overlap.dice();
  const PrAuc auc = pr_auc(flat_scores, flat_gt);
  r.pr_auc = auc.defined ? auc.value : 0.0;
  r.pr_auc_defined = auc.defined;
  r.detection_f1 = all.f1();
  r.small_lesion_f1 = small.f1();
  r.component_count_pred = all.pred_components;
  r.component_count_gt = all.gt_components;
  return r;
}

}  // namespace styleseg
