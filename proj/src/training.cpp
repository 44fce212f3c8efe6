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

#include "styleseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "styleseg/errors.hpp"
#include "styleseg/optim.hpp"

namespace styleseg {

void AugmentConfig::validate() const {
  if (rotation_deg < 0 || translation_px < 0)
    throw ValidationError("augmentation ranges must be non-negative");
  if (!(scale_min > 0 && scale_min <= scale_max))
    throw ValidationError("augmentation scale range is invalid");
  if (!(gain_min > 0 && gain_min <= gain_max))
    throw ValidationError("augmentation gain range is invalid");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(lr > 0.0 && lr < 1.0)) throw ValidationError("lr must be in (0, 1)");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in (0, 1]");
  for (std::size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw ValidationError("milestones must be strictly ascending");
  augmentation.validate();
}

// ---- Augmentation -----------------------------------------------------------

Augmented augment(const Tensor& image, const Mask& label, const AugmentConfig& cfg, Rng& rng) {
  check_rank(image, 3, "augment image");
  const Index C = image.dim(0), H = image.dim(1), W = image.dim(2);
  if (label.height != H || label.width != W)
    throw DimensionError("augment: label extent differs from image");
  const double angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg) * std::numbers::pi / 180.0;
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double ty = rng.uniform(-cfg.translation_px, cfg.translation_px);
  const double tx = rng.uniform(-cfg.translation_px, cfg.translation_px);
  const double gain = rng.uniform(cfg.gain_min, cfg.gain_max);
  if (!cfg.enabled) return {image, label};

  // Output pixel p maps back to input  R(-angle)(p - c - t) / scale + c.
  const double cy = 0.5 * static_cast<double>(H - 1), cx = 0.5 * static_cast<double>(W - 1);
  const double cs = std::cos(angle) / scale, sn = std::sin(angle) / scale;
  Augmented out{Tensor({C, H, W}), Mask(H, W)};
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      const double dy = static_cast<double>(y) - cy - ty, dx = static_cast<double>(x) - cx - tx;
      const double sy = cs * dy - sn * dx + cy;
      const double sx = sn * dy + cs * dx + cx;
      const Index ny = static_cast<Index>(std::lround(sy)), nx = static_cast<Index>(std::lround(sx));
      if (ny >= 0 && ny < H && nx >= 0 && nx < W) out.label(y, x) = label(ny, nx);
      const double py = std::clamp(sy, 0.0, static_cast<double>(H - 1));
      const double px = std::clamp(sx, 0.0, static_cast<double>(W - 1));
      const Index y0 = std::min(static_cast<Index>(py), H - 2 < 0 ? 0 : H - 2);
      const Index x0 = std::min(static_cast<Index>(px), W - 2 < 0 ? 0 : W - 2);
      const Index y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      const double fy = py - static_cast<double>(y0), fx = px - static_cast<double>(x0);
      for (Index c = 0; c < C; ++c) {
        const double* p = image.data() + c * H * W;
        out.image[(c * H + y) * W + x] =
            (1 - fy) * ((1 - fx) * p[y0 * W + x0] + fx * p[y0 * W + x1]) +
            fy * ((1 - fx) * p[y1 * W + x0] + fx * p[y1 * W + x1]);
      }
    }
  for (Index c = 0; c < C; ++c) {
    auto plane = Eigen::Map<Eigen::ArrayXd>(out.image.data() + c * H * W, H * W);
    const double mean = plane.mean();
    plane = mean + gain * (plane - mean);
  }
  return out;
}

// ---- Training ---------------------------------------------------------------

std::string History::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,lr,train_loss";
  for (const auto& c : cohorts) os << ",val_dice_" << c;
  os << ",mean_val_dice,best\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.lr << ',' << r.train_loss;
    for (double d : r.val_dice) os << ',' << d;
    os << ',' << r.mean_val_dice << ',' << (r.epoch == best_epoch ? 1 : 0) << '\n';
  }
  return os.str();
}

namespace {

Tensor stack_images(std::span<const Tensor> images) {
  const Shape& s = images.front().shape();
  Tensor out({static_cast<Index>(images.size()), s[0], s[1], s[2]});
  const Index per = numel(s);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape() != s) throw DimensionError("batch images differ in shape");
    std::copy_n(images[i].data(), per, out.data() + static_cast<Index>(i) * per);
  }
  return out;
}

bool query_is_unconditioned(const Model& model, const std::string& style) {
  const auto kind = model.config().conditioning.kind;
  return kind == ConditioningKind::Naive || kind == ConditioningKind::Image || style == "naive" ||
         style == "image";
}

double pooled_dice(const Model& model, const std::vector<Sample>& samples) {
  const auto probs = predict(model, samples);
  OverlapCounts c;
  for (std::size_t i = 0; i < samples.size(); ++i)
    c.add(threshold_scores(probs[i], 0.5), samples[i].label);
  return c.dice();
}

}  // namespace

std::vector<Tensor> predict(const Model& model, std::span<const Sample> samples,
                            const std::string& query, Index batch_size) {
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor> imgs;
    std::vector<std::string> ids;
    for (std::size_t i = start; i < end; ++i) {
      imgs.push_back(samples[i].image);
      ids.push_back(query.empty() ? samples[i].source : query);
    }
    const Tensor logits = model.forward(stack_images(imgs), ids, false).value();
    const Tensor prob = sigmoid(logits);
    const Index H = prob.dim(2), W = prob.dim(3);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      Tensor p({H, W});
      std::copy_n(prob.data() + static_cast<Index>(i) * H * W, H * W, p.data());
      out.push_back(std::move(p));
    }
  }
  return out;
}

TrainResult train(const Model& init, const std::vector<Sample>& train_set,
                  const std::vector<ValCohort>& val, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  if (train_set.empty() && config.epochs > 0) throw ValidationError("train: empty training set");
  TrainResult result{init.clone(), {}};
  Model model = init.clone();
  for (const auto& v : val) result.history.cohorts.push_back(v.name);

  std::vector<Var> vars;
  for (const auto& p : trainable_parameters(model, config.trainable, options.only_set))
    vars.push_back(p.var);
  AdamW opt(vars, {config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  MultiStepLR schedule(config.lr,
                       std::vector<int>(config.milestones.begin(), config.milestones.end()),
                       config.gamma);
  const Rng root(config.seed);
  const Index n = static_cast<Index>(train_set.size());
  double best = -std::numeric_limits<double>::infinity();

  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = schedule.lr_at(static_cast<int>(epoch - 1));
    opt.set_lr(lr);
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[i] = i;
    Rng shuffle = root.split("shuffle").split(static_cast<std::uint64_t>(epoch));
    for (Index i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.uniform_int(0, i)]);
    Rng aug_rng = root.split("augment").split(static_cast<std::uint64_t>(epoch));
    Rng drop_rng = root.split("dropout").split(static_cast<std::uint64_t>(epoch));

    double loss_total = 0.0;
    Index step = 0;
    for (Index start = 0; start < n; start += config.batch_size, ++step) {
      const Index end = std::min(n, start + config.batch_size);
      std::vector<Tensor> imgs;
      std::vector<std::string> ids;
      const Sample& first = train_set[order[start]];
      Tensor targets({end - start, 1, first.label.height, first.label.width});
      const Index plane = first.label.size();
      for (Index i = start; i < end; ++i) {
        const Sample& s = train_set[order[i]];
        Augmented a = augment(s.image, s.label, config.augmentation, aug_rng);
        for (Index p = 0; p < plane; ++p) targets[(i - start) * plane + p] = a.label.bits[p];
        imgs.push_back(std::move(a.image));
        ids.push_back(s.source);
      }
      try {
        opt.zero_grad();
        Var loss = bce_with_logits(model.forward(stack_images(imgs), ids, true, &drop_rng), targets);
        backward(loss);
        opt.step();
        loss_total += loss.value().item() * static_cast<double>(end - start);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + ": " + e.what());
      }
    }

    HistoryRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_total / static_cast<double>(n);
    for (const auto& v : val) row.val_dice.push_back(pooled_dice(model, v.samples));
    if (!row.val_dice.empty()) {
      double s = 0.0;
      for (double d : row.val_dice) s += d;
      row.mean_val_dice = s / static_cast<double>(row.val_dice.size());
      if (row.mean_val_dice > best) {
        best = row.mean_val_dice;
        result.model = model.clone();
        result.history.best_epoch = epoch;
      }
    }
    result.history.rows.push_back(row);
    if (options.on_epoch) options.on_epoch(row);
  }
  if (val.empty()) {
    result.model = std::move(model);
    result.history.best_epoch = config.epochs;
  }
  return result;
}

TrainResult finetune(const Model& base, const std::string& new_source,
                     const std::vector<Sample>& samples, const FinetuneConfig& config) {
  if (config.k < 1) throw ValidationError("finetune: k must be >= 1");
  if (static_cast<Index>(samples.size()) != config.k)
    throw ValidationError("finetune: expected exactly " + std::to_string(config.k) +
                          " samples, got " + std::to_string(samples.size()));
  Model model = base.clone();
  const Index set = model.add_source(new_source, config.init_from);
  std::vector<Sample> tagged = samples;
  for (auto& s : tagged) s.source = new_source;
  TrainConfig tc = config.train;
  tc.trainable = TrainableMask::NormAffineOnly;
  TrainOptions opts;
  opts.only_set = set;
  return train(model, tagged, {}, tc, opts);
}

// ---- Thresholds and evaluation ----------------------------------------------

ThresholdChoice select_threshold(std::span<const Tensor> scores, std::span<const Mask> labels,
                                 Index grid) {
  if (grid < 2) throw ValidationError("select_threshold: grid needs at least 2 points");
  if (scores.empty() || scores.size() != labels.size())
    throw ValidationError("select_threshold: need a nonempty, matched validation pool");
  const double denom = static_cast<double>(grid - 1);
  // Pixel with score s is predicted positive for every grid index k <= top(s).
  std::vector<Index> pos(static_cast<std::size_t>(grid + 1), 0), neg(pos.size(), 0);
  Index total_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != labels[i].size())
      throw DimensionError("select_threshold: scores and labels differ in size");
    for (Index p = 0; p < scores[i].size(); ++p) {
      const double s = scores[i][p];
      Index k = static_cast<Index>(std::floor(s * denom));
      k = std::clamp<Index>(k, -1, grid - 1);
      while (k + 1 <= grid - 1 && s >= static_cast<double>(k + 1) / denom) ++k;
      while (k >= 0 && s < static_cast<double>(k) / denom) --k;
      if (k < 0) {
        total_pos += labels[i].bits[p];
        continue;
      }
      (labels[i].bits[p] ? pos : neg)[k] += 1;
      total_pos += labels[i].bits[p];
    }
  }
  if (total_pos == 0) return {0.5, 0.0, true};
  ThresholdChoice best{0.0, -1.0, false};
  Index tp = 0, fp = 0;
  std::vector<double> f1(static_cast<std::size_t>(grid));
  for (Index k = grid - 1; k >= 0; --k) {
    tp += pos[k];
    fp += neg[k];
    const Index fn = total_pos - tp;
    f1[k] = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  }
  for (Index k = 0; k < grid; ++k)
    if (f1[k] > best.f1) best = {static_cast<double>(k) / denom, f1[k], false};
  return best;
}

const EvalCell& EvalMatrix::at(const std::string& style, const std::string& cohort) const {
  for (const auto& c : cells)
    if (c.style == style && c.cohort == cohort) return c;
  throw ValidationError("no evaluation cell for style '" + style + "' on cohort '" + cohort + "'");
}

EvalMatrix evaluate_matrix(const Model& model, const std::vector<std::string>& styles,
                           const std::vector<EvalCohort>& cohorts) {
  EvalMatrix m;
  m.styles = styles;
  for (const auto& c : cohorts) m.cohorts.push_back(c.name);
  for (const auto& style : styles)
    if (!query_is_unconditioned(model, style)) model.bank().resolve(style);
  for (const auto& style : styles) {
    const std::string query = query_is_unconditioned(model, style) ? "" : style;
    for (const auto& cohort : cohorts) {
      if (cohort.val.empty() || cohort.test.empty())
        throw ValidationError("cohort '" + cohort.name + "' needs validation and test samples");
      const auto val_scores = predict(model, cohort.val, query);
      std::vector<Mask> val_labels;
      for (const auto& s : cohort.val) val_labels.push_back(s.label);
      EvalCell cell;
      cell.style = style;
      cell.cohort = cohort.name;
      cell.threshold = select_threshold(val_scores, val_labels);
      const auto test_scores = predict(model, cohort.test, query);
      std::vector<Mask> test_labels;
      for (const auto& s : cohort.test) test_labels.push_back(s.label);
      cell.report = evaluate_set(test_scores, test_labels, cell.threshold.threshold);
      cell.n_test = static_cast<Index>(cohort.test.size());
      m.cells.push_back(std::move(cell));
    }
  }
  return m;
}

}  // namespace styleseg
