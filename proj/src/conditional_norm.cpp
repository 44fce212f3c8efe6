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

#include "styleseg/conditional_norm.hpp"

#include <cmath>
#include <set>

#include "styleseg/errors.hpp"

namespace styleseg {

ConditioningMode ConditioningMode::per_source(const std::vector<std::string>& sources) {
  ConditioningMode m{ConditioningKind::PerSource, {}};
  for (const auto& s : sources) m.groups.push_back({s});
  return m;
}

ConditioningMode ConditioningMode::grouped(std::vector<std::vector<std::string>> partition) {
  return {ConditioningKind::Grouped, std::move(partition)};
}

Index ConditioningMode::set_count() const {
  switch (kind) {
    case ConditioningKind::Naive:
      return 1;
    case ConditioningKind::Image:
      return 0;
    default:
      return static_cast<Index>(groups.size());
  }
}

std::vector<std::string> ConditioningMode::sources() const {
  std::vector<std::string> out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

void ConditioningMode::validate() const {
  if (kind == ConditioningKind::Naive || kind == ConditioningKind::Image) {
    if (!groups.empty()) throw ValidationError(name() + " conditioning takes no sources");
    return;
  }
  if (groups.empty()) throw ValidationError(name() + " conditioning needs at least one source");
  std::set<std::string> seen;
  for (const auto& g : groups) {
    if (g.empty()) throw ValidationError("grouped conditioning has an empty group");
    if (kind == ConditioningKind::PerSource && g.size() != 1)
      throw ValidationError("per-source conditioning maps one source per set");
    for (const auto& s : g)
      if (!seen.insert(s).second)
        throw ValidationError("source '" + s + "' appears twice in the conditioning partition");
  }
}

std::string ConditioningMode::name() const { return to_string(kind); }

std::string to_string(ConditioningKind kind) {
  switch (kind) {
    case ConditioningKind::Naive:
      return "naive";
    case ConditioningKind::PerSource:
      return "per_source";
    case ConditioningKind::Grouped:
      return "grouped";
    case ConditioningKind::Image:
      return "image";
  }
  return "unknown";
}

ConditioningKind conditioning_kind_from_string(const std::string& name) {
  if (name == "naive") return ConditioningKind::Naive;
  if (name == "per_source") return ConditioningKind::PerSource;
  if (name == "grouped") return ConditioningKind::Grouped;
  if (name == "image") return ConditioningKind::Image;
  throw ValidationError("unknown conditioning mode '" + name + "'");
}

// ---- ConditionBank ----------------------------------------------------------

ConditionBank::ConditionBank(std::vector<Index> widths, Index set_count,
                             std::map<std::string, Index> source_map, bool shared)
    : widths_(std::move(widths)), source_map_(std::move(source_map)), shared_(shared) {
  if (shared_ && set_count != 1) throw ValidationError("shared bank must have exactly one set");
  for (const auto& [id, set] : source_map_)
    if (set < 0 || set >= set_count)
      throw ValidationError("source '" + id + "' maps outside the parameter sets");
  gamma_.resize(widths_.size());
  beta_.resize(widths_.size());
  for (Index s = 0; s < set_count; ++s) add_parameter_set();
}

ConditionBank ConditionBank::for_mode(std::vector<Index> widths, const ConditioningMode& mode) {
  mode.validate();
  std::map<std::string, Index> map;
  for (std::size_t g = 0; g < mode.groups.size(); ++g)
    for (const auto& s : mode.groups[g]) map[s] = static_cast<Index>(g);
  return ConditionBank(std::move(widths), mode.set_count(), std::move(map),
                       mode.kind == ConditioningKind::Naive);
}

const Var& ConditionBank::gamma(Index layer, Index set) const { return gamma_.at(layer).at(set); }
const Var& ConditionBank::beta(Index layer, Index set) const { return beta_.at(layer).at(set); }

Index ConditionBank::resolve(const std::string& source) const {
  if (shared_) return 0;
  auto it = source_map_.find(source);
  if (it == source_map_.end()) throw UnknownSource(source);
  return it->second;
}

Index ConditionBank::add_parameter_set(std::optional<Index> copy_from) {
  if (copy_from && (*copy_from < 0 || *copy_from >= set_count_))
    throw ValidationError("add_parameter_set: no parameter set " + std::to_string(*copy_from));
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    if (copy_from) {
      gamma_[l].push_back(Var::parameter(gamma_[l][*copy_from].value()));
      beta_[l].push_back(Var::parameter(beta_[l][*copy_from].value()));
    } else {
      gamma_[l].push_back(Var::parameter(Tensor({widths_[l]}, 1.0)));
      beta_[l].push_back(Var::parameter(Tensor({widths_[l]}, 0.0)));
    }
  }
  return set_count_++;
}

void ConditionBank::map_source(const std::string& source, Index set) {
  if (shared_) throw ValidationError("cannot map sources in a shared bank");
  if (set < 0 || set >= set_count_)
    throw ValidationError("map_source: no parameter set " + std::to_string(set));
  source_map_[source] = set;
}

namespace {
std::string layer_tag(Index layer) {
  return (layer < 10 ? "L0" : "L") + std::to_string(layer);
}
}  // namespace

std::vector<NamedParam> ConditionBank::parameters() const {
  std::vector<NamedParam> out;
  for (Index l = 0; l < layer_count(); ++l)
    for (Index s = 0; s < set_count_; ++s) {
      const std::string base = "norm." + layer_tag(l) + ".set" + std::to_string(s);
      out.push_back({base + ".gamma", gamma_[l][s]});
      out.push_back({base + ".beta", beta_[l][s]});
    }
  return out;
}

std::vector<NamedParam> ConditionBank::parameters_of_set(Index set) const {
  std::vector<NamedParam> out;
  for (auto& p : parameters())
    if (p.name.find(".set" + std::to_string(set) + ".") != std::string::npos) out.push_back(p);
  return out;
}

ConditionBank ConditionBank::clone() const {
  ConditionBank b = *this;
  for (auto* table : {&b.gamma_, &b.beta_})
    for (auto& layer : *table)
      for (auto& v : layer) v = Var::parameter(v.value());
  return b;
}

Index resolve_parameter_set(const std::string& source, const ConditioningMode& mode,
                            const ConditionBank& bank) {
  switch (mode.kind) {
    case ConditioningKind::Naive:
      return 0;
    case ConditioningKind::Image:
      throw ContractError("image conditioning does not use parameter sets");
    default:
      return bank.resolve(source);
  }
}

Var scin_forward(const Var& z, std::span<const std::string> sources, const ConditionBank& bank,
                 Index layer, double eps) {
  if (layer < 0 || layer >= bank.layer_count())
    throw ValidationError("scin_forward: layer index " + std::to_string(layer) + " out of range");
  check_rank(z.value(), 4, "scin_forward input");
  if (static_cast<Index>(sources.size()) != z.value().dim(0))
    throw DimensionError("scin_forward: axis 0 (batch) has " + std::to_string(z.value().dim(0)) +
                         " items but " + std::to_string(sources.size()) + " source ids");
  if (z.value().dim(1) != bank.widths()[layer])
    throw DimensionError("scin_forward: axis 1 (channels) is " + std::to_string(z.value().dim(1)) +
                         ", layer expects " + std::to_string(bank.widths()[layer]));
  std::vector<Index> sets;
  sets.reserve(sources.size());
  for (const auto& s : sources) sets.push_back(bank.resolve(s));
  Var u = instance_norm(z, eps);
  Var g = gather_rows(bank.gammas(layer), sets);
  Var b = gather_rows(bank.betas(layer), sets);
  return channel_affine(u, g, b);
}

// ---- FilmGenerator ----------------------------------------------------------

FilmGenerator::FilmGenerator(Index in_channels, std::vector<Index> layer_widths, Rng& init_rng,
                             std::vector<Index> encoder_widths, double slope)
    : in_channels_(in_channels),
      slope_(slope),
      layer_widths_(std::move(layer_widths)),
      encoder_widths_(std::move(encoder_widths)) {
  if (encoder_widths_.empty()) throw ValidationError("FiLM encoder needs at least one stage");
  Index cin = in_channels_;
  for (Index w : encoder_widths_) {
    const double std = std::sqrt(2.0 / static_cast<double>(cin * 9));
    Tensor weight({w, cin, 3, 3});
    for (Index i = 0; i < weight.size(); ++i) weight[i] = init_rng.normal(0.0, std);
    enc_w_.push_back(Var::parameter(std::move(weight)));
    enc_b_.push_back(Var::parameter(Tensor({w}, 0.0)));
    cin = w;
  }
  // Identity heads: zero weights, bias = [1 ... 1, 0 ... 0].
  const Index L = latent_size();
  for (Index c : layer_widths_) {
    head_w_.push_back(Var::parameter(Tensor({2 * c, L}, 0.0)));
    Tensor bias({2 * c}, 0.0);
    for (Index i = 0; i < c; ++i) bias[i] = 1.0;
    head_b_.push_back(Var::parameter(std::move(bias)));
  }
}

Var FilmGenerator::latent(const Var& image) const {
  check_rank(image.value(), 4, "film encoder input");
  if (image.value().dim(1) != in_channels_)
    throw DimensionError("film encoder: axis 1 (channels) must be " + std::to_string(in_channels_));
  Var h = image;
  for (std::size_t i = 0; i < enc_w_.size(); ++i)
    h = leaky_relu(conv2d(h, enc_w_[i], enc_b_[i], 2, Padding::Same), slope_);
  return global_avg_pool(h);
}

std::vector<FilmAffine> FilmGenerator::condition(const Var& image) const {
  Var z = latent(image);
  std::vector<FilmAffine> out;
  out.reserve(head_w_.size());
  for (std::size_t l = 0; l < head_w_.size(); ++l) {
    Var params = linear(z, head_w_[l], head_b_[l]);
    const Index c = layer_widths_[l];
    out.push_back({slice_cols(params, 0, c), slice_cols(params, c, c)});
  }
  return out;
}

std::vector<NamedParam> FilmGenerator::encoder_parameters() const {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < enc_w_.size(); ++i) {
    out.push_back({"film.enc" + std::to_string(i) + ".weight", enc_w_[i]});
    out.push_back({"film.enc" + std::to_string(i) + ".bias", enc_b_[i]});
  }
  return out;
}

std::vector<NamedParam> FilmGenerator::head_parameters() const {
  std::vector<NamedParam> out;
  for (std::size_t l = 0; l < head_w_.size(); ++l) {
    const std::string base = "film.head." + layer_tag(static_cast<Index>(l));
    out.push_back({base + ".weight", head_w_[l]});
    out.push_back({base + ".bias", head_b_[l]});
  }
  return out;
}

std::vector<NamedParam> FilmGenerator::parameters() const {
  auto out = encoder_parameters();
  auto heads = head_parameters();
  out.insert(out.end(), heads.begin(), heads.end());
  return out;
}

FilmGenerator FilmGenerator::clone() const {
  FilmGenerator g = *this;
  for (auto* list : {&g.enc_w_, &g.enc_b_, &g.head_w_, &g.head_b_})
    for (auto& v : *list) v = Var::parameter(v.value());
  return g;
}

Var film_forward(const Var& z, const FilmAffine& affine, double eps) {
  return channel_affine(instance_norm(z, eps), affine.gamma, affine.beta);
}

}  // namespace styleseg
