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

#include "styleseg/model.hpp"

#include <cmath>
#include <map>

#include "styleseg/container.hpp"
#include "styleseg/errors.hpp"
#include "styleseg/serialize.hpp"

namespace styleseg {

void ModelConfig::validate() const {
  if (in_channels < 1) throw ValidationError("model: in_channels must be >= 1");
  for (Index i = 0; i < kBlockCount; ++i) {
    if (widths[i] < 1) throw ValidationError("model: widths must be positive");
    if (widths[i] != widths[kBlockCount - 1 - i])
      throw ValidationError("model: widths must be symmetric about the center block (w" +
                            std::to_string(i) + " != w" + std::to_string(kBlockCount - 1 - i) +
                            ")");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw ValidationError("model: dropout must be in [0,1)");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw ValidationError("model: leaky_slope must be in (0,1)");
  conditioning.validate();
}

std::vector<Index> ModelConfig::norm_widths() const {
  std::vector<Index> out;
  for (Index w : widths) {
    out.push_back(w);
    out.push_back(w);
  }
  return out;
}

namespace {

Var he_init(Shape shape, Index fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, std);
  return Var::parameter(std::move(t));
}

}  // namespace

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& w = config_.widths;
  Rng rng = Rng(config_.seed).split("init");
  auto make_conv = [&](Index cin, Index cout, Index k) {
    return Conv{he_init({cout, cin, k, k}, cin * k * k, rng), Var::parameter(Tensor({cout}, 0.0))};
  };
  for (Index b = 0; b < kBlockCount; ++b) {
    Index cin;
    if (b == 0)
      cin = config_.in_channels;
    else if (b <= 3)
      cin = w[b - 1];
    else
      cin = 2 * w[b];  // upsampled features + mirrored skip
    convs_.push_back(make_conv(cin, w[b], 3));
    convs_.push_back(make_conv(w[b], w[b], 3));
  }
  for (Index b = 4; b < kBlockCount; ++b)
    up_.push_back(Conv{he_init({w[b - 1], w[b], 2, 2}, w[b - 1], rng),
                       Var::parameter(Tensor({w[b]}, 0.0))});
  head_ = make_conv(w[kBlockCount - 1], 1, 1);

  bank_ = ConditionBank::for_mode(config_.norm_widths(), config_.conditioning);
  if (has_film()) {
    Rng film_rng = Rng(config_.seed).split("film-init");
    film_ = FilmGenerator(config_.in_channels, config_.norm_widths(), film_rng, {8, 16, 32},
                          config_.leaky_slope);
  }
}

Var Model::unit(const Var& x, const Conv& conv, int stride, Index layer,
                std::span<const std::string> sources,
                const std::vector<FilmAffine>* film) const {
  Var z = conv2d(x, conv.weight, conv.bias, stride, Padding::Same);
  Var n = film ? film_forward(z, (*film)[layer]) : scin_forward(z, sources, bank_, layer);
  return leaky_relu(n, config_.leaky_slope);
}

Var Model::forward(const Tensor& images, std::span<const std::string> sources, bool train,
                   Rng* dropout_rng) const {
  check_rank(images, 4, "model input");
  if (images.dim(1) != config_.in_channels)
    throw DimensionError("model input: axis 1 (channels) is " + std::to_string(images.dim(1)) +
                         ", model expects " + std::to_string(config_.in_channels));
  for (std::size_t axis : {2u, 3u})
    if (images.dim(axis) % 8 != 0 || images.dim(axis) == 0)
      throw DimensionError("model input: axis " + std::to_string(axis) + " extent " +
                           std::to_string(images.dim(axis)) +
                           " is not divisible by 8; pad the image to a multiple of 8");
  const Index N = images.dim(0);
  std::vector<std::string> ids(sources.begin(), sources.end());
  const auto kind = config_.conditioning.kind;
  if (ids.empty() && (kind == ConditioningKind::Naive || kind == ConditioningKind::Image))
    ids.assign(N, std::string());
  if (static_cast<Index>(ids.size()) != N)
    throw DimensionError("model input: axis 0 (batch) has " + std::to_string(N) + " items but " +
                         std::to_string(ids.size()) + " source ids");
  const double p = config_.dropout_p;
  if (train && p > 0.0 && !dropout_rng)
    throw ContractError("training forward needs a dropout rng");

  Var x = Var::constant(images);
  std::vector<FilmAffine> film;
  if (has_film()) film = film_.condition(x);
  const std::vector<FilmAffine>* film_ptr = has_film() ? &film : nullptr;

  auto block = [&](const Var& in, Index b, int stride) {
    Var h = unit(in, convs_[2 * b], stride, 2 * b, ids, film_ptr);
    h = unit(h, convs_[2 * b + 1], 1, 2 * b + 1, ids, film_ptr);
    return train ? dropout(h, p, true, *dropout_rng) : h;
  };
  auto skip = [&](const Var& e, Index b) {
    return skip_ablation_[b] ? Var::constant(Tensor::zeros(e.shape())) : e;
  };

  Var e0 = block(x, 0, 1);
  Var e1 = block(e0, 1, 2);
  Var e2 = block(e1, 2, 2);
  Var c = block(e2, 3, 2);
  Var d = block(concat_channels(conv_transpose2x2(c, up_[0].weight, up_[0].bias), skip(e2, 2)), 4, 1);
  d = block(concat_channels(conv_transpose2x2(d, up_[1].weight, up_[1].bias), skip(e1, 1)), 5, 1);
  d = block(concat_channels(conv_transpose2x2(d, up_[2].weight, up_[2].bias), skip(e0, 0)), 6, 1);
  return conv2d(d, head_.weight, head_.bias, 1, Padding::Same);
}

std::vector<NamedParam> Model::backbone_parameters() const {
  std::vector<NamedParam> out;
  for (Index i = 0; i < static_cast<Index>(convs_.size()); ++i) {
    const std::string base =
        "block" + std::to_string(i / 2) + ".conv" + std::to_string(i % 2);
    out.push_back({base + ".weight", convs_[i].weight});
    out.push_back({base + ".bias", convs_[i].bias});
  }
  for (std::size_t i = 0; i < up_.size(); ++i) {
    const std::string base = "up" + std::to_string(i + 4);
    out.push_back({base + ".weight", up_[i].weight});
    out.push_back({base + ".bias", up_[i].bias});
  }
  out.push_back({"head.weight", head_.weight});
  out.push_back({"head.bias", head_.bias});
  return out;
}

std::vector<NamedParam> Model::parameters() const {
  auto out = backbone_parameters();
  auto bank = bank_.parameters();
  out.insert(out.end(), bank.begin(), bank.end());
  if (has_film()) {
    auto film = film_.parameters();
    out.insert(out.end(), film.begin(), film.end());
  }
  return out;
}

Index Model::parameter_count() const {
  Index n = 0;
  for (const auto& p : parameters()) n += p.var.size();
  return n;
}

Index Model::add_source(const std::string& source, std::optional<std::string> copy_from) {
  if (config_.conditioning.kind != ConditioningKind::PerSource)
    throw ValidationError("add_source requires a per-source model");
  if (bank_.source_map().count(source))
    throw ValidationError("source '" + source + "' already has a parameter set");
  std::optional<Index> from;
  if (copy_from) from = bank_.resolve(*copy_from);
  const Index set = bank_.add_parameter_set(from);
  bank_.map_source(source, set);
  config_.conditioning.groups.push_back({source});
  return set;
}

void Model::load_parameters(std::span<const std::pair<std::string, Tensor>> values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : values) by_name[name] = &t;
  for (auto& p : parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("missing parameter '" + p.name + "'");
    if (it->second->shape() != p.var.shape())
      throw FormatError("parameter '" + p.name + "' has shape " +
                        shape_str(it->second->shape()) + ", expected " +
                        shape_str(p.var.shape()));
    Var v = p.var;
    v.mutable_value() = *it->second;
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw FormatError("unexpected parameter '" + by_name.begin()->first + "'");
}

Model Model::clone() const {
  Model m = *this;
  for (auto* list : {&m.convs_, &m.up_})
    for (auto& c : *list) c = Conv{Var::parameter(c.weight.value()), Var::parameter(c.bias.value())};
  m.head_ = Conv{Var::parameter(head_.weight.value()), Var::parameter(head_.bias.value())};
  m.bank_ = bank_.clone();
  if (has_film()) m.film_ = film_.clone();
  return m;
}

std::vector<NamedParam> trainable_parameters(const Model& model, TrainableMask mask,
                                             std::optional<Index> only_set) {
  if (mask == TrainableMask::Full) return model.parameters();
  if (model.has_film()) return model.film().head_parameters();
  if (only_set) return model.bank().parameters_of_set(*only_set);
  return model.bank().parameters();
}

// ---- Containers -------------------------------------------------------------

namespace {

std::vector<NamedTensor> snapshot(const std::vector<NamedParam>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.name, p.var.value());
  return out;
}

Json bank_header(const ConditionBank& bank) {
  Json h;
  h["layer_count"] = bank.layer_count();
  h["widths"] = bank.widths();
  h["set_count"] = bank.set_count();
  h["shared"] = bank.shared();
  Json sources = Json::array();
  for (const auto& [id, set] : bank.source_map()) sources.push_back({{"id", id}, {"set", set}});
  h["sources"] = sources;
  return h;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  Json header;
  header["checkpoint_version"] = kCheckpointVersion;
  header["model"] = to_json(model.config());
  header["bank"] = bank_header(model.bank());
  write_param_container(dir, "checkpoint", header, snapshot(model.parameters()));
}

Model load_checkpoint(const std::filesystem::path& dir) {
  ParamContainer c = read_param_container(dir);
  if (c.kind != "checkpoint")
    throw FormatError(dir.string() + ": container kind '" + c.kind + "' is not a checkpoint");
  if (c.header.value("checkpoint_version", -1) != kCheckpointVersion)
    throw FormatError(dir.string() + ": unsupported checkpoint version");
  ModelConfig config;
  try {
    config = model_config_from_json(c.header.at("model"), "checkpoint model");
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  Model model(config);
  model.load_parameters(c.params);
  return model;
}

void save_bank(const ConditionBank& bank, const std::filesystem::path& dir) {
  write_param_container(dir, "bank", bank_header(bank), snapshot(bank.parameters()));
}

namespace {

ConditionBank bank_from_header(const Json& h, const std::vector<NamedTensor>& params,
                               const std::string& where) {
  try {
    auto widths = h.at("widths").get<std::vector<Index>>();
    if (h.at("layer_count").get<Index>() != static_cast<Index>(widths.size()))
      throw FormatError(where + ": layer_count does not match widths");
    std::map<std::string, Index> map;
    for (const auto& s : h.at("sources")) map[s.at("id").get<std::string>()] = s.at("set").get<Index>();
    ConditionBank bank(widths, h.at("set_count").get<Index>(), map, h.at("shared").get<bool>());
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : params) by_name[name] = &t;
    for (auto& p : bank.parameters()) {
      auto it = by_name.find(p.name);
      if (it == by_name.end()) throw FormatError(where + ": missing parameter '" + p.name + "'");
      if (it->second->shape() != p.var.shape())
        throw FormatError(where + ": parameter '" + p.name + "' has the wrong shape");
      Var v = p.var;
      v.mutable_value() = *it->second;
    }
    return bank;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": " + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(where + ": " + e.what());
  }
}

}  // namespace

ConditionBank load_bank(const std::filesystem::path& dir) {
  ParamContainer c = read_param_container(dir);
  if (c.kind == "bank") return bank_from_header(c.header, c.params, dir.string());
  if (c.kind == "checkpoint") return bank_from_header(c.header.at("bank"), c.params, dir.string());
  throw FormatError(dir.string() + ": container kind '" + c.kind + "' holds no bank");
}

}  // namespace styleseg
