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

#include "styleseg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "styleseg/container.hpp"
#include "styleseg/errors.hpp"
#include "styleseg/serialize.hpp"

namespace styleseg {

namespace {

std::optional<double> cosine(std::span<const double> a, std::span<const double> b, double origin,
                             const char* what) {
  if (a.size() != b.size())
    throw DimensionError(std::string(what) + ": axis 0 (channels) differs: " +
                         std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i] - origin, y = b[i] - origin;
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kZeroNorm || nb < kZeroNorm) return std::nullopt;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "undefined"; }

struct Entity {
  std::string name;
  Index set;
};

std::vector<Entity> entities(const ConditionBank& bank) {
  std::vector<Entity> out;
  for (const auto& [name, set] : bank.source_map()) out.push_back({name, set});
  if (out.empty())
    for (Index s = 0; s < bank.set_count(); ++s) out.push_back({"set" + std::to_string(s), s});
  return out;
}

SimMatrix square(Index n) { return SimMatrix(n, std::vector<std::optional<double>>(n)); }

std::span<const double> values(const Var& v) { return v.value().span(); }

}  // namespace

std::optional<double> scale_cosine(std::span<const double> a, std::span<const double> b) {
  return cosine(a, b, 1.0, "scale_cosine");
}

std::optional<double> shift_cosine(std::span<const double> a, std::span<const double> b) {
  return cosine(a, b, 0.0, "shift_cosine");
}

std::vector<std::pair<Index, Index>> SimilarityReport::pairs() const {
  std::vector<std::pair<Index, Index>> out;
  for (Index i = 0; i < source_count(); ++i)
    for (Index j = i + 1; j < source_count(); ++j) out.emplace_back(i, j);
  return out;
}

std::optional<double> SimilarityReport::pair_similarity(Index i, Index j) const {
  const auto& a = summary_scale[i][j];
  const auto& b = summary_shift[i][j];
  if (a && b) return 0.5 * (*a + *b);
  if (a) return a;
  return b;
}

bool SimilarityReport::all_undefined() const {
  for (auto [i, j] : pairs())
    if (pair_similarity(i, j)) return false;
  return true;
}

void summarize(SimilarityReport& r) {
  const Index S = r.source_count();
  r.summary_scale = square(S);
  r.summary_shift = square(S);
  for (auto* which : {&r.scale, &r.shift}) {
    SimMatrix& out = which == &r.scale ? r.summary_scale : r.summary_shift;
    for (Index i = 0; i < S; ++i)
      for (Index j = 0; j < S; ++j) {
        double total = 0.0;
        Index n = 0;
        for (const auto& layer : *which)
          if (layer[i][j]) {
            total += *layer[i][j];
            ++n;
          }
        if (n > 0) out[i][j] = total / static_cast<double>(n);
      }
  }
}

SimilarityReport build_report(const ConditionBank& bank) {
  const auto ents = entities(bank);
  SimilarityReport r;
  for (const auto& e : ents) r.sources.push_back(e.name);
  const Index S = r.source_count();
  for (Index l = 0; l < bank.layer_count(); ++l) {
    SimMatrix sc = square(S), sh = square(S);
    for (Index i = 0; i < S; ++i)
      for (Index j = i; j < S; ++j) {
        sc[i][j] = sc[j][i] =
            scale_cosine(values(bank.gamma(l, ents[i].set)), values(bank.gamma(l, ents[j].set)));
        sh[i][j] = sh[j][i] =
            shift_cosine(values(bank.beta(l, ents[i].set)), values(bank.beta(l, ents[j].set)));
      }
    r.scale.push_back(std::move(sc));
    r.shift.push_back(std::move(sh));
  }
  summarize(r);
  return r;
}

NormTable build_norm_table(const ConditionBank& bank) {
  NormTable t;
  const auto ents = entities(bank);
  for (Index l = 0; l < bank.layer_count(); ++l)
    for (const auto& e : ents) {
      const auto& g = bank.gamma(l, e.set).value().vec();
      const auto& b = bank.beta(l, e.set).value().vec();
      t.push_back({l + 1, e.name, (g.array() - 1.0).matrix().norm(), b.norm(), g.norm()});
    }
  return t;
}

GroupPartition discover_groups(const SimilarityReport& report, double threshold) {
  const Index S = report.source_count();
  if (S < 2) throw ValidationError("discover_groups: need at least two sources");
  if (report.all_undefined())
    throw ValidationError(
        "discover_groups: every similarity is undefined; train the conditioned model first");
  // Work on sorted labels so the result does not depend on input order.
  std::vector<Index> order(S);
  for (Index i = 0; i < S; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](Index a, Index b) { return report.sources[a] < report.sources[b]; });
  auto dist = [&](Index a, Index b) {
    const auto s = report.pair_similarity(std::min(a, b), std::max(a, b));
    return s ? 1.0 - *s : 1.0;
  };
  std::vector<std::vector<Index>> clusters;
  for (Index i : order) clusters.push_back({i});
  auto names = [&](const std::vector<Index>& c) {
    std::vector<std::string> out;
    for (Index i : c) out.push_back(report.sources[i]);
    std::sort(out.begin(), out.end());
    return out;
  };

  GroupPartition p;
  const double cut = 1.0 - threshold;
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t ba = 0, bb = 0;
    // Clusters stay sorted by first member, so scanning (a, b) in order
    // visits candidate pairs lexicographically and strict < keeps the first.
    for (std::size_t a = 0; a < clusters.size(); ++a)
      for (std::size_t b = a + 1; b < clusters.size(); ++b) {
        double total = 0.0;
        for (Index x : clusters[a])
          for (Index y : clusters[b]) total += dist(x, y);
        const double d =
            total / static_cast<double>(clusters[a].size() * clusters[b].size());
        if (d < best) {
          best = d;
          ba = a;
          bb = b;
        }
      }
    if (best > cut) break;
    p.trace.push_back({names(clusters[ba]), names(clusters[bb]), best});
    auto merged = clusters[ba];
    merged.insert(merged.end(), clusters[bb].begin(), clusters[bb].end());
    std::sort(merged.begin(), merged.end(), [&](Index a, Index b) {
      return report.sources[a] < report.sources[b];
    });
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bb));
    clusters[ba] = std::move(merged);
    std::sort(clusters.begin(), clusters.end(), [&](const auto& a, const auto& b) {
      return report.sources[a.front()] < report.sources[b.front()];
    });
  }
  for (const auto& c : clusters) p.groups.push_back(names(c));
  return p;
}

// ---- Export -----------------------------------------------------------------

namespace {

std::string svg_layer(const SimilarityReport& report, const NormTable& norms, Index layer) {
  constexpr double kW = 720, kH = 320, kPad = 40, kPanel = 300;
  std::vector<const NormRow*> rows;
  for (const auto& r : norms)
    if (r.layer == layer) rows.push_back(&r);
  double xmax = 1e-9, ymax = 1e-9;
  for (const auto* r : rows) {
    xmax = std::max(xmax, r->scale_norm);
    ymax = std::max(ymax, r->shift_norm);
  }
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kPad << "\" y=\"16\">layer " << layer << "</text>\n";
  // Scatter: ||gamma - 1|| on x, ||beta|| on y.
  os << "<g transform=\"translate(" << kPad << "," << kPad << ")\">\n";
  os << "<rect width=\"" << kPanel << "\" height=\"" << kPanel - 2 * kPad
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  const double ph = kPanel - 2 * kPad;
  for (const auto* r : rows) {
    const double x = r->scale_norm / xmax * (kPanel - 20) + 10;
    const double y = ph - (r->shift_norm / ymax * (ph - 20) + 10);
    os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"4\" fill=\"steelblue\"/>"
       << "<text x=\"" << x + 6 << "\" y=\"" << y - 4 << "\">" << r->source << "</text>\n";
  }
  os << "<text x=\"" << kPanel / 2 << "\" y=\"" << ph + 16
     << "\" text-anchor=\"middle\">||gamma-1||</text>\n";
  os << "<text x=\"-8\" y=\"" << ph / 2 << "\" text-anchor=\"end\">||beta||</text>\n</g>\n";
  // Strip chart: one row per pair, scale (circle) and shift (square) on [-1, 1].
  const double sx = kPad * 2 + kPanel + 40, sw = kW - sx - kPad;
  os << "<g transform=\"translate(" << sx << "," << kPad << ")\">\n";
  os << "<line x1=\"" << sw / 2 << "\" y1=\"0\" x2=\"" << sw / 2 << "\" y2=\"" << ph
     << "\" stroke=\"#bbb\"/>\n";
  const auto pairs = report.pairs();
  const double step = pairs.empty() ? 0 : ph / static_cast<double>(pairs.size() + 1);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    const double y = step * static_cast<double>(k + 1);
    os << "<text x=\"-6\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << report.sources[i] << "-"
       << report.sources[j] << "</text>\n";
    const auto& sc = report.scale[layer - 1][i][j];
    const auto& sh = report.shift[layer - 1][i][j];
    if (sc)
      os << "<circle cx=\"" << (*sc + 1) / 2 * sw << "\" cy=\"" << y
         << "\" r=\"4\" fill=\"darkorange\"/>\n";
    if (sh)
      os << "<rect x=\"" << (*sh + 1) / 2 * sw - 4 << "\" y=\"" << y - 4
         << "\" width=\"8\" height=\"8\" fill=\"seagreen\"/>\n";
  }
  os << "<text x=\"0\" y=\"" << ph + 16 << "\">-1</text><text x=\"" << sw << "\" y=\"" << ph + 16
     << "\" text-anchor=\"end\">1</text>\n";
  os << "<text x=\"" << sw / 2 << "\" y=\"" << ph + 30
     << "\" text-anchor=\"middle\">cosine (circle: scale, square: shift)</text>\n</g>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace

void export_analysis(const SimilarityReport& report, const NormTable& norms,
                     const std::optional<GroupPartition>& partition,
                     const std::filesystem::path& out_dir, double threshold) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw FormatError(out_dir.string() + ": " + ec.message());

  std::ostringstream sim;
  sim << "layer,source_a,source_b,scale_sim,shift_sim\n";
  for (Index l = 0; l < report.layer_count(); ++l)
    for (auto [i, j] : report.pairs())
      sim << l + 1 << ',' << report.sources[i] << ',' << report.sources[j] << ','
          << fmt_opt(report.scale[l][i][j]) << ',' << fmt_opt(report.shift[l][i][j]) << '\n';
  write_text_file(out_dir / "similarity.csv", sim.str());

  std::ostringstream nt;
  nt << "layer,source,gamma_minus_one_norm,beta_norm,gamma_norm\n";
  for (const auto& r : norms)
    nt << r.layer << ',' << r.source << ',' << fmt(r.scale_norm) << ',' << fmt(r.shift_norm)
       << ',' << fmt(r.gamma_norm) << '\n';
  write_text_file(out_dir / "norms.csv", nt.str());

  Json g;
  g["threshold"] = threshold;
  Json summary = Json::array();
  for (auto [i, j] : report.pairs()) {
    Json e;
    e["pair"] = {report.sources[i], report.sources[j]};
    const auto sc = report.summary_scale[i][j], sh = report.summary_shift[i][j];
    e["scale"] = sc ? Json(*sc) : Json(nullptr);
    e["shift"] = sh ? Json(*sh) : Json(nullptr);
    summary.push_back(e);
  }
  g["summary"] = summary;
  if (partition) {
    g["groups"] = partition->groups;
    Json trace = Json::array();
    for (const auto& m : partition->trace)
      trace.push_back({{"left", m.left}, {"right", m.right}, {"distance", m.distance}});
    g["trace"] = trace;
  } else {
    g["groups"] = nullptr;
    g["warning"] = "all similarities undefined; parameters are still at initialization";
  }
  write_text_file(out_dir / "groups.json", g.dump(2) + "\n");

  for (Index l = 1; l <= report.layer_count(); ++l) {
    std::ostringstream name;
    name << "layer_" << std::setw(2) << std::setfill('0') << l << ".svg";
    write_text_file(out_dir / name.str(), svg_layer(report, norms, l));
  }
}

SimilarityReport read_similarity_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "layer,source_a,source_b,scale_sim,shift_sim")
    throw FormatError(path.string() + ": unexpected header");
  struct Row {
    Index layer;
    std::string a, b;
    std::optional<double> sc, sh;
  };
  std::vector<Row> rows;
  std::vector<std::string> sources;
  Index layers = 0;
  auto parse = [&](const std::string& s) -> std::optional<double> {
    if (s == "undefined") return std::nullopt;
    try {
      return std::stod(s);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad value '" + s + "'");
    }
  };
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw FormatError(path.string() + ": malformed row '" + line + "'");
    Row r{std::stoll(f[0]), f[1], f[2], parse(f[3]), parse(f[4])};
    layers = std::max(layers, r.layer);
    for (const auto* s : {&r.a, &r.b})
      if (std::find(sources.begin(), sources.end(), *s) == sources.end()) sources.push_back(*s);
    rows.push_back(std::move(r));
  }
  std::sort(sources.begin(), sources.end());
  SimilarityReport rep;
  rep.sources = sources;
  const Index S = static_cast<Index>(sources.size());
  rep.scale.assign(layers, square(S));
  rep.shift.assign(layers, square(S));
  auto idx = [&](const std::string& s) {
    return std::find(sources.begin(), sources.end(), s) - sources.begin();
  };
  for (const auto& r : rows) {
    const Index i = idx(r.a), j = idx(r.b), l = r.layer - 1;
    rep.scale[l][i][j] = rep.scale[l][j][i] = r.sc;
    rep.shift[l][i][j] = rep.shift[l][j][i] = r.sh;
  }
  summarize(rep);
  return rep;
}

}  // namespace styleseg
