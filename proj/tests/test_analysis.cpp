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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "styleseg/analysis.hpp"
#include "styleseg/container.hpp"
#include "styleseg/errors.hpp"

using namespace styleseg;
namespace fs = std::filesystem;

namespace {

void perturb(const ConditionBank& bank, Rng& rng) {
  for (auto& p : bank.parameters()) {
    Var v = p.var;
    for (Index i = 0; i < v.size(); ++i) v.mutable_value()[i] += rng.uniform(-0.5, 0.5);
  }
}

std::vector<double> values(const Var& v) {
  return std::vector<double>(v.value().data(), v.value().data() + v.size());
}

// Direct cosine, with the origin shift applied by the caller.
std::optional<double> cosine(std::vector<double> a, std::vector<double> b, double shift) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] -= shift;
    b[i] -= shift;
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) return std::nullopt;
  return dot / std::sqrt(na * nb);
}

SimilarityReport summary_only(std::vector<std::string> sources,
                              const std::vector<std::vector<double>>& sim) {
  SimilarityReport r;
  r.sources = std::move(sources);
  const std::size_t n = r.sources.size();
  r.summary_scale.assign(n, std::vector<std::optional<double>>(n));
  r.summary_shift = r.summary_scale;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) r.summary_scale[i][j] = r.summary_shift[i][j] = sim[i][j];
  return r;
}

std::vector<double> as_vec(std::initializer_list<double> v) { return v; }

}  // namespace

TEST_CASE("cosine examples") {
  const auto g = as_vec({2, 0.5, 3});
  CHECK(*scale_cosine(g, g) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(*scale_cosine(as_vec({1.5, 0.5, 2}), as_vec({0.5, 1.5, 0})) ==
        doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(std::abs(*scale_cosine(as_vec({1.5, 0.5}), as_vec({1.5, 1.5}))) <= 1e-15);
  CHECK(*shift_cosine(as_vec({0.3, -2}), as_vec({0.3, -2})) == doctest::Approx(1.0));
  CHECK(*shift_cosine(as_vec({1, 0}), as_vec({0, 1})) == 0.0);
  CHECK_FALSE(shift_cosine(as_vec({0, 0}), as_vec({1, 0})).has_value());
  CHECK_FALSE(scale_cosine(as_vec({1, 1}), as_vec({2, 0})).has_value());
  CHECK_THROWS_AS(scale_cosine(as_vec({1, 2}), as_vec({1})), DimensionError);
}

TEST_CASE("scale cosine is invariant to positive rescaling about one") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(6), b(6), b2(6);
    for (int i = 0; i < 6; ++i) {
      a[i] = rng.uniform(0, 2);
      b[i] = rng.uniform(0, 2);
    }
    const double k = rng.uniform(0.1, 5);
    for (int i = 0; i < 6; ++i) b2[i] = 1 + k * (b[i] - 1);
    CHECK(*scale_cosine(a, b2) == doctest::Approx(*scale_cosine(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("report on copied and initial banks") {
  const std::vector<Index> widths{3, 4, 5};
  auto bank = ConditionBank::for_mode(widths, ConditioningMode::per_source({"A", "B"}));
  SimilarityReport init = build_report(bank);
  CHECK(init.all_undefined());
  CHECK_THROWS_AS(discover_groups(init), ValidationError);

  Rng rng(3);
  perturb(bank, rng);
  const Index b = bank.resolve("B"), a = bank.resolve("A");
  for (Index l = 0; l < bank.layer_count(); ++l) {
    Var g = bank.gamma(l, b), be = bank.beta(l, b);
    g.mutable_value() = bank.gamma(l, a).value();
    be.mutable_value() = bank.beta(l, a).value();
  }
  SimilarityReport copy = build_report(bank);
  CHECK(copy.sources == std::vector<std::string>{"A", "B"});
  for (Index l = 0; l < copy.layer_count(); ++l) {
    CHECK(*copy.scale[l][0][1] == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(*copy.shift[l][0][1] == doctest::Approx(1.0).epsilon(1e-14));
  }
  const NormTable nt = build_norm_table(bank);
  REQUIRE(nt.size() == 6);
  for (std::size_t i = 0; i < nt.size(); i += 2) {
    CHECK(nt[i].scale_norm == nt[i + 1].scale_norm);
    CHECK(nt[i].shift_norm == nt[i + 1].shift_norm);
  }
}

TEST_CASE("report matches a direct recomputation") {
  const std::vector<Index> widths{3, 4, 5, 2};
  auto bank = ConditionBank::for_mode(widths, ConditioningMode::per_source({"C", "A", "B"}));
  Rng rng(21);
  perturb(bank, rng);
  SimilarityReport r = build_report(bank);
  REQUIRE(r.sources == std::vector<std::string>{"A", "B", "C"});
  CHECK(r.pairs().size() == 3);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) {
      double ms = 0, mh = 0;
      for (Index l = 0; l < 4; ++l) {
        const Index si = bank.resolve(r.sources[i]), sj = bank.resolve(r.sources[j]);
        const double s =
            *cosine(values(bank.gamma(l, si)), values(bank.gamma(l, sj)), 1.0);
        const double h = *cosine(values(bank.beta(l, si)), values(bank.beta(l, sj)), 0.0);
        CHECK(std::abs(*r.scale[l][i][j] - s) <= 1e-12);
        CHECK(std::abs(*r.shift[l][i][j] - h) <= 1e-12);
        CHECK(*r.scale[l][i][j] == *r.scale[l][j][i]);
        ms += s / 4;
        mh += h / 4;
      }
      CHECK(std::abs(*r.summary_scale[i][j] - ms) <= 1e-12);
      CHECK(std::abs(*r.summary_shift[i][j] - mh) <= 1e-12);
    }
}

TEST_CASE("group discovery examples") {
  const std::vector<std::vector<double>> sim{{1, 0.9, 0.1}, {0.9, 1, 0.05}, {0.1, 0.05, 1}};
  GroupPartition p = discover_groups(summary_only({"A", "B", "C"}, sim));
  CHECK(p.groups == std::vector<std::vector<std::string>>{{"A", "B"}, {"C"}});
  REQUIRE(p.trace.size() == 1);
  CHECK(p.trace[0].distance == doctest::Approx(0.1));

  GroupPartition single = discover_groups(summary_only({"A", "B", "C"}, sim), 0.95);
  CHECK(single.groups.size() == 3);

  const std::vector<std::vector<double>> ones(3, std::vector<double>(3, 1.0));
  CHECK(discover_groups(summary_only({"A", "B", "C"}, ones)).groups.size() == 1);

  // Same structure under other names and order.
  const std::vector<std::vector<double>> perm{{1, 0.05, 0.9}, {0.05, 1, 0.1}, {0.9, 0.1, 1}};
  GroupPartition q = discover_groups(summary_only({"x", "z", "y"}, perm));
  CHECK(q.groups == std::vector<std::vector<std::string>>{{"x", "y"}, {"z"}});

  CHECK_THROWS_AS(discover_groups(summary_only({"A"}, {{1.0}})), ValidationError);
}

TEST_CASE("average linkage on four sources") {
  // {A,B} and {C,D} are tight; cross pairs are dissimilar.
  const std::vector<std::vector<double>> sim{
      {1, 0.8, 0.2, 0.1}, {0.8, 1, 0.0, 0.3}, {0.2, 0.0, 1, 0.7}, {0.1, 0.3, 0.7, 1}};
  GroupPartition p = discover_groups(summary_only({"A", "B", "C", "D"}, sim));
  CHECK(p.groups == std::vector<std::vector<std::string>>{{"A", "B"}, {"C", "D"}});
  // Cross-cluster average similarity is 0.15, so a permissive threshold merges everything.
  CHECK(discover_groups(summary_only({"A", "B", "C", "D"}, sim), 0.1).groups.size() == 1);
}

TEST_CASE("analysis export") {
  const std::vector<Index> widths(14, 3);
  auto bank = ConditionBank::for_mode(widths, ConditioningMode::per_source({"A", "B", "C"}));
  Rng rng(5);
  perturb(bank, rng);
  const SimilarityReport r = build_report(bank);
  const auto part = discover_groups(r);
  const fs::path d1 = fs::temp_directory_path() / "styleseg_an1";
  const fs::path d2 = fs::temp_directory_path() / "styleseg_an2";
  fs::remove_all(d1);
  fs::remove_all(d2);
  export_analysis(r, build_norm_table(bank), part, d1, 0.5);
  export_analysis(r, build_norm_table(bank), part, d2, 0.5);
  for (const char* f : {"similarity.csv", "norms.csv", "groups.json", "layer_01.svg", "layer_14.svg"}) {
    REQUIRE(fs::exists(d1 / f));
    CHECK(read_text_file(d1 / f) == read_text_file(d2 / f));
  }
  const std::string csv = read_text_file(d1 / "similarity.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 14 * 3);
  const SimilarityReport back = read_similarity_csv(d1 / "similarity.csv");
  REQUIRE(back.sources == r.sources);
  for (auto [i, j] : r.pairs()) {
    CHECK(std::abs(*back.summary_scale[i][j] - *r.summary_scale[i][j]) <= 1e-12);
    CHECK(std::abs(*back.summary_shift[i][j] - *r.summary_shift[i][j]) <= 1e-12);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}
