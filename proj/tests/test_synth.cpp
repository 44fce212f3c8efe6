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
#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "styleseg/errors.hpp"
#include "styleseg/metrics.hpp"
#include "styleseg/synth.hpp"

using namespace styleseg;
namespace fs = std::filesystem;

namespace {

Mask blob(Index h, Index w, std::initializer_list<std::pair<Index, Index>> px) {
  Mask m(h, w);
  for (auto [y, x] : px) m(y, x) = 1;
  return m;
}

bool subset(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.bits.size(); ++i)
    if (a.bits[i] && !b.bits[i]) return false;
  return true;
}

Tensor blank_image(Index h, Index w, double marker) {
  Tensor t({2, h, w});
  t[h * w + (h / 2) * w + w / 2] = marker;
  return t;
}

CohortSpec small_spec(const std::string& source, StyleTransform style, std::uint64_t seed) {
  CohortSpec s;
  s.source = source;
  s.n_samples = 12;
  s.style = style;
  s.seed = seed;
  s.height = 32;
  s.width = 32;
  return s;
}

}  // namespace

TEST_CASE("style text round trip") {
  for (auto s : {StyleTransform::identity(), StyleTransform::remove_small(10),
                 StyleTransform::grow(1), StyleTransform::shrink(2),
                 StyleTransform::dilate_if_marker(2)})
    CHECK(parse_style(to_string(s)) == s);
  CHECK(to_string(StyleTransform::remove_small(10)) == "remove_small(10)");
  CHECK_THROWS_AS(parse_style("grow(x)"), ConfigError);
  CHECK_THROWS_AS(parse_style("grow(0)"), ConfigError);
  CHECK_THROWS_AS(parse_style("blur(1)"), ConfigError);
}

TEST_CASE("disc structuring element matches brute-force membership") {
  for (Index r = 0; r <= 4; ++r) {
    std::set<std::pair<Index, Index>> brute;
    for (Index dy = -6; dy <= 6; ++dy)
      for (Index dx = -6; dx <= 6; ++dx)
        if (dy * dy + dx * dx <= r * r) brute.insert({dy, dx});
    const auto d = disc_offsets(r);
    CHECK(std::set<std::pair<Index, Index>>(d.begin(), d.end()) == brute);
  }
  CHECK(disc_offsets(1).size() == 5);
  CHECK(disc_offsets(2).size() == 13);
}

TEST_CASE("apply_style examples") {
  const Tensor img = blank_image(9, 9, 0.0);
  const Mask empty(9, 9);
  for (auto s : {StyleTransform::identity(), StyleTransform::remove_small(10),
                 StyleTransform::grow(2), StyleTransform::shrink(1),
                 StyleTransform::dilate_if_marker(1)})
    CHECK(apply_style(empty, blank_image(9, 9, 1.0), s).empty());

  Mask nine(9, 9);
  for (Index y = 2; y < 5; ++y)
    for (Index x = 3; x < 6; ++x) nine(y, x) = 1;
  CHECK(apply_style(nine, img, StyleTransform::remove_small(10)).empty());
  CHECK(apply_style(nine, img, StyleTransform::remove_small(8)) == nine);

  const Mask dot = blob(9, 9, {{4, 4}});
  CHECK(apply_style(dot, img, StyleTransform::grow(1)) ==
        blob(9, 9, {{3, 4}, {4, 3}, {4, 4}, {4, 5}, {5, 4}}));
  CHECK(apply_style(dot, img, StyleTransform::grow(2)).count() == 13);
  CHECK(apply_style(nine, img, StyleTransform::shrink(1)) == blob(9, 9, {{3, 4}}));
  const Mask edge = blob(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}});
  CHECK(erode(edge, 1).empty());  // outside counts as background
}

TEST_CASE("dilate_if_marker uses the marker channel maximum with a strict threshold") {
  const Mask dot = blob(9, 9, {{4, 4}});
  auto style = StyleTransform::dilate_if_marker(1);
  CHECK(apply_style(dot, blank_image(9, 9, 0.5), style) == dot);
  CHECK(apply_style(dot, blank_image(9, 9, 0.51), style).count() == 5);
  CHECK_FALSE(image_has_marker(blank_image(9, 9, 0.5)));
  CHECK(image_has_marker(blank_image(9, 9, 0.9)));
}

TEST_CASE("style algebra on random masks") {
  Rng rng(31);
  const Tensor img = blank_image(16, 16, 0.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Mask m = oracle::random_mask(rng, 16, 16, 0.2 + 0.3 * rng.uniform());
    const Mask rs = remove_small_components(m, 6);
    CHECK(remove_small_components(rs, 6) == rs);
    CHECK(subset(rs, m));
    const Components cc = connected_components(rs);
    for (Index s : cc.sizes) CHECK(s > 6);
    const Mask g1 = dilate(m, 1), g2 = dilate(m, 2);
    CHECK(subset(m, g1));
    CHECK(subset(g1, g2));
    CHECK(subset(erode(m, 1), m));
    CHECK(subset(erode(m, 2), erode(m, 1)));
    const Tensor marked = blank_image(16, 16, 1.0);
    CHECK(subset(m, apply_style(m, marked, StyleTransform::dilate_if_marker(1))));
    CHECK(apply_style(m, img, StyleTransform::dilate_if_marker(1)) == m);
    // Brute-force dilation oracle.
    Mask brute(16, 16);
    for (Index y = 0; y < 16; ++y)
      for (Index x = 0; x < 16; ++x)
        for (Index v = 0; v < 16; ++v)
          for (Index u = 0; u < 16; ++u)
            if (m(v, u) && (v - y) * (v - y) + (u - x) * (u - x) <= 4) brute(y, x) = 1;
    CHECK(g2 == brute);
  }
}

TEST_CASE("generate_cohort: contents and styles") {
  SUBCASE("identity labels equal base truths") {
    Cohort c = generate_cohort(small_spec("A", StyleTransform::identity(), 1));
    REQUIRE(c.samples.size() == 12);
    for (const auto& s : c.samples) {
      CHECK(s.label == s.base_truth);
      CHECK(s.image.shape() == Shape{2, 32, 32});
      CHECK(s.source == "A");
      CHECK_FALSE(s.has_marker);
      CHECK_FALSE(s.base_truth.empty());
      for (Index i = 0; i < s.image.size(); ++i)
        CHECK(static_cast<double>(static_cast<float>(s.image[i])) == s.image[i]);
    }
  }
  SUBCASE("remove_small leaves no component of 10 or fewer pixels") {
    Cohort c = generate_cohort(small_spec("A", StyleTransform::remove_small(10), 2));
    for (const auto& s : c.samples) {
      Mask comp = s.label;
      for (Index k = 0; k < connected_components(comp).count(); ++k)
        CHECK(connected_components(comp).sizes[k] > 10);
    }
  }
  SUBCASE("dilate_if_marker respects the marker flag") {
    CohortSpec spec = small_spec("G", StyleTransform::dilate_if_marker(2), 3);
    spec.marker_probability = 0.5;
    spec.n_samples = 30;
    Cohort c = generate_cohort(spec);
    int markers = 0;
    for (const auto& s : c.samples) {
      CHECK(image_has_marker(s.image) == s.has_marker);
      if (s.has_marker) {
        ++markers;
        CHECK(subset(s.base_truth, s.label));
        CHECK(s.label.count() > s.base_truth.count());
      } else {
        CHECK(s.label == s.base_truth);
      }
    }
    CHECK(markers > 0);
    CHECK(markers < 30);
  }
}

TEST_CASE("generation is pure in the seed and shared content seeds share base truths") {
  auto spec = small_spec("A", StyleTransform::identity(), 7);
  Cohort a = generate_cohort(spec), b = generate_cohort(spec, 3);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].label == b.samples[i].label);
  }
  Cohort g = generate_cohort(small_spec("B", StyleTransform::grow(1), 7));
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(g.samples[i].base_truth == a.samples[i].base_truth);
    CHECK(g.samples[i].label == dilate(a.samples[i].base_truth, 1));
  }
  Cohort other = generate_cohort(small_spec("A", StyleTransform::identity(), 8));
  CHECK_FALSE(other.samples[0].image == a.samples[0].image);
  const auto restyled = restyle(a.samples, StyleTransform::grow(1));
  CHECK(restyled[3].label == g.samples[3].label);
}

TEST_CASE("cohort spec validation") {
  auto spec = small_spec("A", StyleTransform::identity(), 1);
  spec.height = 30;
  CHECK_THROWS_AS(generate_cohort(spec), ValidationError);
  spec = small_spec("A", StyleTransform::identity(), 1);
  spec.radius_max = 16;
  CHECK_THROWS_AS(generate_cohort(spec), ValidationError);
  spec = small_spec("A", StyleTransform::identity(), 1);
  spec.marker_probability = 1.5;
  CHECK_THROWS_AS(generate_cohort(spec), ValidationError);
}

TEST_CASE("split examples") {
  SplitIndices s = split_indices(10, "A", 5);
  CHECK(s.train.size() == 6);
  CHECK(s.val.size() == 2);
  CHECK(s.test.size() == 2);
  SplitIndices again = split_indices(10, "A", 5);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  std::vector<Index> all;
  for (auto* part : {&s.train, &s.val, &s.test}) {
    CHECK(std::is_sorted(part->begin(), part->end()));
    all.insert(all.end(), part->begin(), part->end());
  }
  std::sort(all.begin(), all.end());
  for (Index i = 0; i < 10; ++i) CHECK(all[i] == i);
  CHECK_FALSE(split_indices(60, "B", 5).train == split_indices(60, "A", 5).train);
  CHECK_THROWS_AS(split_indices(2, "A", 5), ValidationError);
  CHECK_THROWS_AS(split_indices(10, "A", 5, {0.5, 0.2, 0.2}), ValidationError);
  Cohort c = generate_cohort(small_spec("A", StyleTransform::identity(), 1));
  CohortSplit cs = split_cohort(c, 5);
  CHECK(cs.train.size() + cs.val.size() + cs.test.size() == 12);
}

TEST_CASE("cohort container round trip") {
  const fs::path dir = fs::temp_directory_path() / "styleseg_test_cohort";
  fs::remove_all(dir);
  CohortSpec spec = small_spec("G", StyleTransform::dilate_if_marker(1), 4);
  spec.marker_probability = 0.5;
  spec.width = 24;  // odd byte padding of the bit-packed masks
  Cohort c = generate_cohort(spec);
  save_cohort(c, dir);
  Cohort back = load_cohort(dir);
  CHECK(back.spec.source == "G");
  CHECK(back.spec.style == spec.style);
  REQUIRE(back.samples.size() == c.samples.size());
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    CHECK(back.samples[i].image == c.samples[i].image);
    CHECK(back.samples[i].label == c.samples[i].label);
    CHECK(back.samples[i].base_truth == c.samples[i].base_truth);
    CHECK(back.samples[i].has_marker == c.samples[i].has_marker);
  }
  fs::resize_file(dir / "labels.bits", 3);
  CHECK_THROWS_AS(load_cohort(dir), FormatError);
  CHECK_THROWS_AS(load_cohort(dir / "nope"), FormatError);
  fs::remove_all(dir);
}
