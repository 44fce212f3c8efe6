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

#include <cmath>
#include <set>

#include "styleseg/conditional_norm.hpp"
#include "styleseg/errors.hpp"
#include "styleseg/gradcheck.hpp"

using namespace styleseg;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

void set_values(const Var& v, double fill) {
  Var w = v;
  w.mutable_value().fill(fill);
}

void perturb(const ConditionBank& bank, Rng& rng) {
  for (auto& p : bank.parameters()) {
    Var v = p.var;
    for (Index i = 0; i < v.size(); ++i) v.mutable_value()[i] += rng.uniform(-0.5, 0.5);
  }
}

}  // namespace

TEST_CASE("bank initialization and parameter naming") {
  auto bank = ConditionBank::for_mode({3, 5}, ConditioningMode::per_source({"A", "B"}));
  CHECK(bank.layer_count() == 2);
  CHECK(bank.set_count() == 2);
  for (Index l = 0; l < 2; ++l)
    for (Index s = 0; s < 2; ++s) {
      CHECK(bank.gamma(l, s).value() == Tensor({bank.widths()[l]}, 1.0));
      CHECK(bank.beta(l, s).value() == Tensor({bank.widths()[l]}, 0.0));
    }
  const auto ps = bank.parameters();
  REQUIRE(ps.size() == 8);
  CHECK(ps[0].name == "norm.L00.set0.gamma");
  CHECK(ps[1].name == "norm.L00.set0.beta");
  CHECK(ps[2].name == "norm.L00.set1.gamma");
  CHECK(bank.parameters_of_set(1).size() == 4);
}

TEST_CASE("resolve_parameter_set examples") {
  auto per = ConditioningMode::per_source({"A", "B", "C"});
  auto pb = ConditionBank::for_mode({2}, per);
  std::set<Index> ids;
  for (const char* s : {"A", "B", "C"}) ids.insert(resolve_parameter_set(s, per, pb));
  CHECK(ids.size() == 3);
  CHECK_THROWS_AS(resolve_parameter_set("D", per, pb), UnknownSource);

  auto grouped = ConditioningMode::grouped({{"A", "B"}, {"C"}});
  auto gb = ConditionBank::for_mode({2}, grouped);
  CHECK(resolve_parameter_set("B", grouped, gb) == resolve_parameter_set("A", grouped, gb));
  CHECK(resolve_parameter_set("C", grouped, gb) == 1);
  CHECK(resolve_parameter_set("A", grouped, gb) == 0);
  CHECK_THROWS_AS(resolve_parameter_set("Z", grouped, gb), UnknownSource);

  auto naive = ConditioningMode::naive();
  auto nb = ConditionBank::for_mode({2}, naive);
  CHECK(resolve_parameter_set("anything", naive, nb) == 0);
  CHECK(resolve_parameter_set("", naive, nb) == 0);
}

TEST_CASE("conditioning mode validation") {
  CHECK_THROWS_AS(ConditioningMode::grouped({{"A"}, {"A", "B"}}).validate(), ValidationError);
  CHECK_THROWS_AS(ConditioningMode::grouped({{"A"}, {}}).validate(), ValidationError);
  CHECK_THROWS_AS(ConditioningMode::per_source({"A", "A"}).validate(), ValidationError);
  CHECK(ConditioningMode::grouped({{"A", "B"}, {"C"}}).set_count() == 2);
  CHECK(conditioning_kind_from_string(to_string(ConditioningKind::PerSource)) ==
        ConditioningKind::PerSource);
}

TEST_CASE("scin_forward examples") {
  const double eps = 1e-5;
  auto mode = ConditioningMode::per_source({"A"});
  auto bank = ConditionBank::for_mode({1}, mode);
  std::vector<std::string> src{"A"};
  SUBCASE("init bank is plain instance normalization") {
    Rng rng(1);
    Tensor z = random_tensor({1, 1, 4, 4}, rng);
    Tensor y = scin_forward(Var(z), src, bank, 0).value();
    Tensor ref = instance_norm(Var(z), eps).value();
    for (Index i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-12);
  }
  SUBCASE("gamma 0, beta 7 gives a constant") {
    set_values(bank.gamma(0, 0), 0.0);
    set_values(bank.beta(0, 0), 7.0);
    Rng rng(2);
    Tensor y = scin_forward(Var(random_tensor({1, 1, 3, 3}, rng)), src, bank, 0).value();
    for (Index i = 0; i < y.size(); ++i) CHECK(y[i] == 7.0);
  }
  SUBCASE("hand evaluation on {2, 4}") {
    set_values(bank.gamma(0, 0), 2.0);
    set_values(bank.beta(0, 0), 1.0);
    Tensor y = scin_forward(Var(Tensor({1, 1, 1, 2}, std::vector<double>{2, 4})), src, bank, 0).value();
    CHECK(y[0] == doctest::Approx(1 - 2 / std::sqrt(1 + eps)).epsilon(1e-14));
    CHECK(y[1] == doctest::Approx(1 + 2 / std::sqrt(1 + eps)).epsilon(1e-14));
  }
  SUBCASE("unknown source") {
    std::vector<std::string> bad{"Q"};
    try {
      scin_forward(Var(Tensor({1, 1, 2, 2})), bad, bank, 0);
      FAIL("expected UnknownSource");
    } catch (const UnknownSource& e) {
      CHECK(e.id() == "Q");
    }
  }
}

TEST_CASE("scin: per-item sets, isolation and affinity") {
  Rng rng(4);
  auto mode = ConditioningMode::per_source({"A", "B"});
  auto bank = ConditionBank::for_mode({3}, mode);
  perturb(bank, rng);
  Tensor z = random_tensor({2, 3, 4, 4}, rng);
  std::vector<std::string> ab{"A", "B"}, aa{"A", "A"};
  Tensor y1 = scin_forward(Var(z), ab, bank, 0).value();
  Tensor y2 = scin_forward(Var(z), aa, bank, 0).value();
  for (Index i = 0; i < 48; ++i) CHECK(y1[i] == y2[i]);
  bool differs = false;
  for (Index i = 48; i < 96; ++i) differs = differs || y1[i] != y2[i];
  CHECK(differs);

  SUBCASE("a batch from one source leaves other sets without gradient") {
    for (auto& p : bank.parameters()) p.var.zero_grad();
    backward(sum(mul(scin_forward(Var(z), aa, bank, 0), Var(z))));
    for (auto& p : bank.parameters_of_set(1))
      for (Index i = 0; i < p.var.size(); ++i) CHECK(p.var.grad()[i] == 0.0);
    double norm = 0;
    for (auto& p : bank.parameters_of_set(0))
      for (Index i = 0; i < p.var.size(); ++i) norm += std::abs(p.var.grad()[i]);
    CHECK(norm > 0);
  }
  SUBCASE("affine in gamma") {
    const double a = 2.5;
    auto b2 = bank.clone();
    Tensor u = instance_norm(Var(z), kNormEps).value();
    for (Index l = 0; l < 1; ++l) {
      Var g = b2.gamma(0, 0);
      for (Index i = 0; i < g.size(); ++i) g.mutable_value()[i] *= a;
    }
    Tensor scaled = scin_forward(Var(z), aa, b2, 0).value();
    for (Index n = 0; n < 2; ++n)
      for (Index c = 0; c < 3; ++c)
        for (Index p = 0; p < 16; ++p) {
          const Index i = (n * 3 + c) * 16 + p;
          const double expect =
              a * bank.gamma(0, 0).value()[c] * u[i] + bank.beta(0, 0).value()[c];
          CHECK(scaled[i] == doctest::Approx(expect).epsilon(1e-13));
        }
  }
}

TEST_CASE("scin gradients pass finite differences") {
  Rng rng(8);
  auto bank = ConditionBank::for_mode({2}, ConditioningMode::per_source({"A", "B"}));
  perturb(bank, rng);
  Var z = Var::parameter(random_tensor({3, 2, 3, 3}, rng));
  std::vector<std::string> src{"B", "A", "B"};
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  auto ps = bank.parameters();
  ps.push_back({"z", z});
  auto r = check_gradients(ps, [&] { return sum(mul(scin_forward(z, src, bank, 0), Var(w))); });
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("bank add_parameter_set and clone") {
  Rng rng(2);
  auto bank = ConditionBank::for_mode({2, 3}, ConditioningMode::per_source({"A"}));
  perturb(bank, rng);
  const Index s = bank.add_parameter_set(0);
  bank.map_source("B", s);
  CHECK(bank.resolve("B") == 1);
  CHECK(bank.gamma(1, 1).value() == bank.gamma(1, 0).value());
  CHECK_FALSE(bank.gamma(1, 1).same_node(bank.gamma(1, 0)));
  const Index fresh = bank.add_parameter_set();
  CHECK(bank.gamma(0, fresh).value() == Tensor({2}, 1.0));
  auto copy = bank.clone();
  Var g = copy.gamma(0, 0);
  g.mutable_value()[0] = 42;
  CHECK(bank.gamma(0, 0).value()[0] != 42);
  auto shared = ConditionBank::for_mode({2}, ConditioningMode::naive());
  CHECK(shared.resolve("whatever") == 0);
  CHECK_THROWS_AS(shared.map_source("A", 0), ValidationError);
}

TEST_CASE("film generator examples") {
  Rng init(3);
  const std::vector<Index> widths{2, 2, 3, 3};
  FilmGenerator gen(2, widths, init);
  CHECK(gen.head_count() == 4);
  CHECK(gen.latent_size() == 32);
  Rng rng(5);
  Tensor img = random_tensor({2, 2, 16, 16}, rng);
  SUBCASE("identity at init") {
    auto out = gen.condition(Var(img));
    REQUIRE(out.size() == 4);
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(out[l].gamma.shape() == Shape{2, widths[l]});
      for (Index i = 0; i < out[l].gamma.size(); ++i) {
        CHECK(out[l].gamma.value()[i] == 1.0);
        CHECK(out[l].beta.value()[i] == 0.0);
      }
    }
  }
  SUBCASE("perturbed head separates images by the computable linear amount") {
    Var w = gen.head_parameters()[0].var;
    w.mutable_value()[0] += 1e-2;  // gamma of channel 0 reads latent feature 0
    Tensor img2 = random_tensor({2, 2, 16, 16}, rng, 0, 3);
    Tensor z1 = gen.latent(Var(img)).value(), z2 = gen.latent(Var(img2)).value();
    auto o1 = gen.condition(Var(img)), o2 = gen.condition(Var(img2));
    for (Index n = 0; n < 2; ++n) {
      CHECK(o1[0].gamma.value()[n * 2] == doctest::Approx(1.0 + 1e-2 * z1[n * 32]).epsilon(1e-14));
      CHECK(o2[0].gamma.value()[n * 2] == doctest::Approx(1.0 + 1e-2 * z2[n * 32]).epsilon(1e-14));
    }
    CHECK(z1[0] != z2[0]);
    CHECK(o1[0].gamma.value()[0] != o2[0].gamma.value()[0]);
  }
  SUBCASE("zero image with zero encoder bias gives the head bias") {
    auto heads = gen.head_parameters();
    for (auto& p : heads) {
      Var v = p.var;
      for (Index i = 0; i < v.size(); ++i) v.mutable_value()[i] = rng.uniform(-1, 1);
    }
    auto out = gen.condition(Var(Tensor({1, 2, 16, 16})));
    for (std::size_t l = 0; l < 4; ++l) {
      const Tensor& b = heads[2 * l + 1].var.value();
      for (Index c = 0; c < widths[l]; ++c) {
        CHECK(out[l].gamma.value()[c] == b[c]);
        CHECK(out[l].beta.value()[c] == b[widths[l] + c]);
      }
    }
  }
}
