#include <catch_amalgamated.hpp>

#include <cmath>

#include "kinetic/driving_flow.hpp"
#include "kinetic/numeric.hpp"

using namespace kinetic;
using Catch::Matchers::WithinAbs;

namespace {

const double kGolden = (std::sqrt(5.0) - 1.0) / 2.0;

SuspensionSpec castle_spec() {
  SuspensionSpec s;
  s.base_rotation = kGolden;
  s.n0 = 24;
  s.q = std::sqrt(2.0);
  s.cut = 0.5;
  return s;
}

}  // namespace

TEST_CASE("torus flow is the linear translation mod 1", "[flow]") {
  DrivingFlow f(TorusFlowSpec{kGolden});
  TorusPoint p = std::get<TorusPoint>(f.evolve(TorusPoint{0.25, 0.5}, 3.7));
  double x = std::fmod(0.25 + 3.7, 1.0);
  double y = std::fmod(0.5 + kGolden * 3.7, 1.0);
  CHECK_THAT(p.x, WithinAbs(x, 1e-14));
  CHECK_THAT(p.y, WithinAbs(y, 1e-14));
}

TEST_CASE("suspension flow climbs the fiber and jumps by the base rotation", "[flow]") {
  const SuspensionSpec s = castle_spec();
  DrivingFlow f(s);
  // x = 0.1 sits under the low roof 25; 30 time units carry it over once.
  CastlePoint p = std::get<CastlePoint>(f.evolve(CastlePoint{0.1, 3.0}, 30.0));
  const double x1 = 0.1 + kGolden;  // 0.718: high roof
  CHECK_THAT(p.x, WithinAbs(x1, 1e-14));
  CHECK_THAT(p.r, WithinAbs(3.0 + 30.0 - 25.0, 1e-12));
  // Two more laps: low roof at x1 is 24 + sqrt 2.
  CastlePoint q = std::get<CastlePoint>(f.evolve(CastlePoint{0.1, 3.0}, 30.0 + 24.0 + std::sqrt(2.0)));
  CHECK_THAT(q.x, WithinAbs(std::fmod(x1 + kGolden, 1.0), 1e-13));
  CHECK_THAT(q.r, WithinAbs(8.0, 1e-11));
}

TEST_CASE("flow group property and time reversal", "[flow][property]") {
  DrivingFlow f(castle_spec());
  DrivingFlow g(TorusFlowSpec{kGolden});
  Rng rng(99);
  for (const DrivingFlow* flow : {&f, &g}) {
    auto pts = flow->sample_mu(17, 40);
    for (const auto& w : pts) {
      double t = rng.uniform(-300.0, 300.0);
      double s = rng.uniform(-300.0, 300.0);
      auto a = flow->evolve(flow->evolve(w, s), t);
      auto b = flow->evolve(w, s + t);
      CHECK(flow->distance(a, b) < 1e-9);
      CHECK(flow->distance(flow->evolve(flow->evolve(w, t), -t), w) < 1e-9);
      CHECK(flow->valid(a));
    }
  }
}

TEST_CASE("sample_mu is deterministic and has the invariant marginals", "[flow]") {
  DrivingFlow f(castle_spec());
  auto a = f.sample_mu(5, 20000);
  auto b = f.sample_mu(5, 20000);
  REQUIRE(a.size() == 20000);
  double low = 0.0, r_mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& p = std::get<CastlePoint>(a[i]);
    const auto& q = std::get<CastlePoint>(b[i]);
    REQUIRE(p.x == q.x);
    REQUIRE(p.r == q.r);
    low += p.x < 0.5 ? 1.0 : 0.0;
    r_mean += p.r;
  }
  // Base marginal has density h(x) / int h; fiber time is uniform under the roof.
  const SuspensionSpec s = castle_spec();
  const double p_low = 0.5 * 25.0 / s.roof_integral();
  CHECK_THAT(low / 20000.0, WithinAbs(p_low, 0.015));
  const double r_expect = (0.5 * 25.0 * 25.0 / 2.0 + 0.5 * s.roof_high() * s.roof_high() / 2.0) / s.roof_integral();
  CHECK_THAT(r_mean / 20000.0, WithinAbs(r_expect, 0.2));
}

TEST_CASE("orbit arithmetic does not drift with n", "[flow][numeric]") {
  // Direct repeated addition vs the split product, against long double.
  long long n = 1000000;
  long double exact = std::fmod(0.3L + static_cast<long double>(n) * static_cast<long double>(kGolden), 1.0L);
  CHECK_THAT(rotate_orbit(0.3, kGolden, n), WithinAbs(static_cast<double>(exact), 1e-12));
  SuspensionSpec s = castle_spec();
  CHECK_THAT(s.base_map_inverse(s.base_map(0.77)), WithinAbs(0.77, 1e-15));
}

TEST_CASE("interval unions reject overlap and measure exactly", "[flow]") {
  IntervalUnion u({{0.5, 0.6}, {0.1, 0.2}});
  CHECK_THAT(u.measure(), WithinAbs(0.2, 1e-15));
  CHECK(u.contains(0.15));
  CHECK_FALSE(u.contains(0.2));
  CHECK(u.locate(0.55) == 1);
  CHECK(u.locate(0.3) == -1);
  CHECK_THROWS_AS(IntervalUnion({{0.1, 0.3}, {0.2, 0.4}}), std::invalid_argument);
  CHECK_THROWS_AS(IntervalUnion({{0.3, 0.3}}), std::invalid_argument);
  IntervalUnion v = u.united(IntervalUnion({{0.7, 0.8}}));
  CHECK_THAT(v.measure(), WithinAbs(0.3, 1e-15));
}

TEST_CASE("flowbox membership and measures", "[flow]") {
  const SuspensionSpec s = castle_spec();
  IntervalUnion base({{0.2, 0.25}});
  auto hit = flowbox_membership(s, CastlePoint{0.21, 2.5}, base, 2.0);
  REQUIRE(hit);
  CHECK_THAT(hit->offset, WithinAbs(0.5, 1e-15));
  CHECK_FALSE(flowbox_membership(s, CastlePoint{0.21, 3.5}, base, 2.0));
  CHECK_FALSE(flowbox_membership(s, CastlePoint{0.3, 2.5}, base, 2.0));
  CHECK_THROWS_AS(flowbox_membership(s, CastlePoint{0.21, 2.5}, base, 23.5), std::invalid_argument);
  CHECK_THROWS_AS(flowbox_membership(s, CastlePoint{0.21, 2.5}, base, -0.1), std::invalid_argument);
  CHECK_THAT(flowbox_measure_normalized(s, base), WithinAbs(0.05 / s.roof_integral(), 1e-17 + 1e-16 / s.roof_integral()));
  CHECK_THAT(flowbox_measure_unnormalized(base), WithinAbs(0.05, 1e-16));
}

TEST_CASE("seed derivation is stable and spreads indices", "[numeric]") {
  CHECK(derive_seed(1, 0) == derive_seed(1, 0));
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  Rng a(3), b(3);
  for (int i = 0; i < 10; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("compensated sum and line fit", "[numeric]") {
  CompensatedSum s;
  s.add(1e16);
  for (int i = 0; i < 1000; ++i) s.add(1.0);
  s.add(-1e16);
  CHECK(s.value() == 1000.0);
  LinearFit f = fit_line({1, 2, 3, 4}, {3, 5, 7, 9});
  CHECK_THAT(f.slope, WithinAbs(2.0, 1e-14));
  CHECK_THAT(f.intercept, WithinAbs(1.0, 1e-14));
}
