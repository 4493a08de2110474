#include <catch_amalgamated.hpp>

#include <cmath>

#include "kinetic/generator.hpp"
#include "kinetic/numeric.hpp"

using namespace kinetic;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SuspensionSpec castle_spec() {
  SuspensionSpec s;
  s.base_rotation = (std::sqrt(5.0) - 1.0) / 2.0;
  s.n0 = 24;
  s.q = std::sqrt(2.0);
  s.cut = 0.5;
  return s;
}

}  // namespace

TEST_CASE("kinetic generator has the companion form", "[generator]") {
  DrivingFlow f(TorusFlowSpec{std::sqrt(2.0) - 1.0});
  auto g = make_constant_kinetic(f, 3.0, 2.0);
  Mat2d m = g->evaluate(TorusPoint{0.1, 0.2});
  CHECK(m.a == 0.0);
  CHECK(m.b == 1.0);
  CHECK(m.c == -2.0);
  CHECK(m.d == -3.0);
  CHECK(g->is_kinetic());
  CHECK(g->mean_trace() == -3.0);
}

TEST_CASE("step field mean weights each piece by the roof", "[generator]") {
  const SuspensionSpec s = castle_spec();
  DrivingFlow f(s);
  auto alpha = CoefficientField::step({0.3, 0.7}, {1.0, 1.1, 0.95});
  // Pieces [0,0.3) and [0.3,0.5) under roof 25; [0.5,0.7) and [0.7,1) under 24+sqrt2.
  const double hi = s.roof_high();
  const double oracle = (0.3 * 25.0 * 1.0 + 0.2 * 25.0 * 1.1 + 0.2 * hi * 1.1 + 0.3 * hi * 0.95) / s.roof_integral();
  CHECK_THAT(alpha.mean(f), WithinAbs(oracle, 1e-14));
  CHECK(alpha.evaluate_base(0.31) == 1.1);
  CHECK(alpha.evaluate_base(0.7) == 0.95);
  auto g = make_kinetic(f, alpha, CoefficientField::constant(0.2));
  CHECK_THAT(g->mean_trace(), WithinAbs(-oracle, 1e-14));
  CHECK(g->fiber_constant());
}

TEST_CASE("step field validation", "[generator]") {
  CHECK_THROWS_AS(CoefficientField::step({0.5, 0.3}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(CoefficientField::step({0.5}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(CoefficientField::step({1.5}, {1, 2}), std::invalid_argument);
}

TEST_CASE("trig field mean is its constant term and bound dominates", "[generator][property]") {
  DrivingFlow f(TorusFlowSpec{(std::sqrt(5.0) - 1.0) / 2.0});
  auto c = CoefficientField::trig({{0, 0, 0.7, 0.0}, {1, 0, 0.3, 0.0}, {0, 1, 0.0, 0.2}, {2, -1, 0.1, 0.05}});
  CHECK_THAT(c.mean(f), WithinAbs(0.7, 1e-15));
  CHECK_THAT(c.derived_sup_bound(), WithinAbs(0.7 + 0.3 + 0.2 + 0.15, 1e-15));
  auto pts = f.sample_mu(8, 2000);
  for (const auto& w : pts) CHECK(std::abs(c.evaluate(w)) <= c.derived_sup_bound());
  const auto& p = std::get<TorusPoint>(pts[0]);
  const double twopi = 2.0 * 3.14159265358979323846;
  double direct = 0.7 + 0.3 * std::cos(twopi * p.x) + 0.2 * std::sin(twopi * p.y) +
                  0.1 * std::cos(twopi * (2 * p.x - p.y)) + 0.05 * std::sin(twopi * (2 * p.x - p.y));
  CHECK_THAT(c.evaluate(pts[0]), WithinAbs(direct, 1e-14));
}

TEST_CASE("sup-norm bound dominates sampled norms", "[generator][property]") {
  DrivingFlow f(castle_spec());
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto alpha = CoefficientField::step({0.4}, {rng.uniform(-2, 2), rng.uniform(-2, 2)});
    auto beta = CoefficientField::step({0.6}, {rng.uniform(-2, 2), rng.uniform(-2, 2)});
    auto g = make_kinetic(f, alpha, beta);
    for (const auto& w : f.sample_mu(trial, 200)) CHECK(op_norm(g->evaluate(w)) <= g->sup_norm_bound() + 1e-12);
  }
}

TEST_CASE("exact L1 norm agrees with Monte Carlo", "[generator]") {
  DrivingFlow f(castle_spec());
  auto g = make_kinetic(f, CoefficientField::step({0.3, 0.7}, {1.0, 1.1, 0.95}),
                        CoefficientField::step({0.5}, {0.16, 0.2}));
  double exact = l1_norm_exact(*g);
  NormEstimate mc = l1_norm(*g, 12, 40000);
  CHECK(std::abs(exact - mc.value) < 4.0 * mc.std_error + 1e-12);
  // Constant generator: the norm itself, operator 2-norm of [[0,1],[-2,-3]].
  auto c = make_constant_kinetic(f, 3.0, 2.0);
  const double s_max = std::sqrt((14.0 + std::sqrt(14.0 * 14.0 - 4.0 * 4.0)) / 2.0);
  CHECK_THAT(l1_norm_exact(*c), WithinRel(s_max, 1e-14));
}

TEST_CASE("castle window integral of a constant integrand is the flowbox mass", "[generator]") {
  const SuspensionSpec s = castle_spec();
  DrivingFlow f(s);
  auto g = make_constant_kinetic(f, 1.0, 1.0);
  double v = castle_window_integral(*g, 0.2, 0.3, 2.0, 3.0, [](const Mat2d&, double) { return 1.0; });
  CHECK_THAT(v, WithinAbs(0.1 / s.roof_integral(), 1e-15));
}

TEST_CASE("pass pieces cover the roof", "[generator][property]") {
  const SuspensionSpec s = castle_spec();
  DrivingFlow f(s);
  auto g = make_kinetic(f, CoefficientField::step({0.3}, {1.0, 2.0}), CoefficientField::constant(0.5));
  std::vector<PassPiece> pieces;
  for (double x : {0.0, 0.2999, 0.3, 0.5, 0.9}) {
    g->pass_pieces(x, pieces);
    REQUIRE_FALSE(pieces.empty());
    CHECK(pieces.front().begin == 0.0);
    CHECK_THAT(pieces.back().end, WithinAbs(s.roof(x), 1e-14));
    for (std::size_t i = 1; i < pieces.size(); ++i) CHECK(pieces[i].begin == pieces[i - 1].end);
    CHECK(pieces.front().matrix.d == -(x < 0.3 ? 1.0 : 2.0));
  }
}
