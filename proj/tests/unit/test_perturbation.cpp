#include <catch_amalgamated.hpp>

#include <cmath>

#include "kinetic/distance.hpp"
#include "kinetic/numeric.hpp"
#include "kinetic/perturbation.hpp"

using namespace kinetic;
using Catch::Matchers::WithinAbs;

namespace {

const double kGolden = (std::sqrt(5.0) - 1.0) / 2.0;

DrivingFlow castle_flow() {
  SuspensionSpec s;
  s.base_rotation = kGolden;
  s.n0 = 24;
  return DrivingFlow(s);
}

GeneratorPtr driven(const DrivingFlow& f) {
  return make_kinetic(f, CoefficientField::step({0.3, 0.7}, {1.0, 1.1, 0.95}),
                      CoefficientField::step({0.5}, {0.16, 0.2}));
}

// Hand-derived solution of x'' = -theta^2 x.
Mat2d elliptic(double theta, double t) {
  return {std::cos(theta * t), std::sin(theta * t) / theta, -theta * std::sin(theta * t), std::cos(theta * t)};
}

}  // namespace

TEST_CASE("rotation propagator is the elliptical rotation", "[perturbation]") {
  for (double theta : {kPi, 1.5 * kPi, 2 * kPi, 4.0}) {
    for (double t : {0.0, 0.25, 0.5, 1.0}) CHECK(max_abs_entry(rotation_propagator(theta, t) - elliptic(theta, t)) < 1e-15);
    Mat2d m = rotation_matrix(theta);
    CHECK(m.c == -theta * theta);
    CHECK_THAT(op_norm(m), WithinAbs(theta * theta, 1e-12));
  }
  DrivingFlow f(TorusFlowSpec{kGolden});
  CHECK_THROWS_AS(rotation_generator(f, 3.0), std::invalid_argument);
  CHECK_THROWS_AS(rotation_generator(f, 7.0), std::invalid_argument);
}

TEST_CASE("integrated rotation generator matches the closed form", "[perturbation]") {
  DrivingFlow f(TorusFlowSpec{kGolden});
  for (double theta : {kPi, 1.5 * kPi, 2 * kPi}) {
    auto g = rotation_generator(f, theta);
    IntegratorConfig c;
    c.rtol = 1e-13;
    c.atol = 1e-15;
    for (double t : {0.1, 0.37, 1.0}) CHECK(max_abs_entry(integrate(*g, TorusPoint{0.3, 0.6}, t, c).matrix - elliptic(theta, t)) < 1e-8);
  }
}

TEST_CASE("clockwise line angle", "[perturbation]") {
  CHECK_THAT(clockwise_line_angle({1, 0}, {1, 0}), WithinAbs(2 * kPi, 1e-15));
  CHECK_THAT(clockwise_line_angle({1, 0}, {-3, 0}), WithinAbs(2 * kPi, 1e-15));
  // e2 sits a quarter turn clockwise from e1 (and also a quarter turn counterclockwise).
  CHECK_THAT(clockwise_line_angle({1, 0}, {0, 1}), WithinAbs(1.5 * kPi, 1e-15));
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    Vec2d u{rng.normal(), rng.normal()}, v{rng.normal(), rng.normal()};
    double a = clockwise_line_angle(u, v);
    CHECK(a > kPi);
    CHECK(a <= 2 * kPi);
  }
}

TEST_CASE("swap angle sends u onto the line of v", "[perturbation][property]") {
  SwapSolution<double> e = solve_swap_theta({1, 0}, {0, 1});
  CHECK_THAT(e.theta, WithinAbs(1.5 * kPi, 1e-12));
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    Vec2d u = normalized(Vec2d{rng.normal(), rng.normal()});
    Vec2d v = normalized(Vec2d{rng.normal(), rng.normal()});
    SwapSolution<double> s = solve_swap_theta(u, v);
    REQUIRE(s.theta >= kPi);
    REQUIRE(s.theta <= 2 * kPi);
    Vec2d img = elliptic(s.theta, 1.0) * u;
    CHECK(projective_distance(img, v) < 1e-10);
    CHECK_THAT(s.gamma, WithinAbs(dot(img, v), 1e-9));
  }
}

TEST_CASE("multiprecision swap angle is accurate to the working precision", "[perturbation]") {
  PrecisionGuard guard(256);
  Vec2<MpReal> u{MpReal(1), MpReal("1e-30")};
  Vec2<MpReal> v{MpReal("0.3"), MpReal(1)};
  SwapSolution<MpReal> s = solve_swap_theta_mp(u, v);
  CHECK(static_cast<double>(abs(s.residual)) < 1e-60);
  SwapSolution<double> d = solve_swap_theta({1, 1e-30}, {0.3, 1});
  CHECK_THAT(static_cast<double>(s.theta), WithinAbs(d.theta, 1e-10));
}

TEST_CASE("local swap on the torus replaces A along one unit segment", "[perturbation]") {
  DrivingFlow f(TorusFlowSpec{kGolden});
  auto a = make_constant_kinetic(f, 3.0, 2.0);
  TorusPoint w{0.2, 0.3};
  auto b = build_local_swap(a, w, {1.0, -1.0}, {1.0, -2.0});
  Propagator p = integrate(*b, w, 1.0);
  CHECK(projective_distance(p.matrix * Vec2d{1.0, -1.0}, Vec2d{1.0, -2.0}) < 1e-8);
  CHECK(b->segment_offset(f.evolve(w, 0.5)).has_value());
  CHECK_FALSE(b->segment_offset(f.evolve(w, 1.5)).has_value());
  Mat2d outside = b->evaluate(f.evolve(w, 3.0));
  CHECK(outside.d == -3.0);
}

TEST_CASE("flowbox validation", "[perturbation]") {
  DrivingFlow f = castle_flow();
  auto a = make_constant_kinetic(f, 3.0, 2.0);
  CHECK_THROWS_AS(FlowboxPerturbation(a, IntervalUnion({{0.2, 0.3}}), 23.5, std::vector<double>{4.0}), std::invalid_argument);
  CHECK_THROWS_AS(FlowboxPerturbation(a, IntervalUnion({{0.2, 0.3}}), -1.0, std::vector<double>{4.0}), std::invalid_argument);
  auto torus_gen = make_constant_kinetic(DrivingFlow(TorusFlowSpec{std::sqrt(2.0) - 1.0}), 1, 1);
  CHECK_THROWS_AS(FlowboxPerturbation(torus_gen, IntervalUnion({{0.2, 0.3}}), 1.0, std::vector<double>{4.0}),
                  std::invalid_argument);
}

TEST_CASE("flowbox mean trace subtracts the swapped window", "[perturbation]") {
  DrivingFlow f = castle_flow();
  auto a = make_constant_kinetic(f, 3.0, 2.0);
  FlowboxPerturbation b(a, IntervalUnion({{0.2, 0.3}}), 2.0, std::vector<double>{4.0});
  const double mass = 0.1 / f.suspension().roof_integral();
  CHECK_THAT(b.mean_trace(), WithinAbs(-3.0 * (1.0 - mass), 1e-14));
  CHECK_THAT(b.flowbox_measure(), WithinAbs(mass, 1e-16));
  CHECK_THAT(b.sup_support_norm(), WithinAbs(16.0, 1e-12));
}

TEST_CASE("global perturbation keeps the budget and swaps exactly", "[perturbation]") {
  DrivingFlow f = castle_flow();
  auto a = driven(f);
  SpectrumEstimate sa = spectrum(*a, 16, 3000.0, EstimatorConfig{}, 2);
  GlobalPerturbationOptions o;
  o.epsilon = 0.1;
  o.seed = 4;
  GlobalPerturbationResult r = build_global_perturbation(a, sa, o);
  const FlowboxPerturbation& b = *r.perturbation;
  const BudgetRecord& bud = b.budget;
  // Budget arithmetic recomputed from the record.
  CHECK_THAT(bud.epsilon_prime, WithinAbs(0.1 / 0.9, 1e-15));
  CHECK(bud.bound == (bud.interval_length * (bud.L + kFourPiSquared)) * bud.measure_enforced);
  CHECK(bud.bound < bud.epsilon_prime);
  CHECK(bud.L >= bud.l1_norm);
  double hat = sigma_hat_p_flowbox_exact(*a, b, 1.0);
  CHECK(hat <= bud.bound);
  CHECK(bounded_distance(hat) < 0.1);
  REQUIRE_FALSE(b.cells.empty());
  for (const auto& c : b.cells) {
    PlanCheck pc = check_plan(b, c.centre, r.N, sa, o.eta, true, EstimatorConfig{});
    CHECK(pc.swap_residual < 1e-6);
    CHECK(pc.support_norm <= kFourPiSquared);
    CHECK(pc.unit_time_norm <= kNormEquivalenceC * std::exp(kFourPiSquared));
    CHECK(pc.decomposition_residual < 1e-6);
    CHECK(pc.growth_rate <= pc.growth_cap);
  }
  // Monte Carlo agrees with the exact support quadrature.
  DistanceEstimate mc = sigma_hat_p(*a, b, 1.0, {DistanceMethod::monte_carlo, 3, 400000});
  CHECK(std::abs(mc.value - hat) < 5.0 * mc.std_error + 1e-12);
}

TEST_CASE("infeasible budget and empty screen are reported", "[perturbation]") {
  DrivingFlow f = castle_flow();
  auto a = driven(f);
  SpectrumEstimate sa = spectrum(*a, 8, 2000.0, EstimatorConfig{}, 2);
  GlobalPerturbationOptions tight;
  tight.eta = 1e-6;
  CHECK_THROWS_AS(build_global_perturbation(a, sa, tight), ScreenEmptyError);
}
