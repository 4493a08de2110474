#include <catch_amalgamated.hpp>

#include <cmath>

#include "kinetic/distance.hpp"
#include "kinetic/numeric.hpp"
#include "kinetic/perturbation.hpp"

using namespace kinetic;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

DrivingFlow castle_flow() {
  SuspensionSpec s;
  s.base_rotation = (std::sqrt(5.0) - 1.0) / 2.0;
  s.n0 = 24;
  return DrivingFlow(s);
}

}  // namespace

TEST_CASE("distance between constant generators is the norm of the difference", "[distance]") {
  DrivingFlow f(TorusFlowSpec{std::sqrt(2.0) - 1.0});
  auto a = make_constant_kinetic(f, 3.0, 2.0);
  auto b = make_constant_kinetic(f, 1.0, 2.0);
  // A - B = [[0,0],[0,-2]] for every p.
  for (double p : {1.0, 2.0, 5.0}) {
    DistanceEstimate d = sigma_hat_p(*a, *b, p, {DistanceMethod::monte_carlo, 1, 2000});
    CHECK_THAT(d.value, WithinRel(2.0, 1e-13));
    CHECK_THAT(sigma_p(*a, *b, p).value, WithinRel(2.0 / 3.0, 1e-13));
  }
}

TEST_CASE("identity is exactly zero", "[distance]") {
  DrivingFlow f = castle_flow();
  auto a = make_kinetic(f, CoefficientField::step({0.3}, {1.0, 2.0}), CoefficientField::constant(0.4));
  CHECK(sigma_hat_p(*a, *a, 1.0).value == 0.0);
  CHECK(sigma_p(*a, *a, 3.0).value == 0.0);
}

TEST_CASE("bounded distance map", "[distance]") {
  CHECK(bounded_distance(0.0) == 0.0);
  CHECK(bounded_distance(1.0) == 0.5);
  CHECK(bounded_distance(INFINITY) == 1.0);
}

TEST_CASE("flowbox distance: exact support quadrature matches the closed form and Monte Carlo", "[distance]") {
  DrivingFlow f = castle_flow();
  const SuspensionSpec& s = f.suspension();
  auto a = make_constant_kinetic(f, 3.0, 2.0);
  const double theta = 4.0;
  auto b = std::make_shared<FlowboxPerturbation>(a, IntervalUnion({{0.2, 0.3}}), 2.0, std::vector<double>{theta});
  // ||A - P(theta)|| is constant on the box; the box has mass 0.1 / int h.
  const Mat2d diff = Mat2d{0.0, 1.0, -2.0, -3.0} - Mat2d{0.0, 1.0, -theta * theta, 0.0};
  const double mass = 0.1 / s.roof_integral();
  for (double p : {1.0, 2.0}) {
    const double oracle = op_norm(diff) * std::pow(mass, 1.0 / p);
    DistanceEstimate ex = sigma_hat_p(*a, *b, p, {DistanceMethod::exact_support, 1, 0});
    CHECK_THAT(ex.value, WithinRel(oracle, 1e-12));
    CHECK(ex.std_error == 0.0);
    DistanceEstimate mc = sigma_hat_p(*a, *b, p, {DistanceMethod::monte_carlo, 7, 200000});
    CHECK(std::abs(mc.value - oracle) < 4.0 * mc.std_error);
    CHECK_THAT(sigma_hat_p(*b, *a, p, {DistanceMethod::exact_support, 1, 0}).value, WithinRel(oracle, 1e-14));
  }
}

TEST_CASE("metric axioms and monotonicity in p on random pairs", "[distance][property]") {
  DrivingFlow f = castle_flow();
  Rng rng(31);
  auto random_gen = [&] {
    return make_kinetic(f, CoefficientField::step({0.4}, {rng.uniform(0, 3), rng.uniform(0, 3)}),
                        CoefficientField::step({0.7}, {rng.uniform(0, 3), rng.uniform(0, 3)}));
  };
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_gen();
    auto b = random_gen();
    auto c = random_gen();
    const DistanceOptions o{DistanceMethod::monte_carlo, derive_seed(5, trial), 20000};
    double prev = 0.0;
    for (double p : {1.0, 2.0, 4.0}) {
      DistanceEstimate ab = sigma_p(*a, *b, p, o);
      DistanceEstimate ba = sigma_p(*b, *a, p, o);
      CHECK_THAT(ab.value, WithinAbs(ba.value, 1e-12));
      // Same samples for every p, so the power-mean inequality holds exactly.
      CHECK(ab.value >= prev - 1e-12);
      prev = ab.value;
      DistanceEstimate ac = sigma_hat_p(*a, *c, p, o);
      DistanceEstimate cb = sigma_hat_p(*c, *b, p, o);
      DistanceEstimate abh = sigma_hat_p(*a, *b, p, o);
      CHECK(abh.value <= ac.value + cb.value + 1e-12);
    }
  }
}

TEST_CASE("mixed flows are rejected", "[distance]") {
  auto a = make_constant_kinetic(DrivingFlow(TorusFlowSpec{std::sqrt(2.0) - 1.0}), 1, 1);
  auto b = make_constant_kinetic(castle_flow(), 1, 1);
  CHECK_THROWS_AS(sigma_hat_p(*a, *b, 1.0), std::invalid_argument);
}

TEST_CASE("heavy-tail detector", "[distance]") {
  std::vector<double> tame(1000, 1.0);
  CHECK_FALSE(moments_unsettled(tame));
  std::vector<double> wild(1000, 1.0);
  wild[900] = 1e9;
  CHECK(moments_unsettled(wild));
}
