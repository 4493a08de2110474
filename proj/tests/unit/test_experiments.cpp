#include <catch_amalgamated.hpp>

#include <cmath>

#include "kinetic/experiments.hpp"

using namespace kinetic;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

const char* kConstant = R"(seed: 4
flow: {kind: torus, rho: golden}
generators:
  damped: {kind: kinetic, alpha_per_time: 3.0, beta_per_time_squared: 2.0}
estimator: {ensemble_size: 4, horizon_time: 200.0}
)";

std::string expect_config_error(const std::string& text) {
  try {
    parse_config_text(text, "t.yaml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  FAIL("no ConfigError for:\n" << text);
  return {};
}

}  // namespace

TEST_CASE("config parses flows, fields and named rotations", "[config]") {
  ExperimentConfig c = parse_config_text(R"(
flow: {kind: suspension, base_rotation: golden, n0_time: 24}
generators:
  a:
    kind: kinetic
    alpha_per_time: {step: {breaks_base: [0.5], values: [1.0, 2.0]}}
    beta_per_time_squared: 0.5
  b: {kind: flowbox, parent: a, support_base: [[0.1, 0.2]], offset_time: 1.0, theta_rad: 4.0}
lower: {generator: a, epsilon: 0.05, eta_per_time: 0.3}
)");
  REQUIRE(c.flow->is_suspension());
  CHECK_THAT(c.flow->suspension().base_rotation, WithinAbs((std::sqrt(5.0) - 1.0) / 2.0, 1e-16));
  CHECK(c.generator_order == std::vector<std::string>{"a", "b"});
  CHECK(c.generator("a")->mean_trace() < 0.0);
  REQUIRE(c.lower);
  CHECK(c.lower->epsilon == 0.05);
  CHECK(c.lower->perturbation.eta == 0.3);
  CHECK(c.lower->perturbation.max_intervals == 1);
  CHECK(c.seed == 1);
}

TEST_CASE("config errors name the line and the field", "[config]") {
  std::string e = expect_config_error("flow: {kind: torus, rho: golden}\ngenerators:\n  g: {kind: kinetic, alpha_per_time: 1, beta_per_time_squared: 1, gamma: 2}\n");
  CHECK_THAT(e, ContainsSubstring("t.yaml:3:"));
  CHECK_THAT(e, ContainsSubstring("gamma"));
  CHECK_THAT(expect_config_error("flow: {kind: cylinder}\ngenerators: {}\n"), ContainsSubstring("flow.kind"));
  CHECK_THAT(expect_config_error(std::string(kConstant) + "lower: {generator: nope}\n"), ContainsSubstring("nope"));
  CHECK_THAT(expect_config_error(std::string(kConstant) + "estimator_typo: 1\n"), ContainsSubstring("estimator_typo"));
  CHECK_THAT(expect_config_error("flow: [\n"), ContainsSubstring("t.yaml:"));
  CHECK_THAT(expect_config_error(std::string(kConstant) + "lower: {generator: damped, epsilon: 1.5}\n"),
             ContainsSubstring("epsilon"));
}

TEST_CASE("verdict comparisons and exit codes", "[report]") {
  CHECK(compare_le(1.0, 2.0, 0.5) == Verdict::pass);
  CHECK(compare_le(2.0, 1.0, 0.5) == Verdict::fail);
  CHECK(compare_le(1.2, 1.0, 0.5) == Verdict::inconclusive);
  CHECK(exact_le(1.0, 1.0) == Verdict::pass);
  CHECK(exact_lt(1.0, 1.0) == Verdict::fail);
  Report r;
  CHECK(r.exit_code() == 0);
  r.verdict("a", Verdict::inconclusive, "");
  CHECK(r.exit_code() == 3);
  r.verdict("b", Verdict::fail, "");
  CHECK(r.exit_code() == 2);
  CHECK_THAT(r.full_text(), ContainsSubstring("b = FAIL"));
  CHECK(num(0.1) == "0.1");
  CHECK(num(INFINITY) == "inf");
}

TEST_CASE("plot tables keep their headers when empty", "[report]") {
  CHECK(empty_collapse_table().text() == "round,jump,script_L,sigma1_cumulative\n");
  CHECK(empty_usc_table().text() == "scale,sigma_p,script_L,ci_halfwidth\n");
  CHECK(empty_convergence_table().text() == "generator,horizon_time,lambda1,ci_halfwidth\n");
}

TEST_CASE("spectrum run is reproducible and judged", "[experiments]") {
  ExperimentConfig c = parse_config_text(kConstant);
  Report r1, r2;
  CsvTable t1 = empty_convergence_table(), t2 = empty_convergence_table();
  auto runs = run_spectrum(c, 9, r1, t1);
  run_spectrum(c, 9, r2, t2);
  CHECK(r1.full_text() == r2.full_text());
  CHECK(t1.text() == t2.text());
  REQUIRE(runs.size() == 1);
  CHECK_THAT(runs[0].estimate.lambda1, WithinAbs(-1.0, 1e-2));
  CHECK(r1.exit_code() == 0);
}

TEST_CASE("lowering a trivial spectrum is a no-op", "[experiments]") {
  ExperimentConfig c = parse_config_text(kConstant);
  DrivingFlow f(TorusFlowSpec{std::sqrt(2.0) - 1.0});
  auto a = make_constant_kinetic(f, 2.0, 1.0);  // double root: one-point spectrum
  SpectrumEstimate s;
  s.lambda1 = -1.0;
  s.lambda2 = -1.0;
  s.ci_halfwidth = 1e-3;
  LowerRun r = run_lower(a, s, LowerSection{}, c.estimator, 1, true);
  CHECK(r.trivial);
  Report rep;
  report_lower(r, "lower", true, rep);
  CHECK(rep.exit_code() == 0);
  CHECK_THAT(rep.text(), ContainsSubstring("nothing to lower"));
}

TEST_CASE("distance run reports zero self-distance", "[experiments]") {
  ExperimentConfig c = parse_config_text(R"(flow: {kind: torus, rho: golden}
generators:
  damped: {kind: kinetic, alpha_per_time: 3.0, beta_per_time_squared: 2.0}
  other: {kind: kinetic, alpha_per_time: 1.0, beta_per_time_squared: 2.0}
distance: {pairs: [[damped, damped], [damped, other]], p: [1, 2], samples: 500}
)");
  Report rep;
  auto rows = run_distance(c, 1, rep);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].sigma.value == 0.0);
  CHECK_THAT(rows[2].hat.value, WithinAbs(2.0, 1e-13));
  CHECK(rep.exit_code() == 0);
}
