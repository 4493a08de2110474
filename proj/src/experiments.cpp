#include "kinetic/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>

#include <fmt/format.h>

#include "kinetic/numeric.hpp"

namespace kinetic {

namespace {

class Stopwatch {
 public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

bool is_constant_generator(const Generator& g) {
  if (const auto* k = dynamic_cast<const KineticGenerator*>(&g)) return k->alpha().is_constant() && k->beta().is_constant();
  if (const auto* gg = dynamic_cast<const GeneralGenerator*>(&g)) {
    for (const auto& e : gg->entries())
      if (!e.is_constant()) return false;
    return true;
  }
  return false;
}

const char* method_label(BudgetMeasure m) { return m == BudgetMeasure::normalized ? "normalized" : "unnormalized"; }

void report_spectrum_fields(Report& rep, const std::string& prefix, const SpectrumEstimate& s) {
  rep.kv(prefix + "lambda1", s.lambda1);
  rep.kv(prefix + "lambda2", s.lambda2);
  rep.kv(prefix + "lambda2_direct", s.lambda2_direct);
  rep.kv(prefix + "ci_halfwidth", s.ci_halfwidth);
  rep.kv(prefix + "ci_statistical", s.ci_statistical);
  rep.kv(prefix + "horizon_drift", s.horizon_drift);
  rep.kv(prefix + "ci_direct", s.ci_direct);
  rep.kv(prefix + "mean_trace", s.mean_trace);
  rep.kv(prefix + "jump", s.jump());
  rep.kv(prefix + "script_L", s.lambda1);
  rep.kv(prefix + "horizon_time", s.horizon_time);
  rep.kv(prefix + "ensemble_size", s.ensemble_size);
  rep.kv(prefix + "method", s.method);
  rep.kv(prefix + "renorm_count", s.renorm_count);
  rep.kv(prefix + "flagged", s.flagged);
  if (s.flagged) rep.kv(prefix + "flag_reason", s.flag_reason);
}

double mean_return_time(const FlowboxPerturbation& b) {
  return b.flow().suspension().roof_integral() / b.support().measure();
}

}  // namespace

int required_precision_bits(const Generator& g) {
  if (const auto* f = dynamic_cast<const FlowboxPerturbation*>(&g)) {
    int own = f->swap_mode() ? f->settings().precision_bits : 53;
    return std::max(own, required_precision_bits(*f->parent()));
  }
  if (const auto* l = dynamic_cast<const LocalSwapGenerator*>(&g)) return required_precision_bits(*l->parent());
  return 53;
}

SpectrumEstimate estimate_spectrum(const Generator& g, const EstimatorSettings& s, std::uint64_t seed) {
  EstimatorConfig cfg = s.estimator;
  cfg.precision_bits = std::max(cfg.precision_bits, required_precision_bits(g));
  if (cfg.precision_bits > 53 && cfg.method == PropagationMethod::automatic && g.fiber_constant())
    cfg.method = PropagationMethod::castle;
  SpectrumOptions opts;
  opts.direct_cross_check = s.direct_cross_check;
  return spectrum(g, s.ensemble_size, s.horizon_time, cfg, seed, opts);
}

// ---------------------------------------------------------------------------

std::vector<SpectrumRun> run_spectrum(const ExperimentConfig& cfg, std::uint64_t seed, Report& rep,
                                      CsvTable& convergence) {
  SpectrumSection sec = cfg.spectrum ? *cfg.spectrum : SpectrumSection{cfg.generator_order, {}, 8};
  std::vector<SpectrumRun> runs;
  for (std::size_t gi = 0; gi < sec.generators.size(); ++gi) {
    const std::string& name = sec.generators[gi];
    const Generator& g = *cfg.generator(name);
    Stopwatch sw;
    SpectrumRun run;
    run.name = name;
    run.constant_system = is_constant_generator(g);
    run.estimate = estimate_spectrum(g, cfg.estimator, derive_seed(seed, gi));
    const SpectrumEstimate& s = run.estimate;
    rep.section("spectrum." + name);
    rep.kv("generator", g.describe());
    report_spectrum_fields(rep, "", s);
    convergence.rows.push_back({name, num(s.horizon_time), num(s.lambda1), num(s.ci_halfwidth)});

    rep.verdict(name + ".ordering", exact_le(s.lambda2, s.lambda1), fmt::format("lambda1 {} >= lambda2 {}", num(s.lambda1), num(s.lambda2)));
    if (cfg.estimator.direct_cross_check) {
      double dev = std::abs(s.lambda1 + s.lambda2_direct - s.mean_trace);
      double band = 3.0 * (s.ci_halfwidth + s.ci_direct);
      rep.verdict(name + ".sum_rule", exact_lt(dev, std::max(band, rate_resolution(cfg.estimator.estimator))),
                  fmt::format("|lambda1 + lambda2_direct - mean trace| = {} < 3 x ci = {}", num(dev), num(band)));
      rep.verdict(name + ".cross_check", s.flagged ? Verdict::fail : Verdict::pass,
                  s.flagged ? s.flag_reason : "direct lambda2 agrees with the sum rule");
    }

    if (!sec.consistency_horizons_time.empty()) {
      EstimatorConfig ec = cfg.estimator.estimator;
      ec.precision_bits = std::max(ec.precision_bits, required_precision_bits(g));
      std::vector<DrivingState> ens = g.flow().sample_mu(derive_seed(seed, 1000 + gi), sec.consistency_ensemble_size);
      std::vector<double> logT, logd;
      std::vector<std::vector<std::string>> rows;
      for (double T : sec.consistency_horizons_time) {
        std::vector<double> a, b, d;
        for (const auto& w : ens) {
          a.push_back(top_exponent(g, w, T, ec));
          b.push_back(top_exponent(g, w, 2 * T, ec));
          d.push_back(std::abs(a.back() - b.back()));
        }
        SampleStats sa = sample_stats(a), sb = sample_stats(b), sd = sample_stats(d);
        run.consistency.push_back({T, sa.mean, sb.mean, sa.halfwidth95});
        convergence.rows.push_back({name, num(T), num(sa.mean), num(sa.halfwidth95)});
        convergence.rows.push_back({name, num(2 * T), num(sb.mean), num(sb.halfwidth95)});
        rows.push_back({num(T), num(sa.mean), num(sb.mean), num(sd.mean)});
        if (sd.mean > 0.0) {
          logT.push_back(std::log(T));
          logd.push_back(std::log(sd.mean));
        }
      }
      rep.table("horizon_consistency", {"horizon_time", "lambda1_T", "lambda1_2T", "mean_abs_diff"}, rows);
      if (logT.size() >= 2) {
        run.consistency_fit = fit_line(logT, logd);
        double exponent = -run.consistency_fit.slope;
        rep.kv("consistency_decay_exponent", exponent);
        rep.kv("consistency_decay_exponent_stderr", run.consistency_fit.slope_stderr);
        if (run.constant_system)
          rep.verdict(name + ".horizon_consistency", (exponent >= 0.8 && exponent <= 1.2) ? Verdict::pass : Verdict::fail,
                      fmt::format("|top(T) - top(2T)| decays like T^-{} (band [0.8, 1.2])", num(exponent)));
        else
          rep.note("decay exponent reported only; the O(1/T) band applies to constant systems");
      } else if (run.constant_system) {
        rep.verdict(name + ".horizon_consistency", Verdict::inconclusive, "fewer than two nonzero differences");
      }
    }
    rep.telemetry(fmt::format("spectrum.{}.wall_seconds", name), num(sw.seconds()));
    rep.telemetry(fmt::format("spectrum.{}.step_count", name), fmt::format("{}", s.step_count));
    runs.push_back(std::move(run));
  }
  return runs;
}

// ---------------------------------------------------------------------------

std::vector<DistanceRow> run_distance(const ExperimentConfig& cfg, std::uint64_t seed, Report& rep) {
  if (!cfg.distance) throw ConfigError("distance: missing 'distance' section");
  const DistanceSection& sec = *cfg.distance;
  std::vector<DistanceRow> rows;
  std::vector<double> ps = sec.p;
  std::sort(ps.begin(), ps.end());
  for (std::size_t i = 0; i < sec.pairs.size(); ++i) {
    const auto& [an, bn] = sec.pairs[i];
    const Generator& a = *cfg.generator(an);
    const Generator& b = *cfg.generator(bn);
    DistanceOptions o;
    o.method = sec.method;
    o.samples = sec.samples;
    o.seed = derive_seed(seed, 300 + i);
    rep.section(fmt::format("distance.{}.{}", an, bn));
    rep.kv("method", method_name(sec.method));
    std::vector<std::vector<std::string>> table;
    std::vector<DistanceRow> pair_rows;
    for (double p : ps) {
      DistanceRow r{an, bn, p, sigma_hat_p(a, b, p, o), {}};
      r.sigma = r.hat;
      r.sigma.value = bounded_distance(r.hat.value);
      if (!r.hat.infinite) r.sigma.std_error = r.hat.std_error / ((1 + r.hat.value) * (1 + r.hat.value));
      table.push_back({num(p), num(r.hat.value), num(r.hat.std_error), num(r.sigma.value), num(r.sigma.std_error),
                       fmt::format("{}", r.hat.samples)});
      pair_rows.push_back(r);
    }
    rep.table("sigma", {"p", "sigma_hat_p", "sigma_hat_p_stderr", "sigma_p", "sigma_p_stderr", "samples"}, table);
    for (std::size_t k = 0; k + 1 < pair_rows.size(); ++k) {
      const auto& lo = pair_rows[k];
      const auto& hi = pair_rows[k + 1];
      double ci = 1.96 * (lo.sigma.std_error + hi.sigma.std_error);
      rep.verdict(fmt::format("distance.{}.{}.monotone_p{}_p{}", an, bn, num(lo.p), num(hi.p)),
                  ci > 0 ? compare_le(lo.sigma.value, hi.sigma.value + 2 * ci, ci) : exact_le(lo.sigma.value, hi.sigma.value),
                  fmt::format("sigma_{} = {} <= sigma_{} = {}", num(lo.p), num(lo.sigma.value), num(hi.p), num(hi.sigma.value)));
    }
    if (an == bn)
      for (const auto& r : pair_rows)
        rep.verdict(fmt::format("distance.{}.{}.identity_p{}", an, bn, num(r.p)), r.sigma.value == 0.0 ? Verdict::pass : Verdict::fail,
                    fmt::format("sigma_p(A, A) = {}", num(r.sigma.value)));
    rows.insert(rows.end(), pair_rows.begin(), pair_rows.end());
  }
  return rows;
}

// ---------------------------------------------------------------------------

LowerRun run_lower(const GeneratorPtr& a, const SpectrumEstimate& spec_a, const LowerSection& s,
                   const EstimatorSettings& est, std::uint64_t seed, bool estimate_b) {
  LowerRun r;
  r.spec_a = spec_a;
  r.delta = s.delta_per_time;
  r.epsilon = s.epsilon;
  r.target = spec_a.midpoint() + s.delta_per_time;
  if (!(spec_a.jump() > spec_a.ci_halfwidth)) {
    r.trivial = true;
    return r;
  }
  GlobalPerturbationOptions opts = s.perturbation;
  opts.epsilon = s.epsilon;
  opts.seed = derive_seed(seed, 11);
  opts.estimator = est.estimator;
  try {
    r.perturbation = build_global_perturbation(a, spec_a, opts);
  } catch (const ScreenEmptyError& e) {
    r.error = e.what();
    return r;
  } catch (const BudgetInfeasibleError& e) {
    r.error = e.what();
    return r;
  }
  const FlowboxPerturbation& b = *r.perturbation.perturbation;
  r.b = r.perturbation.perturbation;
  r.sigma_hat1 = sigma_hat_p_flowbox_exact(*a, b, 1.0);
  r.sigma1 = bounded_distance(r.sigma_hat1);

  if (estimate_b) {
    EstimatorConfig cfg = est.estimator;
    cfg.method = PropagationMethod::castle;
    cfg.precision_bits = std::max(r.perturbation.precision_bits, required_precision_bits(b));
    r.b_horizon_time = std::max(s.b_horizon_time, s.b_min_returns * mean_return_time(b));
    SpectrumOptions so;
    so.direct_cross_check = est.direct_cross_check;
    r.spec_b = spectrum(b, s.b_ensemble_size, r.b_horizon_time, cfg, derive_seed(seed, 12), so);
    r.b_estimated = true;
  }

  // Cell centres first (these get the RK45 decomposition), then every other
  // plan installed so far.
  std::vector<double> xs;
  for (const auto& c : b.cells) xs.push_back(c.centre);
  for (const auto& [x, p] : b.installed_plans())
    if (std::find(xs.begin(), xs.end(), x) == xs.end()) xs.push_back(x);
  EstimatorConfig ccfg = est.estimator;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    bool decomp = i < s.checked_plans;
    PlanCheck c = check_plan(b, xs[i], r.perturbation.N, spec_a, opts.eta, decomp, ccfg);
    r.worst_swap_residual = std::max(r.worst_swap_residual, c.swap_residual);
    r.worst_support_norm = std::max(r.worst_support_norm, c.support_norm);
    r.worst_unit_time_norm = std::max(r.worst_unit_time_norm, c.unit_time_norm);
    r.worst_growth_margin = std::max(r.worst_growth_margin, c.growth_rate - c.growth_cap);
    if (decomp) {
      r.worst_decomposition = std::max(r.worst_decomposition, c.decomposition_residual);
      ++r.decomposition_checks;
    }
    if (i < b.cells.size() || i < s.checked_plans) r.checks.push_back(c);
  }
  return r;
}

void report_lower(const LowerRun& r, const std::string& prefix, bool with_tstat, Report& rep) {
  rep.section(prefix + ".input");
  report_spectrum_fields(rep, "A.", r.spec_a);
  rep.kv("epsilon", r.epsilon);
  rep.kv("delta_per_time", r.delta);
  rep.kv("target_lambda1", r.target);
  if (r.trivial) {
    rep.note("jump within the estimator ci: the spectrum is already one-point, nothing to lower");
    rep.verdict(prefix + ".trivial_spectrum", Verdict::pass, "conclusion holds vacuously");
    return;
  }
  if (!r.error.empty()) {
    rep.kv("error", r.error);
    rep.verdict(prefix + ".construction", Verdict::fail, r.error);
    return;
  }
  const auto& res = r.perturbation;
  const FlowboxPerturbation& b = *res.perturbation;
  rep.section(prefix + ".perturbation");
  rep.kv("N_time", res.N);
  rep.kv("flowbox_offset_time", b.fiber_offset());
  rep.kv("precision_bits", res.precision_bits);
  rep.kv("frame_horizon_time", res.frame_horizon_time);
  rep.kv("longest_return_time", res.longest_return_time);
  rep.kv("mean_return_time", mean_return_time(b));
  std::size_t passed = 0;
  for (const auto& sr : res.screen) passed += sr.passed ? 1 : 0;
  rep.kv("screen_candidates", res.screen.size());
  rep.kv("screen_passed", passed);
  std::vector<std::vector<std::string>> cells;
  for (const auto& c : b.cells)
    cells.push_back({num(c.lo), num(c.hi), num(c.centre_plan.theta), num(c.centre_plan.gamma), num(c.centre_plan.residual),
                     num(c.centre_plan.literal_angle), c.centre_plan.literal_angle_swaps ? "true" : "false",
                     num(c.frame_variation)});
  rep.table("support_cells", {"lo_base", "hi_base", "theta_rad_centre", "gamma", "swap_residual", "literal_angle_rad",
                              "literal_angle_swaps", "frame_variation"},
            cells);
  rep.kv("installed_plans", b.plan_count());
  const BudgetRecord& bud = b.budget;
  rep.section(prefix + ".budget");
  rep.kv("convention", method_label(bud.convention));
  rep.kv("epsilon", bud.epsilon);
  rep.kv("epsilon_prime", bud.epsilon_prime);
  rep.kv("interval_length_time", bud.interval_length);
  rep.kv("l1_norm_upper", bud.l1_norm);
  rep.kv("sup_norm_on_support_region", bud.sup_support_norm);
  rep.kv("L", bud.L);
  rep.kv("four_pi_squared", kFourPiSquared);
  rep.kv("measure_normalized", bud.measure_normalized);
  rep.kv("measure_unnormalized", bud.measure_unnormalized);
  rep.kv("measure_enforced", bud.measure_enforced);
  rep.kv("measure_cap", bud.measure_cap);
  rep.kv("bound", bud.bound);
  rep.kv("sigma_hat1_exact", r.sigma_hat1);
  rep.kv("sigma1_exact", r.sigma1);
  rep.kv("norm_equivalence_C", kNormEquivalenceC);
  rep.verdict(prefix + ".budget.sigma_hat1_le_bound", exact_le(r.sigma_hat1, bud.bound),
              fmt::format("sigma_hat1 {} <= (b-a)(L+4pi^2)m {}", num(r.sigma_hat1), num(bud.bound)));
  rep.verdict(prefix + ".budget.bound_lt_epsilon_prime", exact_lt(bud.bound, bud.epsilon_prime),
              fmt::format("bound {} < epsilon' {}", num(bud.bound), num(bud.epsilon_prime)));
  rep.verdict(prefix + ".budget.sigma1_lt_epsilon", exact_lt(r.sigma1, r.epsilon),
              fmt::format("sigma1 {} < epsilon {}", num(r.sigma1), num(r.epsilon)));

  rep.section(prefix + ".plan_checks");
  rep.kv("plans_checked", b.plan_count());
  rep.kv("decomposition_checks", r.decomposition_checks);
  rep.kv("worst_swap_residual", r.worst_swap_residual);
  rep.kv("worst_support_norm", r.worst_support_norm);
  rep.kv("worst_unit_time_norm", r.worst_unit_time_norm);
  rep.kv("worst_decomposition_residual", r.worst_decomposition);
  rep.kv("worst_growth_minus_cap", r.worst_growth_margin);
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : r.checks)
    rows.push_back({num(c.base), num(c.swap_residual), num(c.support_norm), num(c.unit_time_norm),
                    num(c.decomposition_residual), num(c.growth_rate), num(c.growth_cap)});
  rep.table("checked_plans", {"base", "swap_residual", "support_norm", "unit_time_norm", "decomposition_residual",
                              "growth_rate", "growth_cap"},
            rows);
  const double unit_cap = kNormEquivalenceC * std::exp(kFourPiSquared);
  rep.verdict(prefix + ".swap_exactness", exact_lt(r.worst_swap_residual, 1e-6),
              fmt::format("worst projective residual {} < 1e-6", num(r.worst_swap_residual)));
  rep.verdict(prefix + ".norm_ceiling", exact_le(r.worst_support_norm, kFourPiSquared),
              fmt::format("sup ||B|| on support {} <= 4 pi^2", num(r.worst_support_norm)));
  rep.verdict(prefix + ".unit_time_norm", exact_le(r.worst_unit_time_norm, unit_cap),
              fmt::format("||Phi_B(1)|| {} <= C e^(4 pi^2)", num(r.worst_unit_time_norm)));
  if (r.decomposition_checks > 0)
    rep.verdict(prefix + ".three_piece_decomposition", exact_lt(r.worst_decomposition, 1e-6),
                fmt::format("worst residual {} < 1e-6", num(r.worst_decomposition)));
  rep.verdict(prefix + ".growth_cap", exact_le(r.worst_growth_margin, 0.0),
              fmt::format("max growth - cap = {}", num(r.worst_growth_margin)));

  if (r.b_estimated) {
    rep.section(prefix + ".B");
    report_spectrum_fields(rep, "B.", r.spec_b);
    if (with_tstat)
      rep.verdict(prefix + ".tstat", compare_le(r.spec_b.lambda1, r.target, r.spec_b.ci_halfwidth),
                  fmt::format("lambda1(B) {} vs midpoint(A) + delta {} (ci {})", num(r.spec_b.lambda1), num(r.target),
                              num(r.spec_b.ci_halfwidth)));
  }
}

// ---------------------------------------------------------------------------

CollapseRun run_collapse(const ExperimentConfig& cfg, std::uint64_t seed, Report& rep, CsvTable& trace) {
  if (!cfg.collapse) throw ConfigError("collapse: missing 'collapse' section");
  const CollapseSection& sec = *cfg.collapse;
  const GeneratorPtr a0 = cfg.generator(sec.lower.generator);
  CollapseRun run;
  Stopwatch sw;
  SpectrumEstimate spec = estimate_spectrum(*a0, cfg.estimator, derive_seed(seed, 1));
  GeneratorPtr cur = a0;
  CollapseRound r0;
  r0.jump = spec.jump();
  r0.jump_ci = spec.ci_halfwidth;
  r0.script_L = spec.lambda1;
  r0.horizon_time = spec.horizon_time;
  r0.status = "start";
  run.rounds.push_back(r0);
  rep.section("collapse.round_0");
  report_spectrum_fields(rep, "A0.", spec);
  rep.telemetry("collapse.round_0.wall_seconds", num(sw.seconds()));

  double epsilon_sum = 0.0;
  bool all_decreasing = true;
  std::string stop = "max_rounds";
  for (int k = 1; k <= sec.max_rounds; ++k) {
    const CollapseRound& prev = run.rounds.back();
    if (prev.jump < sec.tol_per_time) {
      stop = "converged";
      break;
    }
    Stopwatch rsw;
    LowerSection ls = sec.lower;
    ls.epsilon = sec.lower.epsilon / std::pow(2.0, k);
    ls.delta_per_time = prev.jump / 2.0;
    LowerRun lr = run_lower(cur, spec, ls, cfg.estimator, derive_seed(seed, 100 + k), true);
    report_lower(lr, fmt::format("collapse.round_{}", k), false, rep);
    CollapseRound rd;
    rd.round = k;
    rd.epsilon_round = ls.epsilon;
    if (lr.trivial) {
      stop = "trivial";
      break;
    }
    if (!lr.error.empty()) {
      rd = prev;
      rd.round = k;
      rd.status = lr.error;
      run.rounds.push_back(rd);
      all_decreasing = false;
      stop = "construction_failed";
      break;
    }
    epsilon_sum += ls.epsilon;
    rd.jump = lr.spec_b.jump();
    rd.jump_ci = lr.spec_b.ci_halfwidth;
    rd.script_L = lr.spec_b.lambda1;
    rd.sigma1_round = lr.sigma1;
    rd.sigma1_cumulative = bounded_distance(sigma_hat_p_flowbox_exact(*a0, *lr.b, 1.0));
    rd.N = lr.perturbation.N;
    rd.precision_bits = lr.perturbation.precision_bits;
    rd.horizon_time = lr.b_horizon_time;
    rd.status = "lowered";
    Verdict dec = compare_le(rd.jump, prev.jump, rd.jump_ci + prev.jump_ci);
    if (dec != Verdict::pass) all_decreasing = false;
    rep.verdict(fmt::format("collapse.round_{}.jump_decrease", k), dec,
                fmt::format("jump {} -> {} (ci {} + {})", num(prev.jump), num(rd.jump), num(prev.jump_ci), num(rd.jump_ci)));
    run.rounds.push_back(rd);
    ++run.completed_rounds;
    rep.telemetry(fmt::format("collapse.round_{}.wall_seconds", k), num(rsw.seconds()));
    rep.telemetry(fmt::format("collapse.round_{}.installed_plans", k),
                  fmt::format("{}", lr.perturbation.perturbation->plan_count()));
    cur = lr.b;
    spec = lr.spec_b;
  }
  run.strictly_decreasing = all_decreasing && run.completed_rounds > 0;

  rep.section("collapse.trace");
  rep.note("desk-scale illustration of driving the spectrum to one point within total distance epsilon");
  rep.kv("stop_reason", stop);
  rep.kv("completed_rounds", run.completed_rounds);
  rep.kv("epsilon", sec.lower.epsilon);
  rep.kv("epsilon_rounds_sum", epsilon_sum);
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : run.rounds) {
    rows.push_back({fmt::format("{}", r.round), num(r.jump), num(r.jump_ci), num(r.script_L), num(r.sigma1_round),
                    num(r.sigma1_cumulative), num(r.epsilon_round), fmt::format("{}", r.N),
                    fmt::format("{}", r.precision_bits), num(r.horizon_time), r.status});
    if (r.status == "start" || r.status == "lowered")
      trace.rows.push_back({fmt::format("{}", r.round), num(r.jump), num(r.script_L), num(r.sigma1_cumulative)});
  }
  rep.table("rounds", {"round", "jump", "jump_ci", "script_L", "sigma1_round", "sigma1_cumulative", "epsilon_round", "N_time",
                       "precision_bits", "horizon_time", "status"},
            rows);
  double cum = run.rounds.back().sigma1_cumulative;
  rep.verdict("collapse.cumulative_sigma1_lt_epsilon", exact_lt(cum, sec.lower.epsilon),
              fmt::format("sigma1(A0, A_k) {} < epsilon {}", num(cum), num(sec.lower.epsilon)));
  rep.verdict("collapse.epsilon_series", exact_lt(epsilon_sum, sec.lower.epsilon),
              fmt::format("sum of round budgets {} < epsilon {}", num(epsilon_sum), num(sec.lower.epsilon)));
  if (stop != "converged" && stop != "trivial")
    rep.verdict("collapse.trace_decreasing", run.strictly_decreasing ? Verdict::pass : Verdict::fail,
                fmt::format("{} lowered rounds, stop reason {}", run.completed_rounds, stop));
  else
    rep.verdict("collapse.trace_decreasing", all_decreasing ? Verdict::pass : Verdict::fail,
                fmt::format("{} lowered rounds, stop reason {}", run.completed_rounds, stop));
  rep.telemetry("collapse.wall_seconds", num(sw.seconds()));
  return run;
}

// ---------------------------------------------------------------------------

UscRun run_usc_probe(const ExperimentConfig& cfg, std::uint64_t seed, Report& rep, CsvTable& scatter) {
  if (!cfg.usc) throw ConfigError("usc-probe: missing 'usc_probe' section");
  const UscSection& sec = *cfg.usc;
  const GeneratorPtr a = cfg.generator(sec.generator);
  if (!a->flow().is_suspension() || !a->fiber_constant())
    throw ConfigError("usc_probe: the generator must be fiber-constant over a suspension flow");
  const SuspensionSpec& sp = a->flow().suspension();
  if (!(sec.offset_time >= 0.0) || sec.offset_time + 1.0 > sp.n0)
    throw ConfigError("usc_probe.offset_time: the unit flowbox must fit under the roof");
  EstimatorConfig ec = cfg.estimator.estimator;
  ec.method = PropagationMethod::castle;
  SpectrumOptions so;
  so.direct_cross_check = false;
  const std::uint64_t lseed = derive_seed(seed, 500);
  UscRun run;
  SpectrumEstimate sa = spectrum(*a, sec.ensemble_size, sec.horizon_time, ec, lseed, so);
  run.script_L_a = sa.lambda1;
  run.ci_a = sa.ci_halfwidth;
  rep.section("usc_probe");
  rep.kv("generator", a->describe());
  rep.kv("script_L_A", sa.lambda1);
  rep.kv("script_L_A_ci", sa.ci_halfwidth);
  rep.kv("epsilon_per_time", sec.epsilon_per_time);
  rep.kv("threshold_delta", sec.threshold);
  rep.kv("p", sec.p);
  rep.note("one-sided probe: only script_L(B) <= script_L(A) + epsilon is judged");
  std::vector<PassPiece> pieces;
  std::vector<std::vector<std::string>> rows;
  Verdict overall = Verdict::pass;
  for (std::size_t n = 0; n < sec.scales.size(); ++n) {
    const double s = sec.scales[n];
    UscRow row;
    row.scale = s;
    if (s == 0.0) {
      row.identical = true;
      row.script_L = sa.lambda1;
      row.ci_halfwidth = sa.ci_halfwidth;
      row.horizon_time = sa.horizon_time;
      row.verdict = Verdict::pass;
    } else {
      Rng rng(derive_seed(seed, 200 + n));
      row.theta = kPi + kPi * rng.uniform();
      const double u = rng.uniform();
      const double x_target = s / (1.0 - s);
      // Per unit base length, the p-th power integrand at a probe point.
      a->pass_pieces(u, pieces);
      const Mat2d P = rotation_matrix(row.theta);
      double c = 0.0;
      for (const auto& pc : pieces) {
        double ov = std::min(pc.end, sec.offset_time + 1.0) - std::max(pc.begin, sec.offset_time);
        if (ov > 0) c += ov * std::pow(op_norm(pc.matrix - P), sec.p);
      }
      double leb = sp.roof_integral() * std::pow(x_target, sec.p) / c;
      if (!(leb < 0.5)) throw ConfigError(fmt::format("usc_probe: scale {} needs a base set of length {} (too large)", num(s), num(leb)));
      double lo = u * (1.0 - leb);
      row.support_base = leb;
      auto b = std::make_shared<FlowboxPerturbation>(a, IntervalUnion({{lo, lo + leb}}), sec.offset_time,
                                                     std::vector<double>{row.theta});
      row.sigma_hat_p = sigma_hat_p_flowbox_exact(*a, *b, sec.p);
      row.horizon_time = std::min(sec.max_horizon_time,
                                  std::max(sec.horizon_time, sec.min_returns * sp.roof_integral() / leb));
      SpectrumEstimate sb = spectrum(*b, sec.ensemble_size, row.horizon_time, ec, lseed, so);
      row.script_L = sb.lambda1;
      row.ci_halfwidth = sb.ci_halfwidth;
    }
    row.sigma_p = bounded_distance(row.sigma_hat_p);
    if (row.identical) {
      rep.verdict(fmt::format("usc.scale_{}.identity", n), row.script_L == sa.lambda1 ? Verdict::pass : Verdict::fail,
                  "s = 0 member is A itself");
    } else if (s <= sec.threshold) {
      row.judged = true;
      row.verdict = compare_le(row.script_L, sa.lambda1 + sec.epsilon_per_time, row.ci_halfwidth + sa.ci_halfwidth);
      rep.verdict(fmt::format("usc.scale_{}.upper_band", n), row.verdict,
                  fmt::format("script_L(B) {} <= script_L(A) + epsilon {} (ci {})", num(row.script_L),
                              num(sa.lambda1 + sec.epsilon_per_time), num(row.ci_halfwidth + sa.ci_halfwidth)));
      if (row.verdict == Verdict::fail) overall = Verdict::fail;
      else if (row.verdict == Verdict::inconclusive && overall == Verdict::pass) overall = Verdict::inconclusive;
    }
    rows.push_back({num(s), num(row.sigma_p), num(row.sigma_hat_p), num(row.theta), num(row.support_base),
                    num(row.script_L), num(row.ci_halfwidth), num(row.horizon_time), row.judged ? verdict_name(row.verdict) : "-"});
    scatter.rows.push_back({num(s), num(row.sigma_p), num(row.script_L), num(row.ci_halfwidth)});
    run.rows.push_back(row);
  }
  rep.table("probe", {"scale", "sigma_p", "sigma_hat_p", "theta_rad", "support_base_length", "script_L", "ci_halfwidth",
                      "horizon_time", "verdict"},
            rows);
  rep.kv("band_verdict", verdict_name(overall));
  return run;
}

// ---------------------------------------------------------------------------

CsvTable empty_convergence_table() { return {{"generator", "horizon_time", "lambda1", "ci_halfwidth"}, {}}; }
CsvTable empty_collapse_table() { return {{"round", "jump", "script_L", "sigma1_cumulative"}, {}}; }
CsvTable empty_usc_table() { return {{"scale", "sigma_p", "script_L", "ci_halfwidth"}, {}}; }

namespace {

struct Outputs {
  CsvTable convergence = empty_convergence_table();
  CsvTable collapse = empty_collapse_table();
  CsvTable usc = empty_usc_table();
};

std::uint64_t effective_seed(const ExperimentConfig& cfg, const RunOptions& o) { return o.seed_given ? o.seed : cfg.seed; }

Report start_report(const std::string& command, const ExperimentConfig& cfg, std::uint64_t seed) {
  Report rep;
  rep.section("run");
  rep.kv("command", command);
  rep.kv("seed", fmt::format("{}", seed));
  rep.kv("flow", cfg.flow->describe());
  rep.kv("norm", "operator 2-norm");
  for (const auto& name : cfg.generator_order) rep.kv("generator." + name, cfg.generator_descriptions.at(name));
  return rep;
}

int finish(const std::string& command, const ExperimentConfig& cfg, const RunOptions& o, const Report& rep,
           const Outputs& out, double seconds) {
  std::filesystem::create_directories(o.out_dir);
  const auto dir = std::filesystem::path(o.out_dir);
  std::string text = "kinetic-lab report\n\n[config]\n";
  text += cfg.source_text;
  if (!cfg.source_text.empty() && cfg.source_text.back() != '\n') text += '\n';
  text += "[end config]\n";
  text += rep.full_text();
  write_text_file((dir / "report.txt").string(), text);
  std::string tel = fmt::format("command = {}\nwall_seconds = {}\n", command, num(seconds));
  tel += rep.telemetry_text();
  write_text_file((dir / "telemetry.txt").string(), tel);
  out.convergence.write((dir / "convergence.csv").string());
  out.collapse.write((dir / "collapse_trace.csv").string());
  out.usc.write((dir / "usc_scatter.csv").string());
  return rep.exit_code();
}

}  // namespace

int cmd_spectrum(const ExperimentConfig& cfg, const RunOptions& o) {
  Stopwatch sw;
  const auto seed = effective_seed(cfg, o);
  Report rep = start_report("spectrum", cfg, seed);
  Outputs out;
  run_spectrum(cfg, seed, rep, out.convergence);
  return finish("spectrum", cfg, o, rep, out, sw.seconds());
}

int cmd_distance(const ExperimentConfig& cfg, const RunOptions& o) {
  Stopwatch sw;
  const auto seed = effective_seed(cfg, o);
  Report rep = start_report("distance", cfg, seed);
  Outputs out;
  run_distance(cfg, seed, rep);
  return finish("distance", cfg, o, rep, out, sw.seconds());
}

namespace {

int lower_like(const std::string& command, const ExperimentConfig& cfg, const RunOptions& o, bool estimate_b) {
  if (!cfg.lower) throw ConfigError(command + ": missing 'lower' (or 'perturb') section");
  Stopwatch sw;
  const auto seed = effective_seed(cfg, o);
  Report rep = start_report(command, cfg, seed);
  Outputs out;
  const GeneratorPtr a = cfg.generator(cfg.lower->generator);
  SpectrumEstimate sa = estimate_spectrum(*a, cfg.estimator, derive_seed(seed, 1));
  rep.telemetry("spectrum_A.wall_seconds", num(sw.seconds()));
  LowerRun r = run_lower(a, sa, *cfg.lower, cfg.estimator, seed, estimate_b);
  report_lower(r, command, estimate_b, rep);
  if (r.b) rep.telemetry("installed_plans", fmt::format("{}", r.perturbation.perturbation->plan_count()));
  if (r.b_estimated) rep.telemetry("spectrum_B.step_count", fmt::format("{}", r.spec_b.step_count));
  return finish(command, cfg, o, rep, out, sw.seconds());
}

}  // namespace

int cmd_perturb(const ExperimentConfig& cfg, const RunOptions& o) { return lower_like("perturb", cfg, o, false); }
int cmd_lower(const ExperimentConfig& cfg, const RunOptions& o) { return lower_like("lower", cfg, o, true); }

int cmd_collapse(const ExperimentConfig& cfg, const RunOptions& o) {
  Stopwatch sw;
  const auto seed = effective_seed(cfg, o);
  Report rep = start_report("collapse", cfg, seed);
  Outputs out;
  run_collapse(cfg, seed, rep, out.collapse);
  return finish("collapse", cfg, o, rep, out, sw.seconds());
}

int cmd_usc_probe(const ExperimentConfig& cfg, const RunOptions& o) {
  Stopwatch sw;
  const auto seed = effective_seed(cfg, o);
  Report rep = start_report("usc-probe", cfg, seed);
  Outputs out;
  run_usc_probe(cfg, seed, rep, out.usc);
  return finish("usc-probe", cfg, o, rep, out, sw.seconds());
}

}  // namespace kinetic
