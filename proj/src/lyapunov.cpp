#include "kinetic/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "kinetic/numeric.hpp"

namespace kinetic {

namespace {

constexpr double kLn2 = 0.69314718055994530942;

template <class S>
GrowthRecord castle_growth(const Generator& a, CastlePoint w, double T, Vec2d start, const EstimatorConfig& cfg,
                           double sign) {
  CastleEngine<S> eng(a);
  Vec2<S> v{S(start.x), S(start.y)};
  const DrivingFlow& flow = a.flow();
  CastlePoint cur = w;
  if (cfg.transient_time > 0.0) {
    eng.push(cur, sign * cfg.transient_time, v);
    cur = std::get<CastlePoint>(flow.evolve(cur, sign * cfg.transient_time));
  }
  GrowthRecord g;
  double g1 = eng.push(cur, sign * T / 2, v);
  cur = std::get<CastlePoint>(flow.evolve(cur, sign * T / 2));
  double g2 = eng.push(cur, sign * T / 2, v);
  g.value = (g1 + g2) / T;
  g.half_value = g1 / (T / 2);
  g.step_count = eng.pieces_applied();
  return g;
}

GrowthRecord rk_growth(const Generator& a, const DrivingState& w, double T, Vec2d start, const EstimatorConfig& cfg,
                       double sign) {
  const DrivingFlow& flow = a.flow();
  Vec2d v = normalized(start);
  DrivingState cur = w;
  GrowthRecord g;
  const double win = cfg.window_time;
  auto step_window = [&](double dt) {
    Propagator p = integrate(a, cur, sign * dt, cfg.integrator);
    g.step_count += p.step_count;
    v = p.matrix * v;
    cur = flow.evolve(cur, sign * dt);
  };
  for (double done = 0.0; done < cfg.transient_time;) {
    double dt = std::min(win, cfg.transient_time - done);
    step_window(dt);
    v = normalized(v);
    done += dt;
  }
  CompensatedSum logs;
  double half_elapsed = 0.0, half_log = 0.0;
  const double thr = cfg.integrator.renorm_threshold;
  double elapsed = 0.0;
  while (elapsed < T) {
    double dt = std::min(win, T - elapsed);
    step_window(dt);
    elapsed += dt;
    double n = norm(v);
    if (n > thr || n < 1.0 / thr) {
      logs.add(std::log(n));
      v = {v.x / n, v.y / n};
      ++g.renorm_count;
    }
    if (half_elapsed == 0.0 && elapsed >= T / 2) {
      half_elapsed = elapsed;
      half_log = logs.value() + std::log(norm(v));
    }
  }
  logs.add(std::log(norm(v)));
  g.value = logs.value() / T;
  g.half_value = half_log / half_elapsed;
  return g;
}

GrowthRecord growth_impl(const Generator& a, const DrivingState& w, double T, Vec2d start, const EstimatorConfig& cfg,
                         double sign) {
  if (!(T > 0.0)) throw std::invalid_argument("growth horizon must be positive");
  if (uses_castle(a, cfg)) {
    const CastlePoint& cp = std::get<CastlePoint>(w);
    if (cfg.precision_bits > 53) {
      PrecisionGuard guard(cfg.precision_bits);
      return castle_growth<MpReal>(a, cp, T, start, cfg, sign);
    }
    return castle_growth<double>(a, cp, T, start, cfg, sign);
  }
  return rk_growth(a, w, T, start, cfg, sign);
}

Vec2d start_vector(std::uint64_t seed, std::size_t index) {
  Rng rng(derive_seed(seed ^ 0x5bd1e995ULL, index));
  double phi = 3.141592653589793 * rng.uniform();
  return {std::cos(phi), std::sin(phi)};
}

}  // namespace

bool uses_castle(const Generator& a, const EstimatorConfig& cfg) {
  switch (cfg.method) {
    case PropagationMethod::rk45:
      return false;
    case PropagationMethod::castle:
      if (!a.fiber_constant()) throw std::invalid_argument("castle method requested for a non fiber-constant generator");
      return true;
    default:
      return a.fiber_constant();
  }
}

std::string method_tag(const Generator& a, const EstimatorConfig& cfg) {
  if (!uses_castle(a, cfg)) return "rk45";
  if (cfg.precision_bits > 53) return fmt::format("castle_exact_mpfr{}", cfg.precision_bits);
  return "castle_exact_double";
}

ScaledMat<double> propagate_scaled(const Generator& a, const DrivingState& w, double t, const EstimatorConfig& cfg) {
  ScaledMat<double> out;
  if (uses_castle(a, cfg)) {
    const CastlePoint& cp = std::get<CastlePoint>(w);
    if (cfg.precision_bits > 53) {
      PrecisionGuard guard(cfg.precision_bits);
      CastleEngine<MpReal> eng(a);
      ScaledMat<MpReal> m = eng.propagate(cp, t);
      int e = detail::binary_exponent(max_abs_entry(m.matrix));
      out.matrix = {to_double(detail::scale2(m.matrix.a, -e)), to_double(detail::scale2(m.matrix.b, -e)),
                    to_double(detail::scale2(m.matrix.c, -e)), to_double(detail::scale2(m.matrix.d, -e))};
      out.log_scale = m.log_scale + e * kLn2;
      return out;
    }
    CastleEngine<double> eng(a);
    out = eng.propagate(cp, t);
  } else {
    ScaledPropagator p = integrate_scaled(a, w, t, cfg.integrator, cfg.window_time);
    out.matrix = p.matrix;
    out.log_scale = p.log_scale;
  }
  int e = detail::binary_exponent(max_abs_entry(out.matrix));
  out.matrix = {std::ldexp(out.matrix.a, -e), std::ldexp(out.matrix.b, -e), std::ldexp(out.matrix.c, -e),
                std::ldexp(out.matrix.d, -e)};
  out.log_scale += e * kLn2;
  return out;
}

GrowthRecord growth_rate(const Generator& a, const DrivingState& w, double T, Vec2d start, const EstimatorConfig& cfg) {
  return growth_impl(a, w, T, start, cfg, 1.0);
}

GrowthRecord backward_growth_rate(const Generator& a, const DrivingState& w, double T, Vec2d start,
                                  const EstimatorConfig& cfg) {
  return growth_impl(a, w, T, start, cfg, -1.0);
}

double top_exponent(const Generator& a, const DrivingState& w, double T, const EstimatorConfig& cfg) {
  return growth_rate(a, w, T, {std::cos(1.0), std::sin(1.0)}, cfg).value;
}

SpectrumEstimate spectrum(const Generator& a, const std::vector<DrivingState>& ensemble, double T,
                          const EstimatorConfig& cfg, std::uint64_t seed, const SpectrumOptions& opts) {
  if (ensemble.empty()) throw std::invalid_argument("spectrum: ensemble must be nonempty");
  SpectrumEstimate s;
  s.horizon_time = T;
  s.ensemble_size = ensemble.size();
  s.method = method_tag(a, cfg);
  s.mean_trace = a.mean_trace();
  std::vector<double> full, half;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    GrowthRecord g = growth_rate(a, ensemble[i], T, start_vector(seed, i), cfg);
    full.push_back(g.value);
    half.push_back(g.half_value);
    s.renorm_count += g.renorm_count;
    s.step_count += g.step_count;
  }
  SampleStats sf = sample_stats(full), sh = sample_stats(half);
  s.member_lambda1 = full;
  s.lambda1 = sf.mean;
  s.lambda1_half = sh.mean;
  s.ci_statistical = sf.halfwidth95;
  s.horizon_drift = std::abs(sf.mean - sh.mean);
  s.ci_halfwidth = s.ci_statistical + s.horizon_drift;
  s.lambda2 = s.mean_trace - s.lambda1;
  if (opts.direct_cross_check) {
    std::vector<double> bfull, bhalf;
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
      DrivingState end = a.flow().evolve(ensemble[i], T);
      GrowthRecord g = backward_growth_rate(a, end, T, start_vector(seed ^ 0xabcdefULL, i), cfg);
      bfull.push_back(-g.value);
      bhalf.push_back(-g.half_value);
      s.step_count += g.step_count;
    }
    SampleStats bf = sample_stats(bfull), bh = sample_stats(bhalf);
    s.lambda2_direct = bf.mean;
    s.ci_direct = bf.halfwidth95 + std::abs(bf.mean - bh.mean);
    double gap = std::abs(s.lambda2_direct - s.lambda2);
    if (gap > 5.0 * (s.ci_halfwidth + s.ci_direct) && gap > rate_resolution(cfg)) {
      s.flagged = true;
      s.flag_reason = fmt::format("direct lambda2 {} disagrees with sum rule {} beyond 5 x ci", s.lambda2_direct,
                                  s.lambda2);
    }
  } else {
    s.lambda2_direct = s.lambda2;
  }
  if (s.lambda1 < s.lambda2) {
    // Ordering is structural; project onto the diagonal.
    s.lambda1 = s.lambda2 = 0.5 * s.mean_trace;
  }
  return s;
}

SpectrumEstimate spectrum(const Generator& a, std::size_t ensemble_size, double T, const EstimatorConfig& cfg,
                          std::uint64_t seed, const SpectrumOptions& opts) {
  return spectrum(a, a.flow().sample_mu(seed, ensemble_size), T, cfg, seed, opts);
}

OseledetsFrame oseledets_splitting(const Generator& a, const DrivingState& w, double T, const EstimatorConfig& cfg) {
  if (!(T > 0.0)) throw std::invalid_argument("oseledets_splitting: horizon must be positive");
  auto least_expanded = [&](double t) {
    ScaledMat<double> m = propagate_scaled(a, w, t, cfg);
    Vec2d v1, v2;
    right_singular_vectors(m.matrix, v1, v2);
    return v2;
  };
  OseledetsFrame f;
  f.e2 = least_expanded(T);
  f.e1 = least_expanded(-T);
  Vec2d e2h = least_expanded(T / 2);
  Vec2d e1h = least_expanded(-T / 2);
  f.residual = std::max(projective_distance(f.e1, e1h), projective_distance(f.e2, e2h));
  f.angle = std::asin(std::min(1.0, std::abs(cross(f.e1, f.e2))));
  f.flagged = f.residual > 1e-3 || f.angle < 1e-8;
  return f;
}

AngleProbe angle_subexponential_probe(const Generator& a, const DrivingState& w, double frame_horizon,
                                      const std::vector<double>& t_grid, const EstimatorConfig& cfg) {
  AngleProbe probe;
  std::vector<double> ts, vs;
  for (double t : t_grid) {
    if (!(t > 0.0)) throw std::invalid_argument("angle probe grid must exclude t <= 0");
    OseledetsFrame f = oseledets_splitting(a, a.flow().evolve(w, t), frame_horizon, cfg);
    double value = std::log(std::sin(f.angle)) / t;
    probe.series.push_back({t, value});
    ts.push_back(t);
    vs.push_back(value);
  }
  if (ts.size() >= 3) probe.fit = fit_line(ts, vs);
  return probe;
}

double rate_resolution(const EstimatorConfig& cfg) { return 10.0 * cfg.integrator.rtol; }

double script_L(const SpectrumEstimate& s) { return s.lambda1; }

double jump(const SpectrumEstimate& s) { return s.jump(); }

}  // namespace kinetic
