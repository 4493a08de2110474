#include "kinetic/propagator.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

#include "kinetic/numeric.hpp"

namespace kinetic {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

using Vec4 = std::array<double, 4>;

Vec4 to_vec(const Mat2d& m) { return {m.a, m.b, m.c, m.d}; }
Mat2d to_mat(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }

Vec4 axpy(const Vec4& y, double h, std::initializer_list<std::pair<double, const Vec4*>> terms) {
  Vec4 r = y;
  for (const auto& [c, k] : terms)
    for (int i = 0; i < 4; ++i) r[i] += h * c * (*k)[i];
  return r;
}

// Segment of flow time on which A is smooth. Evaluation points are clamped a
// hair inside so a stage sitting exactly on a jump sees the correct side.
struct Segment {
  const Generator* gen;
  const DrivingFlow* flow;
  DrivingState start;  // state at segment start
  double sign;         // +1 forward, -1 reversed time
  double length;
  double margin;

  Mat2d eval(double s_local) const {
    double s = std::clamp(s_local, margin, std::max(margin, length - margin));
    if (length <= 2 * margin) s = 0.5 * length;
    return gen->evaluate(flow->evolve(start, sign * s));
  }
};

struct StepStats {
  long long steps = 0;
  double max_error = 0.0;
};

void integrate_segment(const Segment& seg, Vec4& y, const IntegratorConfig& cfg, double& h_guess, StepStats& stats,
                       double global_time) {
  const double sign = seg.sign;
  auto f = [&](double s, const Vec4& v) {
    Mat2d a = seg.eval(s);
    Mat2d r = a * to_mat(v);
    return Vec4{sign * r.a, sign * r.b, sign * r.c, sign * r.d};
  };
  double s = 0.0;
  double h = std::min({h_guess, cfg.max_step_time, seg.length});
  Vec4 k1 = f(0.0, y);
  const double h_min = cfg.min_step_relative * std::max(1.0, std::abs(global_time) + seg.length);
  while (s < seg.length) {
    bool last = false;
    if (s + h >= seg.length) {
      h = seg.length - s;
      last = true;
    }
    Vec4 k2 = f(s + c2 * h, axpy(y, h, {{a21, &k1}}));
    Vec4 k3 = f(s + c3 * h, axpy(y, h, {{a31, &k1}, {a32, &k2}}));
    Vec4 k4 = f(s + c4 * h, axpy(y, h, {{a41, &k1}, {a42, &k2}, {a43, &k3}}));
    Vec4 k5 = f(s + c5 * h, axpy(y, h, {{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}));
    Vec4 k6 = f(s + h, axpy(y, h, {{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}));
    Vec4 yn = axpy(y, h, {{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}});
    Vec4 k7 = f(s + h, yn);
    double err = 0.0, abs_err = 0.0;
    for (int i = 0; i < 4; ++i) {
      double ei = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      double sc = cfg.atol + cfg.rtol * std::max(std::abs(y[i]), std::abs(yn[i]));
      err = std::max(err, std::abs(ei) / sc);
      abs_err = std::max(abs_err, std::abs(ei));
    }
    if (!std::isfinite(err)) err = 1e10;
    if (err <= 1.0) {
      s = last ? seg.length : s + h;
      y = yn;
      k1 = k7;
      ++stats.steps;
      stats.max_error = std::max(stats.max_error, abs_err);
      double factor = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
      if (!last) h = std::min(h * factor, cfg.max_step_time);
      else h_guess = std::min(h * factor, cfg.max_step_time);
    } else {
      h *= std::clamp(0.9 * std::pow(err, -0.25), 0.1, 0.5);
      if (h < h_min)
        throw IntegrationError(fmt::format("step size underflow (h = {:.3e}) at flow time {:.17g}", h,
                                           global_time + sign * s));
    }
  }
}

}  // namespace

void IntegratorConfig::validate() const {
  if (!(rtol > 0.0) || !(atol > 0.0)) throw std::invalid_argument("integrator tolerances must be positive");
  if (!(max_step_time > 0.0)) throw std::invalid_argument("max_step_time must be positive");
  if (!(renorm_threshold > 1.0)) throw std::invalid_argument("renorm_threshold must exceed 1");
}

Propagator integrate(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg) {
  cfg.validate();
  Propagator out;
  out.t = t;
  if (t == 0.0) return out;
  const double sign = t > 0 ? 1.0 : -1.0;
  const double total = std::abs(t);
  std::vector<double> bps;
  if (t > 0)
    a.breakpoints(w, 0.0, t, bps);
  else
    a.breakpoints(w, t, 0.0, bps);
  // Boundaries in the reversed variable s = sign * flow time, increasing.
  std::vector<double> cuts{0.0};
  for (double b : bps) cuts.push_back(sign * b);
  std::sort(cuts.begin(), cuts.end());
  cuts.push_back(total);
  Vec4 y = to_vec(Mat2d::identity());
  double h_guess = std::min(cfg.max_step_time, 1e-3);
  StepStats stats;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double len = cuts[i + 1] - cuts[i];
    if (!(len > 0.0)) continue;
    Segment seg{&a, &a.flow(), a.flow().evolve(w, sign * cuts[i]), sign, len, 1e-11};
    integrate_segment(seg, y, cfg, h_guess, stats, sign * cuts[i]);
  }
  out.matrix = to_mat(y);
  out.step_count = stats.steps;
  out.estimated_local_error = stats.max_error;
  return out;
}

ScaledPropagator integrate_scaled(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg,
                                  double window) {
  ScaledPropagator out;
  if (t == 0.0) return out;
  const double sign = t > 0 ? 1.0 : -1.0;
  const double total = std::abs(t);
  long long nwin = static_cast<long long>(std::ceil(total / window));
  DrivingState cur = w;
  for (long long k = 0; k < nwin; ++k) {
    double dt = std::min(window, total - static_cast<double>(k) * window);
    if (dt <= 0.0) break;
    Propagator p = integrate(a, cur, sign * dt, cfg);
    out.matrix = p.matrix * out.matrix;
    out.step_count += p.step_count;
    int e = 0;
    std::frexp(max_abs_entry(out.matrix), &e);
    out.matrix = {std::ldexp(out.matrix.a, -e), std::ldexp(out.matrix.b, -e), std::ldexp(out.matrix.c, -e),
                  std::ldexp(out.matrix.d, -e)};
    out.log_scale += e * 0.69314718055994530942;
    cur = a.flow().evolve(w, sign * (static_cast<double>(k) * window + dt));
  }
  return out;
}

double cocycle_defect(const Generator& a, const DrivingState& w, double t, double s, const IntegratorConfig& cfg) {
  Mat2d whole = integrate(a, w, t + s, cfg).matrix;
  Mat2d first = integrate(a, w, s, cfg).matrix;
  Mat2d second = integrate(a, a.flow().evolve(w, s), t, cfg).matrix;
  return op_norm(whole - second * first);
}

double integrate_along_orbit(const Generator& a, const DrivingState& w, double t0, double t1,
                             const std::function<double(const Mat2d&)>& f) {
  if (t1 == t0) return 0.0;
  if (t1 < t0) return -integrate_along_orbit(a, w, t1, t0, f);
  std::vector<double> bps;
  a.breakpoints(w, t0, t1, bps);
  std::vector<double> cuts{t0};
  for (double b : bps) {
    // Unit chunks keep Gauss-Kronrod well inside its comfort zone on smooth fields.
    while (b - cuts.back() > 1.0) cuts.push_back(cuts.back() + 1.0);
    cuts.push_back(b);
  }
  while (t1 - cuts.back() > 1.0) cuts.push_back(cuts.back() + 1.0);
  cuts.push_back(t1);
  CompensatedSum total;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double lo = cuts[i], hi = cuts[i + 1];
    if (!(hi > lo)) continue;
    DrivingState start = a.flow().evolve(w, lo);
    double len = hi - lo;
    auto g = [&](double s) {
      double u = std::clamp(s - lo, 0.0, len);
      return f(a.evaluate(a.flow().evolve(start, u)));
    };
    total.add(boost::math::quadrature::gauss_kronrod<double, 31>::integrate(g, lo, hi, 12, 1e-13));
  }
  return total.value();
}

GronwallGap gronwall_gap(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg) {
  if (t < 0.0) throw std::invalid_argument("gronwall_gap: t must be nonnegative");
  GronwallGap g;
  Mat2d phi = integrate(a, w, t, cfg).matrix;
  double integral = integrate_along_orbit(a, w, 0.0, t, [](const Mat2d& m) { return op_norm(m); });
  g.forward = {std::max(0.0, std::log(op_norm(phi))), integral};
  g.inverse = {std::max(0.0, std::log(op_norm(inverse(phi)))), integral};
  return g;
}

double liouville_defect(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg) {
  if (t < 0.0) throw std::invalid_argument("liouville_defect: t must be nonnegative");
  Mat2d phi = integrate(a, w, t, cfg).matrix;
  double tr = integrate_along_orbit(a, w, 0.0, t, [](const Mat2d& m) { return trace(m); });
  return std::abs(std::log(std::abs(det(phi))) - tr);
}

double inverse_consistency(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg) {
  Mat2d fwd = integrate(a, w, t, cfg).matrix;
  Mat2d back = integrate(a, a.flow().evolve(w, t), -t, cfg).matrix;
  return op_norm(fwd * back - Mat2d::identity());
}

}  // namespace kinetic
