#include "kinetic/driving_flow.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "kinetic/numeric.hpp"

namespace kinetic {

namespace {

constexpr double kRationalTolerance = 1e-14;
constexpr long long kRationalDenominator = 1000000;

double circle_gap(double a, double b) {
  double d = std::abs(a - b);
  return std::min(d, 1.0 - d);
}

void require_irrational(double value, const char* what) {
  double f = frac(value);
  if (rational_approximation_error(f, kRationalDenominator) <= kRationalTolerance)
    throw std::invalid_argument(fmt::format("{} = {} is rational with denominator <= 1e6", what, value));
}

}  // namespace

double SuspensionSpec::base_map(double x) const { return rotate_orbit(x, base_rotation, 1); }

double SuspensionSpec::base_map_inverse(double x) const { return rotate_orbit(x, base_rotation, -1); }

double roof(const SuspensionSpec& spec, double x) { return spec.roof(x); }

IntervalUnion::IntervalUnion(std::vector<std::pair<double, double>> intervals) : intervals_(std::move(intervals)) {
  std::sort(intervals_.begin(), intervals_.end());
  for (std::size_t i = 0; i < intervals_.size(); ++i) {
    const auto& [lo, hi] = intervals_[i];
    if (!(lo >= 0.0 && hi <= 1.0 && lo < hi))
      throw std::invalid_argument(fmt::format("interval [{}, {}) is not a nonempty subset of [0, 1)", lo, hi));
    if (i > 0 && intervals_[i - 1].second > lo)
      throw std::invalid_argument("intervals of an IntervalUnion must be disjoint");
  }
}

int IntervalUnion::locate(double x) const {
  auto it = std::upper_bound(intervals_.begin(), intervals_.end(), x,
                             [](double v, const std::pair<double, double>& iv) { return v < iv.first; });
  if (it == intervals_.begin()) return -1;
  --it;
  if (x >= it->first && x < it->second) return static_cast<int>(it - intervals_.begin());
  return -1;
}

bool IntervalUnion::contains(double x) const { return locate(x) >= 0; }

double IntervalUnion::measure() const {
  CompensatedSum s;
  for (const auto& [lo, hi] : intervals_) s.add(hi - lo);
  return s.value();
}

bool IntervalUnion::intersects(double lo, double hi) const {
  for (const auto& iv : intervals_)
    if (iv.first < hi && lo < iv.second) return true;
  return false;
}

IntervalUnion IntervalUnion::united(const IntervalUnion& other) const {
  std::vector<std::pair<double, double>> all = intervals_;
  all.insert(all.end(), other.intervals_.begin(), other.intervals_.end());
  std::sort(all.begin(), all.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& iv : all) {
    if (!merged.empty() && iv.first <= merged.back().second)
      merged.back().second = std::max(merged.back().second, iv.second);
    else
      merged.push_back(iv);
  }
  return IntervalUnion(std::move(merged));
}

DrivingFlow::DrivingFlow(TorusFlowSpec spec) : spec_(spec) {
  if (!std::isfinite(spec.rho)) throw std::invalid_argument("torus direction must be finite");
  require_irrational(spec.rho, "torus rho");
}

DrivingFlow::DrivingFlow(SuspensionSpec spec) : spec_(spec) {
  if (!(spec.base_rotation > 0.0 && spec.base_rotation < 1.0))
    throw std::invalid_argument("base_rotation must lie in (0, 1)");
  require_irrational(spec.base_rotation, "base_rotation");
  if (spec.n0 < 1) throw std::invalid_argument("n0 must be a positive integer");
  if (!(spec.q > 1.0)) throw std::invalid_argument("q must exceed 1");
  require_irrational(spec.q, "q");
  if (!(spec.cut > 0.0 && spec.cut < 1.0)) throw std::invalid_argument("cut must lie in (0, 1)");
}

const TorusFlowSpec& DrivingFlow::torus() const {
  if (!is_torus()) throw std::logic_error("flow is not a torus flow");
  return std::get<TorusFlowSpec>(spec_);
}

const SuspensionSpec& DrivingFlow::suspension() const {
  if (!is_suspension()) throw std::logic_error("flow is not a suspension flow");
  return std::get<SuspensionSpec>(spec_);
}

TorusPoint evolve_torus(const TorusFlowSpec& spec, TorusPoint w, double t) {
  if (t == 0.0) return w;
  double p = spec.rho * t;
  double e = std::fma(spec.rho, t, -p);
  return {frac(frac(t) + w.x), frac(frac(frac(p) + w.y) + e)};
}

CastlePoint evolve_castle(const SuspensionSpec& spec, CastlePoint w, double t) {
  if (t == 0.0) return w;
  const double lo = spec.roof_low(), hi = spec.roof_high();
  const double s = w.r + t;
  long long n = 0, n_lo = 0, n_hi = 0;
  double x = w.x;
  auto consumed = [&] { return static_cast<double>(n_lo) * lo + static_cast<double>(n_hi) * hi; };
  double offset;
  if (s >= 0.0) {
    for (;;) {
      double h = spec.roof(x);
      offset = s - consumed();
      if (offset < h) break;
      (h == lo ? n_lo : n_hi) += 1;
      x = rotate_orbit(w.x, spec.base_rotation, ++n);
    }
  } else {
    for (;;) {
      x = rotate_orbit(w.x, spec.base_rotation, --n);
      (spec.roof(x) == lo ? n_lo : n_hi) += 1;
      offset = s + consumed();
      if (offset >= 0.0) break;
    }
    if (offset >= spec.roof(x)) {
      offset -= spec.roof(x);
      x = rotate_orbit(w.x, spec.base_rotation, n + 1);
    }
  }
  if (offset < 0.0) offset = 0.0;
  return {x, offset};
}

DrivingState DrivingFlow::evolve(const DrivingState& w, double t) const {
  if (is_torus()) return evolve_torus(torus(), std::get<TorusPoint>(w), t);
  return evolve_castle(suspension(), std::get<CastlePoint>(w), t);
}

std::vector<DrivingState> DrivingFlow::sample_mu(std::uint64_t seed, std::size_t n) const {
  if (n == 0) throw std::invalid_argument("sample_mu: n must be at least 1");
  std::vector<DrivingState> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    if (is_torus()) {
      double x = rng.uniform();
      double y = rng.uniform();
      out.emplace_back(TorusPoint{x, y});
    } else {
      const auto& s = suspension();
      double p_low = s.cut * s.roof_low() / s.roof_integral();
      double level = rng.uniform();
      double u = rng.uniform();
      double v = rng.uniform();
      if (level < p_low)
        out.emplace_back(CastlePoint{s.cut * u, v * s.roof_low()});
      else
        out.emplace_back(CastlePoint{s.cut + (1.0 - s.cut) * u, v * s.roof_high()});
    }
  }
  return out;
}

double DrivingFlow::distance(const DrivingState& u, const DrivingState& v) const {
  if (is_torus()) {
    const auto& a = std::get<TorusPoint>(u);
    const auto& b = std::get<TorusPoint>(v);
    return circle_gap(a.x, b.x) + circle_gap(a.y, b.y);
  }
  const auto& s = suspension();
  const auto& a = std::get<CastlePoint>(u);
  const auto& b = std::get<CastlePoint>(v);
  double d = circle_gap(a.x, b.x) + std::abs(a.r - b.r);
  // The same point seen from the previous pass (fiber time beyond the roof).
  double ax = s.base_map_inverse(a.x);
  d = std::min(d, circle_gap(ax, b.x) + std::abs(a.r + s.roof(ax) - b.r));
  double bx = s.base_map_inverse(b.x);
  d = std::min(d, circle_gap(a.x, bx) + std::abs(a.r - b.r - s.roof(bx)));
  return d;
}

bool DrivingFlow::valid(const DrivingState& w) const {
  if (is_torus()) {
    if (!std::holds_alternative<TorusPoint>(w)) return false;
    const auto& p = std::get<TorusPoint>(w);
    return p.x >= 0.0 && p.x < 1.0 && p.y >= 0.0 && p.y < 1.0;
  }
  if (!std::holds_alternative<CastlePoint>(w)) return false;
  const auto& p = std::get<CastlePoint>(w);
  return p.x >= 0.0 && p.x < 1.0 && p.r >= 0.0 && p.r < suspension().roof(p.x);
}

bool DrivingFlow::same_as(const DrivingFlow& other) const {
  if (is_torus() != other.is_torus()) return false;
  if (is_torus()) return torus().rho == other.torus().rho;
  const auto& a = suspension();
  const auto& b = other.suspension();
  return a.base_rotation == b.base_rotation && a.n0 == b.n0 && a.q == b.q && a.cut == b.cut;
}

std::string DrivingFlow::describe() const {
  if (is_torus()) return fmt::format("torus(rho={})", torus().rho);
  const auto& s = suspension();
  return fmt::format("suspension(base_rotation={}, n0={}, q={}, cut={})", s.base_rotation, s.n0, s.q, s.cut);
}

std::optional<FlowboxHit> flowbox_membership(const SuspensionSpec& spec, const CastlePoint& w,
                                             const IntervalUnion& base_set, double a) {
  if (!(a >= 0.0) || a + 1.0 > static_cast<double>(spec.n0))
    throw std::invalid_argument(fmt::format("flowbox interval [{}, {}] crosses the roof (n0 = {})", a, a + 1.0, spec.n0));
  if (w.r < a || w.r > a + 1.0) return std::nullopt;
  if (!base_set.contains(w.x)) return std::nullopt;
  return FlowboxHit{w.x, w.r - a};
}

double flowbox_measure_normalized(const SuspensionSpec& spec, const IntervalUnion& base_set) {
  return base_set.measure() / spec.roof_integral();
}

double flowbox_measure_unnormalized(const IntervalUnion& base_set) { return base_set.measure(); }

}  // namespace kinetic
