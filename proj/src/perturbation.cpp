#include "kinetic/perturbation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <boost/math/constants/constants.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <fmt/format.h>

#include "kinetic/numeric.hpp"

namespace kinetic {

namespace {

constexpr double kLn2 = 0.69314718055994530942;
constexpr double kBaseTolerance = 1e-12;

double circle_gap(double a, double b) {
  double d = std::abs(a - b);
  return std::min(d, 1.0 - d);
}

double line_angle(Vec2d u) {
  double a = std::atan2(u.y, u.x);
  a = std::fmod(a, kPi);
  if (a < 0) a += kPi;
  if (a >= kPi) a -= kPi;
  return a;
}

template <class S>
S swap_function(const S& theta, const Vec2<S>& u, const Vec2<S>& v) {
  Mat2<S> m = rotation_propagator_t<S>(theta, S(1));
  return cross(m * u, v);
}

// Replace the generator on fiber times [lo, hi) of a pass by `m`.
void overlay(std::vector<PassPiece>& pieces, double lo, double hi, const Mat2d& m, const ExactRotation* rot) {
  std::vector<PassPiece> out;
  out.reserve(pieces.size() + 2);
  bool inserted = false;
  for (const auto& p : pieces) {
    if (p.end <= lo || p.begin >= hi) {
      if (p.begin >= hi && !inserted) {
        out.push_back({lo, hi, m, rot});
        inserted = true;
      }
      out.push_back(p);
      continue;
    }
    if (p.begin < lo) out.push_back({p.begin, lo, p.matrix, p.rotation});
    if (!inserted) {
      out.push_back({lo, hi, m, rot});
      inserted = true;
    }
    if (p.end > hi) out.push_back({hi, p.end, p.matrix, p.rotation});
  }
  if (!inserted) out.push_back({lo, hi, m, rot});
  pieces.swap(out);
}

EstimatorConfig castle_double(const EstimatorConfig& cfg) {
  EstimatorConfig c = cfg;
  c.precision_bits = 53;
  return c;
}

}  // namespace

double clockwise_line_angle(Vec2d u, Vec2d v) {
  if ((u.x == 0.0 && u.y == 0.0) || (v.x == 0.0 && v.y == 0.0))
    throw std::invalid_argument("clockwise_line_angle: zero vector");
  double d = std::fmod(line_angle(u) - line_angle(v), kPi);
  if (d < 0) d += kPi;
  if (d == 0.0) d = kPi;
  return d + kPi;
}

Mat2d rotation_matrix(double theta) { return {0.0, 1.0, -theta * theta, 0.0}; }

GeneratorPtr rotation_generator(const DrivingFlow& flow, double theta) {
  if (!(theta >= kPi - 1e-12 && theta <= 2 * kPi + 1e-12))
    throw std::invalid_argument(fmt::format("rotation angle {} outside [pi, 2pi]", theta));
  return make_constant_kinetic(flow, 0.0, theta * theta);
}

Mat2d rotation_propagator(double theta, double t) {
  if (theta == 0.0) throw std::invalid_argument("rotation_propagator: theta must be nonzero");
  return rotation_propagator_t<double>(theta, t);
}

SwapSolution<double> solve_swap_theta(Vec2d u, Vec2d v) {
  if ((u.x == 0.0 && u.y == 0.0) || (v.x == 0.0 && v.y == 0.0))
    throw std::invalid_argument("solve_swap_theta: zero vector");
  u = normalized(u);
  v = normalized(v);
  SwapSolution<double> s;
  if (projective_distance(u, v) < 1e-15) {
    s.theta = 2 * kPi;
    s.gamma = dot(u, v);
    s.residual = projective_distance(u, v);
    return s;
  }
  const int sweep = 512;
  double lo = kPi, flo = swap_function(lo, u, v);
  double hi = lo, fhi = flo;
  bool bracketed = false;
  for (int i = 1; i <= sweep; ++i) {
    hi = kPi + kPi * i / sweep;
    fhi = swap_function(hi, u, v);
    if (fhi == 0.0 || (flo < 0) != (fhi < 0)) {
      bracketed = true;
      break;
    }
    lo = hi;
    flo = fhi;
  }
  if (!bracketed) throw std::runtime_error("solve_swap_theta: root not bracketed by the sweep");
  if (fhi != 0.0) {
    for (int it = 0; it < 200 && hi - lo > 4e-16 * hi; ++it) {
      double mid = 0.5 * (lo + hi);
      double fm = swap_function(mid, u, v);
      if (fm == 0.0) {
        lo = hi = mid;
        break;
      }
      if ((fm < 0) == (flo < 0)) {
        lo = mid;
        flo = fm;
      } else {
        hi = mid;
      }
    }
  }
  // Pick the bracket end with the smaller residual.
  Vec2d ilo = rotation_propagator(lo, 1.0) * u, ihi = rotation_propagator(hi, 1.0) * u;
  bool use_lo = projective_distance(ilo, v) <= projective_distance(ihi, v);
  s.theta = use_lo ? lo : hi;
  Vec2d img = use_lo ? ilo : ihi;
  s.gamma = dot(img, v);
  s.residual = projective_distance(img, v);
  return s;
}

SwapSolution<MpReal> solve_swap_theta_mp(const Vec2<MpReal>& u_in, const Vec2<MpReal>& v_in) {
  using boost::multiprecision::abs;
  Vec2<MpReal> u = normalized(u_in), v = normalized(v_in);
  Vec2d ud{to_double(u.x), to_double(u.y)}, vd{to_double(v.x), to_double(v.y)};
  SwapSolution<MpReal> s;
  const MpReal pi = boost::math::constants::pi<MpReal>();
  const MpReal eps = std::numeric_limits<MpReal>::epsilon();
  if (projective_distance(u, v) < eps * 16) {
    s.theta = 2 * pi;
    s.gamma = dot(u, v);
    s.residual = projective_distance(u, v);
    return s;
  }
  SwapSolution<double> guess = solve_swap_theta(ud, vd);
  MpReal lo = MpReal(guess.theta) - MpReal(1e-9), hi = MpReal(guess.theta) + MpReal(1e-9);
  if (lo < pi) lo = pi;
  if (hi > 2 * pi) hi = 2 * pi;
  MpReal flo = swap_function(lo, u, v), fhi = swap_function(hi, u, v);
  if ((flo < 0) == (fhi < 0)) {
    // Double bracket did not survive rounding; sweep in full precision.
    const int sweep = 2048;
    lo = pi;
    flo = swap_function(lo, u, v);
    bool ok = false;
    for (int i = 1; i <= sweep; ++i) {
      hi = pi + pi * i / sweep;
      fhi = swap_function(hi, u, v);
      if ((flo < 0) != (fhi < 0) || fhi == 0) {
        ok = true;
        break;
      }
      lo = hi;
      flo = fhi;
    }
    if (!ok) throw std::runtime_error("solve_swap_theta_mp: root not bracketed");
  }
  MpReal th = MpReal(guess.theta);
  if (th <= lo || th >= hi) th = (lo + hi) / 2;
  for (int it = 0; it < 400; ++it) {
    using std::cos;
    using std::sin;
    MpReal c = cos(th), sn = sin(th);
    Vec2<MpReal> img{c * u.x + sn / th * u.y, -th * sn * u.x + c * u.y};
    Vec2<MpReal> dimg{-sn * u.x + (th * c - sn) / (th * th) * u.y, (-sn - th * c) * u.x - sn * u.y};
    MpReal f = cross(img, v);
    MpReal df = cross(dimg, v);
    if (f == 0) break;
    if ((f < 0) == (flo < 0)) {
      lo = th;
      flo = f;
    } else {
      hi = th;
    }
    MpReal next = df != 0 ? th - f / df : (lo + hi) / 2;
    if (!(next > lo && next < hi)) next = (lo + hi) / 2;
    MpReal step = abs(next - th);
    th = next;
    if (step <= eps * 8 * th || hi - lo <= eps * 8 * th) break;
  }
  Vec2<MpReal> img = rotation_propagator_t<MpReal>(th, MpReal(1)) * u;
  s.theta = th;
  s.gamma = dot(img, v);
  s.residual = projective_distance(img, v);
  return s;
}

RotationPlan make_rotation_plan(Vec2d u, Vec2d v) {
  RotationPlan p;
  SwapSolution<double> s = solve_swap_theta(u, v);
  p.theta = s.theta;
  p.gamma = s.gamma;
  p.residual = s.residual;
  p.source_line = normalized(u);
  p.target_line = normalized(v);
  p.literal_angle = clockwise_line_angle(u, v);
  p.literal_angle_swaps = projective_distance(rotation_propagator(p.literal_angle, 1.0) * u, v) < 1e-6;
  p.precision_bits = 53;
  p.exact.theta = p.theta;
  p.exact.has_mp = false;
  return p;
}

// ---------------------------------------------------------------------------
// Local swap

LocalSwapGenerator::LocalSwapGenerator(GeneratorPtr parent, DrivingState anchor, RotationPlan plan)
    : Generator(parent->flow()), parent_(std::move(parent)), anchor_(anchor), plan_(std::move(plan)) {
  if (!flow().valid(anchor_)) throw std::invalid_argument("local swap anchor is not a valid state of the flow");
  if (!(plan_.theta >= kPi - 1e-12 && plan_.theta <= 2 * kPi + 1e-12))
    throw std::invalid_argument("local swap angle outside [pi, 2pi]");
}

std::optional<double> LocalSwapGenerator::segment_offset(const DrivingState& w) const {
  if (flow().is_torus()) {
    const auto& a = std::get<TorusPoint>(anchor_);
    const auto& p = std::get<TorusPoint>(w);
    double s = frac(p.x - a.x);
    if (s > 1.0 - 1e-12) s = 0.0;
    double y = frac(a.y + flow().torus().rho * s);
    if (circle_gap(y, p.y) < 1e-10) return s;
    return std::nullopt;
  }
  const auto& sp = flow().suspension();
  const auto& a = std::get<CastlePoint>(anchor_);
  const auto& p = std::get<CastlePoint>(w);
  if (circle_gap(p.x, a.x) < kBaseTolerance && p.r >= a.r && p.r <= a.r + 1.0) return p.r - a.r;
  double h = sp.roof(a.x);
  if (a.r + 1.0 > h && circle_gap(p.x, sp.base_map(a.x)) < kBaseTolerance && p.r <= a.r + 1.0 - h)
    return h - a.r + p.r;
  return std::nullopt;
}

Mat2d LocalSwapGenerator::evaluate(const DrivingState& w) const {
  if (segment_offset(w)) return rotation_matrix(plan_.theta);
  return parent_->evaluate(w);
}

double LocalSwapGenerator::sup_norm_bound() const {
  return std::max(parent_->sup_norm_bound(), plan_.theta * plan_.theta);
}

void LocalSwapGenerator::pass_pieces(double x, std::vector<PassPiece>& out) const {
  parent_->pass_pieces(x, out);
  const auto& sp = flow().suspension();
  const auto& a = std::get<CastlePoint>(anchor_);
  double h = sp.roof(a.x);
  Mat2d m = rotation_matrix(plan_.theta);
  if (circle_gap(x, a.x) < kBaseTolerance) overlay(out, a.r, std::min(a.r + 1.0, h), m, &plan_.exact);
  if (a.r + 1.0 > h && circle_gap(x, sp.base_map(a.x)) < kBaseTolerance)
    overlay(out, 0.0, a.r + 1.0 - h, m, &plan_.exact);
}

void LocalSwapGenerator::breakpoints(const DrivingState& w, double t0, double t1, std::vector<double>& out) const {
  if (flow().is_suspension()) {
    Generator::breakpoints(w, t0, t1, out);
    return;
  }
  parent_->breakpoints(w, t0, t1, out);
  const auto& a = std::get<TorusPoint>(anchor_);
  const auto& p = std::get<TorusPoint>(w);
  double rho = flow().torus().rho;
  double base = frac(a.x - p.x);
  long long k0 = static_cast<long long>(std::floor(t0 - 1.0 - base)) - 1;
  long long k1 = static_cast<long long>(std::ceil(t1 - base)) + 1;
  for (long long k = k0; k <= k1; ++k) {
    double tau = base + static_cast<double>(k);
    TorusPoint q = evolve_torus(flow().torus(), p, tau);
    if (circle_gap(q.y, a.y) < 1e-9 && circle_gap(q.x, a.x) < 1e-9) {
      for (double b : {tau, tau + 1.0})
        if (b > t0 && b < t1) out.push_back(b);
    }
  }
  (void)rho;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
}

std::string LocalSwapGenerator::describe() const {
  return fmt::format("local_swap(theta={}, parent={})", plan_.theta, parent_->describe());
}

std::shared_ptr<const LocalSwapGenerator> build_local_swap(GeneratorPtr a, const DrivingState& w, Vec2d u, Vec2d v) {
  if (!a->is_kinetic()) throw std::invalid_argument("build_local_swap: generator must be kinetic");
  return std::make_shared<LocalSwapGenerator>(std::move(a), w, make_rotation_plan(u, v));
}

// ---------------------------------------------------------------------------
// Flowbox perturbation

namespace {

void validate_flowbox(const GeneratorPtr& parent, const IntervalUnion& support, double a) {
  if (!parent->flow().is_suspension()) throw std::invalid_argument("flowbox perturbations need a suspension flow");
  if (!parent->fiber_constant()) throw std::invalid_argument("flowbox perturbations need a fiber-constant parent");
  const auto& sp = parent->flow().suspension();
  if (!(a >= 0.0) || a + 1.0 > sp.n0)
    throw std::invalid_argument(fmt::format("flowbox interval [{}, {}] does not fit under the roof (n0 = {})", a,
                                            a + 1.0, sp.n0));
  IntervalUnion earlier = perturbed_support(*parent);
  for (const auto& [lo, hi] : support.intervals())
    if (earlier.intersects(lo, hi)) throw std::invalid_argument("flowbox support overlaps an earlier perturbation");
}

}  // namespace

FlowboxPerturbation::FlowboxPerturbation(GeneratorPtr parent, IntervalUnion support, double a, PlanSettings settings)
    : Generator(parent->flow()), parent_(std::move(parent)), support_(std::move(support)), a_(a),
      settings_(settings) {
  validate_flowbox(parent_, support_, a_);
}

FlowboxPerturbation::FlowboxPerturbation(GeneratorPtr parent, IntervalUnion support, double a,
                                         std::vector<double> thetas)
    : Generator(parent->flow()), parent_(std::move(parent)), support_(std::move(support)), a_(a),
      thetas_(std::move(thetas)) {
  validate_flowbox(parent_, support_, a_);
  if (thetas_.size() != support_.intervals().size())
    throw std::invalid_argument("one fixed angle per support interval is required");
  for (double th : thetas_) {
    if (!(th >= kPi && th <= 2 * kPi)) throw std::invalid_argument("fixed rotation angle outside [pi, 2pi]");
    RotationPlan p;
    p.theta = th;
    p.literal_angle = th;
    p.exact.theta = th;
    fixed_plans_.push_back(p);
  }
}

RotationPlan FlowboxPerturbation::compute_swap_plan(double x) const {
  const CastlePoint entry{x, a_}, exit{x, a_ + 1.0};
  const double H = settings_.frame_horizon_time;
  RotationPlan plan;
  if (settings_.precision_bits > 53) {
    PrecisionGuard guard(settings_.precision_bits);
    CastleEngine<MpReal> eng(*parent_);
    Vec2<MpReal> v1, u, v;
    right_singular_vectors(eng.propagate(entry, -H).matrix, v1, u);
    right_singular_vectors(eng.propagate(exit, H).matrix, v1, v);
    SwapSolution<MpReal> s = solve_swap_theta_mp(u, v);
    Vec2d ud{to_double(u.x), to_double(u.y)}, vd{to_double(v.x), to_double(v.y)};
    plan.source_line = ud;
    plan.target_line = vd;
    plan.theta = to_double(s.theta);
    plan.gamma = to_double(s.gamma);
    plan.residual = to_double(s.residual);
    plan.exact.theta = plan.theta;
    plan.exact.theta_mp = s.theta;
    plan.exact.has_mp = true;
    plan.literal_angle = clockwise_line_angle(ud, vd);
    plan.literal_angle_swaps = projective_distance(rotation_propagator(plan.literal_angle, 1.0) * ud, vd) < 1e-6;
  } else {
    CastleEngine<double> eng(*parent_);
    Vec2d v1, u, v;
    right_singular_vectors(eng.propagate(entry, -H).matrix, v1, u);
    right_singular_vectors(eng.propagate(exit, H).matrix, v1, v);
    plan = make_rotation_plan(u, v);
  }
  plan.precision_bits = settings_.precision_bits;
  return plan;
}

const RotationPlan& FlowboxPerturbation::plan_at(double x) const {
  int idx = support_.locate(x);
  if (idx < 0) throw std::invalid_argument(fmt::format("base point {} is outside the flowbox support", x));
  if (!swap_mode()) return fixed_plans_[static_cast<std::size_t>(idx)];
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = plans_.find(x);
  if (it != plans_.end()) return *it->second;
  auto plan = std::make_unique<RotationPlan>(compute_swap_plan(x));
  const RotationPlan& ref = *plan;
  plans_.emplace(x, std::move(plan));
  return ref;
}

std::vector<std::pair<double, RotationPlan>> FlowboxPerturbation::installed_plans() const {
  std::vector<std::pair<double, RotationPlan>> out;
  if (!swap_mode()) {
    for (std::size_t i = 0; i < fixed_plans_.size(); ++i) {
      const auto& iv = support_.intervals()[i];
      out.emplace_back(0.5 * (iv.first + iv.second), fixed_plans_[i]);
    }
    return out;
  }
  std::lock_guard<std::mutex> lock(mutex_);
  for (const auto& [x, p] : plans_) out.emplace_back(x, *p);
  return out;
}

std::size_t FlowboxPerturbation::plan_count() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return swap_mode() ? plans_.size() : fixed_plans_.size();
}

Mat2d FlowboxPerturbation::evaluate(const DrivingState& w) const {
  const auto* p = std::get_if<CastlePoint>(&w);
  if (p && p->r >= a_ && p->r <= a_ + 1.0 && support_.contains(p->x)) return rotation_matrix(plan_at(p->x).theta);
  return parent_->evaluate(w);
}

void FlowboxPerturbation::pass_pieces(double x, std::vector<PassPiece>& out) const {
  parent_->pass_pieces(x, out);
  if (support_.locate(x) < 0) return;
  const RotationPlan& plan = plan_at(x);
  overlay(out, a_, a_ + 1.0, rotation_matrix(plan.theta), &plan.exact);
}

double FlowboxPerturbation::mean_trace() const {
  double removed = 0.0;
  for (const auto& [lo, hi] : support_.intervals())
    removed += castle_window_integral(*parent_, lo, hi, a_, a_ + 1.0, [](const Mat2d& m, double) { return trace(m); });
  return parent_->mean_trace() - removed;
}

double FlowboxPerturbation::sup_norm_bound() const { return std::max(parent_->sup_norm_bound(), kFourPiSquared); }

double FlowboxPerturbation::sup_support_norm() const {
  double best = 0.0;
  for (const auto& [x, p] : installed_plans()) best = std::max(best, p.theta * p.theta);
  for (const auto& c : cells) best = std::max(best, c.centre_plan.theta * c.centre_plan.theta);
  return best;
}

std::vector<double> FlowboxPerturbation::base_breaks() const {
  std::vector<double> b = parent_->base_breaks();
  for (const auto& [lo, hi] : support_.intervals()) {
    if (lo > 0.0) b.push_back(lo);
    if (hi < 1.0) b.push_back(hi);
  }
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  return b;
}

double FlowboxPerturbation::flowbox_measure() const {
  return flowbox_measure_normalized(flow().suspension(), support_);
}

std::string FlowboxPerturbation::describe() const {
  return fmt::format("flowbox(a={}, intervals={}, measure={}, mode={}, parent={})", a_, support_.intervals().size(),
                     support_.measure(), swap_mode() ? "swap" : "fixed", parent_->describe());
}

double l1_norm_upper(const Generator& a) {
  if (const auto* f = dynamic_cast<const FlowboxPerturbation*>(&a))
    return l1_norm_upper(*f->parent()) + f->flowbox_measure() * kFourPiSquared;
  if (const auto* l = dynamic_cast<const LocalSwapGenerator*>(&a)) return l1_norm_upper(*l->parent());
  if (a.fiber_constant()) return l1_norm_exact(a);
  return a.sup_norm_bound();
}

IntervalUnion perturbed_support(const Generator& a) {
  if (const auto* f = dynamic_cast<const FlowboxPerturbation*>(&a))
    return perturbed_support(*f->parent()).united(f->support());
  if (const auto* l = dynamic_cast<const LocalSwapGenerator*>(&a)) return perturbed_support(*l->parent());
  return IntervalUnion();
}

// ---------------------------------------------------------------------------
// Screen, budget and construction

RestrictedRates restricted_rates(const Generator& a, const DrivingState& w, double t, double frame_horizon,
                                 const EstimatorConfig& cfg) {
  OseledetsFrame f = oseledets_splitting(a, w, frame_horizon, cfg);
  ScaledMat<double> m = propagate_scaled(a, w, t, cfg);
  RestrictedRates r;
  r.rate1 = (std::log(norm(m.matrix * f.e1)) + m.log_scale) / t;
  r.rate2 = (std::log(norm(m.matrix * f.e2)) + m.log_scale) / t;
  return r;
}

namespace {

ScreenRecord screen_point(const Generator& a, double x, int N, const SpectrumEstimate& s, double eta,
                          double frame_horizon, const EstimatorConfig& cfg) {
  ScreenRecord rec;
  rec.x = x;
  const double half = N / 2.0;
  const CastlePoint w{x, 0.0};
  for (double t : {half, 0.75 * N, static_cast<double>(N)}) {
    RestrictedRates r = restricted_rates(a, w, t, frame_horizon, cfg);
    rec.worst_eta = std::max({rec.worst_eta, std::abs(s.lambda1 - r.rate1), std::abs(s.lambda2 - r.rate2)});
  }
  if (half - 1.0 > 0.0) {
    CastlePoint shifted = std::get<CastlePoint>(a.flow().evolve(w, half + 1.0));
    RestrictedRates r = restricted_rates(a, shifted, half - 1.0, frame_horizon, cfg);
    rec.worst_eta2 = std::max(std::abs(s.lambda1 - r.rate1), std::abs(s.lambda2 - r.rate2));
  }
  rec.passed = rec.worst_eta < eta / 8.0 && rec.worst_eta2 < eta;
  return rec;
}

double support_sup_norm(const Generator& a, double fiber_lo, double fiber_hi, const IntervalUnion& excluded) {
  std::vector<double> cuts = a.base_breaks();
  for (const auto& [lo, hi] : excluded.intervals()) {
    cuts.push_back(lo);
    cuts.push_back(hi);
  }
  cuts.push_back(0.0);
  cuts.push_back(1.0);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<PassPiece> pieces;
  double best = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double mid = 0.5 * (cuts[i] + cuts[i + 1]);
    if (!(cuts[i + 1] > cuts[i]) || excluded.contains(mid)) continue;
    a.pass_pieces(mid, pieces);
    for (const auto& p : pieces)
      if (p.end > fiber_lo && p.begin < fiber_hi) best = std::max(best, op_norm(p.matrix));
  }
  return best;
}

double longest_return_time(const SuspensionSpec& sp, const IntervalUnion& support) {
  if (support.empty()) return 0.0;
  const auto& first = support.intervals().front();
  double x0 = 0.5 * (first.first + first.second);
  long long passes = static_cast<long long>(std::ceil(60.0 / support.measure())) + 2000;
  double since = 0.0, longest = 0.0;
  for (long long n = 1; n <= passes; ++n) {
    double x = rotate_orbit(x0, sp.base_rotation, n);
    since += sp.roof(rotate_orbit(x0, sp.base_rotation, n - 1));
    if (support.contains(x)) {
      longest = std::max(longest, since);
      since = 0.0;
    }
  }
  return std::max(longest, since);
}

}  // namespace

GlobalPerturbationResult build_global_perturbation(const GeneratorPtr& a, const SpectrumEstimate& spec_a,
                                                   const GlobalPerturbationOptions& opts) {
  if (!a->flow().is_suspension()) throw std::invalid_argument("global perturbations need a suspension flow");
  if (!a->fiber_constant()) throw std::invalid_argument("global perturbations need a fiber-constant generator");
  if (!(opts.epsilon > 0.0 && opts.epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in (0, 1)");
  const double J = spec_a.jump();
  if (!(J > 0.0)) throw std::invalid_argument("global perturbation needs a simple spectrum (positive jump)");
  const auto& sp = a->flow().suspension();
  const IntervalUnion excluded = opts.excluded.united(perturbed_support(*a));
  EstimatorConfig screen_cfg = castle_double(opts.estimator);
  screen_cfg.method = PropagationMethod::castle;

  std::vector<int> Ns;
  if (opts.N > 0) {
    if (opts.N % 2 != 0) throw std::invalid_argument("N must be even");
    if (opts.N / 2 + 1 > sp.n0) throw std::invalid_argument(fmt::format("N/2 + 1 = {} exceeds n0 = {}", opts.N / 2 + 1, sp.n0));
    Ns.push_back(opts.N);
  } else {
    for (int n = 4; n / 2 + 1 <= sp.n0; n += 2) Ns.push_back(n);
  }

  std::vector<double> candidates;
  for (std::size_t j = 0; candidates.size() < opts.candidate_count && j < 100 * opts.candidate_count + 100; ++j) {
    Rng rng(derive_seed(opts.seed, j));
    double x = rng.uniform();
    if (!excluded.contains(x)) candidates.push_back(x);
  }

  GlobalPerturbationResult res;
  int chosen = 0;
  for (int N : Ns) {
    std::vector<ScreenRecord> recs;
    std::size_t passing = 0;
    for (double x : candidates) {
      recs.push_back(screen_point(*a, x, N, spec_a, opts.eta, opts.screen_frame_horizon_time, screen_cfg));
      if (recs.back().passed) ++passing;
    }
    std::size_t need = opts.N > 0 ? 1 : std::min(opts.min_passing, candidates.size());
    if (passing >= need && passing > 0) {
      chosen = N;
      res.screen = std::move(recs);
      break;
    }
    res.screen = std::move(recs);
  }
  if (chosen == 0)
    throw ScreenEmptyError(fmt::format("no base point passes the eta screen (eta = {}) for N in [{}, {}]; increase N "
                                       "(needs a taller roof n0) or relax eta",
                                       opts.eta, Ns.front(), Ns.back()));
  res.N = chosen;
  const double a_off = chosen / 2.0;

  BudgetRecord budget;
  budget.epsilon = opts.epsilon;
  budget.epsilon_prime = opts.epsilon / (1.0 - opts.epsilon);
  budget.interval_length = 1.0;
  budget.convention = opts.budget_measure;
  budget.l1_norm = l1_norm_upper(*a);
  budget.sup_support_norm = support_sup_norm(*a, a_off, a_off + 1.0, excluded);
  budget.L = std::max(budget.l1_norm, budget.sup_support_norm) * (1.0 + 1e-9) + 1e-12;
  budget.measure_cap = budget.epsilon_prime / (budget.interval_length * (budget.L + kFourPiSquared));
  const double leb_cap =
      opts.budget_measure == BudgetMeasure::normalized ? budget.measure_cap * sp.roof_integral() : budget.measure_cap;
  const double leb_target = opts.budget_fill * leb_cap;

  std::vector<double> passing_x;
  for (const auto& r : res.screen)
    if (r.passed) passing_x.push_back(r.x);
  std::size_t k = std::min(opts.max_intervals, passing_x.size());
  double width = leb_target / static_cast<double>(k);
  std::vector<std::pair<double, double>> chosen_iv;
  for (double c : passing_x) {
    if (chosen_iv.size() >= k) break;
    double lo = c - width / 2, hi = c + width / 2;
    if (lo <= 0.0 || hi >= 1.0) continue;
    if (excluded.intersects(lo - 1e-9, hi + 1e-9)) continue;
    bool clash = false;
    for (const auto& iv : chosen_iv)
      if (iv.first < hi + 1e-9 && lo - 1e-9 < iv.second) clash = true;
    if (clash) continue;
    // The screen must hold across the interval, not only at its centre.
    bool ends_ok = true;
    for (double e : {lo + 1e-12, hi - 1e-12})
      if (!screen_point(*a, e, chosen, spec_a, opts.eta, opts.screen_frame_horizon_time, screen_cfg).passed)
        ends_ok = false;
    if (!ends_ok) continue;
    chosen_iv.emplace_back(lo, hi);
  }
  if (chosen_iv.empty())
    throw BudgetInfeasibleError("budget infeasible: no admissible support interval fits (shrink the support or raise "
                                "candidate_count)");
  IntervalUnion support(chosen_iv);
  budget.measure_unnormalized = flowbox_measure_unnormalized(support);
  budget.measure_normalized = flowbox_measure_normalized(sp, support);
  budget.measure_enforced =
      opts.budget_measure == BudgetMeasure::normalized ? budget.measure_normalized : budget.measure_unnormalized;
  budget.bound = budget.interval_length * (budget.L + kFourPiSquared) * budget.measure_enforced;
  if (!(budget.bound < budget.epsilon_prime))
    throw BudgetInfeasibleError(fmt::format("budget bound {} does not stay below epsilon' = {}", budget.bound,
                                            budget.epsilon_prime));

  res.longest_return_time = longest_return_time(sp, support);
  int bits = opts.precision_bits;
  if (bits <= 0) bits = 128 + static_cast<int>(std::ceil(2.0 * J * res.longest_return_time / kLn2));
  bits = std::clamp(bits, 53, 16384);
  double H = opts.frame_horizon_time;
  if (H <= 0.0) H = (bits * kLn2 + 40.0) / (2.0 * J);
  H = std::clamp(H, 50.0, 2e5);
  res.precision_bits = bits;
  res.frame_horizon_time = H;

  auto b = std::make_shared<FlowboxPerturbation>(a, support, a_off, PlanSettings{bits, H});
  b->budget = budget;
  for (const auto& [lo, hi] : support.intervals()) {
    CellRecord cell;
    cell.lo = lo;
    cell.hi = hi;
    cell.centre = 0.5 * (lo + hi);
    cell.centre_plan = b->plan_at(cell.centre);
    const RotationPlan& pl = b->plan_at(lo);
    const RotationPlan& ph = b->plan_at(std::nextafter(hi, lo));
    cell.frame_variation = std::max({projective_distance(pl.source_line, ph.source_line),
                                     projective_distance(pl.target_line, ph.target_line)});
    b->cells.push_back(cell);
  }
  res.perturbation = b;
  return res;
}

// ---------------------------------------------------------------------------
// Distances and plan checks

double sigma_hat_p_flowbox_exact(const Generator& a, const Generator& b, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("sigma_hat_p: p must be at least 1");
  if (!a.flow().same_as(b.flow())) throw std::invalid_argument("sigma_hat_p: generators live on different flows");
  if (&a == &b) return 0.0;
  // Links from b back to a.
  std::vector<const FlowboxPerturbation*> links;
  const Generator* cur = &b;
  while (cur != &a) {
    if (const auto* f = dynamic_cast<const FlowboxPerturbation*>(cur)) {
      links.push_back(f);
      cur = f->parent().get();
    } else if (const auto* l = dynamic_cast<const LocalSwapGenerator*>(cur)) {
      cur = l->parent().get();  // support of measure zero
    } else {
      cur = nullptr;
      break;
    }
  }
  if (cur != &a) {
    // Try the other direction once.
    const Generator* back = &a;
    while (back && back != &b) {
      if (const auto* f = dynamic_cast<const FlowboxPerturbation*>(back)) back = f->parent().get();
      else if (const auto* l = dynamic_cast<const LocalSwapGenerator*>(back)) back = l->parent().get();
      else back = nullptr;
    }
    if (back == &b) return sigma_hat_p_flowbox_exact(b, a, p);
    throw std::invalid_argument("exact_support needs one generator to be a flowbox descendant of the other");
  }
  const auto& sp = a.flow().suspension();
  CompensatedSum total;
  std::vector<PassPiece> pieces;
  for (const auto* link : links) {
    const double f0 = link->fiber_offset(), f1 = f0 + 1.0;
    std::vector<double> breaks = a.base_breaks();
    for (const auto& [lo, hi] : link->support().intervals()) {
      std::vector<double> cuts{lo};
      for (double x : breaks)
        if (x > lo && x < hi) cuts.push_back(x);
      cuts.push_back(hi);
      auto integrand = [&](double x) {
        a.pass_pieces(x, pieces);
        Mat2d pm = rotation_matrix(link->plan_at(x).theta);
        double acc = 0.0;
        for (const auto& pc : pieces) {
          double overlap = std::min(pc.end, f1) - std::max(pc.begin, f0);
          if (overlap > 0.0) acc += overlap * std::pow(op_norm(pc.matrix - pm), p);
        }
        return acc;
      };
      for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
        total.add(boost::math::quadrature::gauss<double, 20>::integrate(integrand, cuts[i], cuts[i + 1]));
    }
  }
  return std::pow(total.value() / sp.roof_integral(), 1.0 / p);
}

PlanCheck check_plan(const FlowboxPerturbation& b, double x, int N, const SpectrumEstimate& spec_a, double eta,
                     bool with_decomposition, const EstimatorConfig& cfg) {
  PlanCheck c;
  c.base = x;
  const Generator& parent = *b.parent();
  const double a_off = b.fiber_offset();
  const CastlePoint entry{x, a_off}, exit{x, a_off + 1.0};
  EstimatorConfig dcfg = castle_double(cfg);
  dcfg.method = PropagationMethod::castle;
  const double H = b.swap_mode() ? b.settings().frame_horizon_time : 150.0;
  OseledetsFrame fe = oseledets_splitting(parent, entry, H, dcfg);
  OseledetsFrame fx = oseledets_splitting(parent, exit, H, dcfg);
  const RotationPlan& plan = b.plan_at(x);
  Mat2d unit = integrate(b, entry, 1.0, cfg.integrator).matrix;
  c.swap_residual = projective_distance(unit * fe.e1, fx.e2);
  c.support_norm = op_norm(rotation_matrix(plan.theta));
  c.unit_time_norm = op_norm(unit);
  const CastlePoint start{x, 0.0};
  Mat2d whole;
  double whole_log = 0.0;
  if (with_decomposition) {
    whole = integrate(b, start, N, cfg.integrator).matrix;
    CastleEngine<double> eng(parent);
    const double half = N / 2.0;
    CastlePoint shifted = std::get<CastlePoint>(parent.flow().evolve(start, half + 1.0));
    ScaledMat<double> first = eng.propagate(start, half);
    ScaledMat<double> third = eng.propagate(shifted, half - 1.0);
    Mat2d product = std::exp(first.log_scale + third.log_scale) * (third.matrix * rotation_propagator(plan.theta, 1.0) * first.matrix);
    c.decomposition_residual = op_norm(whole - product);
  } else {
    ScaledMat<double> m = propagate_scaled(b, start, N, dcfg);
    whole = m.matrix;
    whole_log = m.log_scale;
  }
  c.growth_rate = (std::log(op_norm(whole)) + whole_log) / N;
  const double l1 = spec_a.lambda1, l2 = spec_a.lambda2;
  c.growth_cap = 0.5 * (l1 + l2) + std::max(std::abs(l1), std::abs(l2)) / N +
                 (std::log(kNormEquivalenceC) + kFourPiSquared + 2 * eta) / N + eta;
  return c;
}

}  // namespace kinetic
