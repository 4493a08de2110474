#include "kinetic/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/quadrature/gauss.hpp>
#include <fmt/format.h>

#include "kinetic/numeric.hpp"

namespace kinetic {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string field_description(const CoefficientField& f) {
  if (f.is_constant()) return fmt::format("constant({})", std::get<ConstantField>(f.repr()).value);
  if (f.is_trig()) {
    std::string s = "trig[";
    for (const auto& t : std::get<TrigPolynomial>(f.repr()).terms)
      s += fmt::format("({},{}:{},{})", t.k1, t.k2, t.cos_coeff, t.sin_coeff);
    return s + "]";
  }
  const auto& st = std::get<StepFunction>(f.repr());
  std::string s = "step[breaks=";
  for (double b : st.breaks) s += fmt::format("{};", b);
  s += " values=";
  for (double v : st.values) s += fmt::format("{};", v);
  return s + "]";
}

void check_field_for_flow(const CoefficientField& f, const DrivingFlow& flow, const char* name) {
  if (flow.is_torus() && f.is_step())
    throw std::invalid_argument(fmt::format("{}: step fields live on suspension bases, not on the torus", name));
  if (flow.is_suspension() && f.is_trig())
    throw std::invalid_argument(fmt::format("{}: trig fields live on the torus, not on suspension flows", name));
}

std::vector<double> merged_breaks(std::vector<double> a, const std::vector<double>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

}  // namespace

CoefficientField CoefficientField::constant(double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("constant field must be finite");
  return CoefficientField(ConstantField{value});
}

CoefficientField CoefficientField::trig(std::vector<TrigTerm> terms) {
  for (const auto& t : terms)
    if (!std::isfinite(t.cos_coeff) || !std::isfinite(t.sin_coeff))
      throw std::invalid_argument("trig coefficients must be finite");
  return CoefficientField(TrigPolynomial{std::move(terms)});
}

CoefficientField CoefficientField::step(std::vector<double> breaks, std::vector<double> values) {
  if (values.size() != breaks.size() + 1)
    throw std::invalid_argument("step field needs exactly one more value than break points");
  for (std::size_t i = 0; i < breaks.size(); ++i) {
    if (!(breaks[i] > 0.0 && breaks[i] < 1.0)) throw std::invalid_argument("step breaks must lie in (0, 1)");
    if (i > 0 && !(breaks[i] > breaks[i - 1])) throw std::invalid_argument("step breaks must be increasing");
  }
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("step values must be finite");
  return CoefficientField(StepFunction{std::move(breaks), std::move(values)});
}

double CoefficientField::evaluate_base(double x) const {
  if (const auto* c = std::get_if<ConstantField>(&repr_)) return c->value;
  if (const auto* s = std::get_if<StepFunction>(&repr_)) {
    auto it = std::upper_bound(s->breaks.begin(), s->breaks.end(), x);
    return s->values[static_cast<std::size_t>(it - s->breaks.begin())];
  }
  throw std::logic_error("trig field has no base representation");
}

double CoefficientField::evaluate(const DrivingState& w) const {
  if (const auto* c = std::get_if<ConstantField>(&repr_)) return c->value;
  if (const auto* t = std::get_if<TrigPolynomial>(&repr_)) {
    const auto* p = std::get_if<TorusPoint>(&w);
    if (!p) throw std::invalid_argument("trig field evaluated off the torus");
    double v = 0.0;
    for (const auto& term : t->terms) {
      double phase = kTwoPi * (term.k1 * p->x + term.k2 * p->y);
      v += term.cos_coeff * std::cos(phase) + term.sin_coeff * std::sin(phase);
    }
    return v;
  }
  const auto* p = std::get_if<CastlePoint>(&w);
  if (!p) throw std::invalid_argument("step field evaluated off the suspension");
  return evaluate_base(p->x);
}

double CoefficientField::derived_sup_bound() const {
  if (const auto* c = std::get_if<ConstantField>(&repr_)) return std::abs(c->value);
  if (const auto* t = std::get_if<TrigPolynomial>(&repr_)) {
    double b = 0.0;
    for (const auto& term : t->terms) b += std::abs(term.cos_coeff) + std::abs(term.sin_coeff);
    return b;
  }
  double b = 0.0;
  for (double v : std::get<StepFunction>(repr_).values) b = std::max(b, std::abs(v));
  return b;
}

double CoefficientField::mean(const DrivingFlow& flow) const {
  if (const auto* c = std::get_if<ConstantField>(&repr_)) return c->value;
  if (const auto* t = std::get_if<TrigPolynomial>(&repr_)) {
    double m = 0.0;
    for (const auto& term : t->terms)
      if (term.k1 == 0 && term.k2 == 0) m += term.cos_coeff;
    return m;
  }
  const auto& s = std::get<StepFunction>(repr_);
  const auto& sp = flow.suspension();
  // Cells refined by the roof cut; h is constant on each refined cell.
  std::vector<double> cuts = merged_breaks(s.breaks, {sp.cut});
  CompensatedSum acc;
  double lo = 0.0;
  for (std::size_t i = 0; i <= cuts.size(); ++i) {
    double hi = i < cuts.size() ? cuts[i] : 1.0;
    double mid = 0.5 * (lo + hi);
    acc.add(evaluate_base(mid) * sp.roof(mid) * (hi - lo));
    lo = hi;
  }
  return acc.value() / sp.roof_integral();
}

std::vector<double> CoefficientField::base_breaks() const {
  if (const auto* s = std::get_if<StepFunction>(&repr_)) return s->breaks;
  return {};
}

void Generator::pass_pieces(double, std::vector<PassPiece>&) const {
  throw std::logic_error("pass_pieces requires a fiber-constant suspension generator");
}

void Generator::breakpoints(const DrivingState& w, double t0, double t1, std::vector<double>& out) const {
  out.clear();
  if (!flow().is_suspension() || !(t1 > t0)) return;
  const auto& sp = flow().suspension();
  CastlePoint start = std::get<CastlePoint>(flow().evolve(w, t0));
  std::vector<PassPiece> pieces;
  double pass_origin = t0 - start.r;  // flow time at which the current pass began
  long long n = 0;
  double x = start.x;
  while (pass_origin < t1) {
    double h = sp.roof(x);
    if (fiber_constant()) {
      pass_pieces(x, pieces);
      for (const auto& p : pieces) {
        double tb = pass_origin + p.begin;
        if (tb > t0 && tb < t1) out.push_back(tb);
      }
    } else if (pass_origin > t0) {
      out.push_back(pass_origin);
    }
    pass_origin += h;
    x = rotate_orbit(start.x, sp.base_rotation, ++n);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
}

KineticGenerator::KineticGenerator(DrivingFlow flow, CoefficientField alpha, CoefficientField beta)
    : Generator(std::move(flow)), alpha_(std::move(alpha)), beta_(std::move(beta)) {
  check_field_for_flow(alpha_, this->flow(), "alpha");
  check_field_for_flow(beta_, this->flow(), "beta");
}

Mat2d KineticGenerator::evaluate(const DrivingState& w) const {
  return {0.0, 1.0, -beta_.evaluate(w), -alpha_.evaluate(w)};
}

double KineticGenerator::mean_trace() const { return -alpha_.mean(flow()); }

double KineticGenerator::sup_norm_bound() const {
  if (alpha_.fiber_constant() && beta_.fiber_constant()) {
    std::vector<double> cuts = merged_breaks(alpha_.base_breaks(), beta_.base_breaks());
    double best = 0.0, lo = 0.0;
    for (std::size_t i = 0; i <= cuts.size(); ++i) {
      double hi = i < cuts.size() ? cuts[i] : 1.0;
      double mid = 0.5 * (lo + hi);
      best = std::max(best, op_norm(Mat2d{0.0, 1.0, -beta_.evaluate_base(mid), -alpha_.evaluate_base(mid)}));
      lo = hi;
    }
    return best;
  }
  double sa = alpha_.derived_sup_bound(), sb = beta_.derived_sup_bound();
  return std::sqrt(1.0 + sa * sa + sb * sb);
}

bool KineticGenerator::fiber_constant() const {
  return flow().is_suspension() && alpha_.fiber_constant() && beta_.fiber_constant();
}

void KineticGenerator::pass_pieces(double x, std::vector<PassPiece>& out) const {
  if (!fiber_constant()) Generator::pass_pieces(x, out);
  out.clear();
  out.push_back({0.0, flow().suspension().roof(x), Mat2d{0.0, 1.0, -beta_.evaluate_base(x), -alpha_.evaluate_base(x)}, nullptr});
}

std::vector<double> KineticGenerator::base_breaks() const {
  std::vector<double> b = merged_breaks(alpha_.base_breaks(), beta_.base_breaks());
  if (flow().is_suspension()) b = merged_breaks(b, {flow().suspension().cut});
  return b;
}

std::string KineticGenerator::describe() const {
  return fmt::format("kinetic(alpha={}, beta={})", field_description(alpha_), field_description(beta_));
}

GeneralGenerator::GeneralGenerator(DrivingFlow flow, std::array<CoefficientField, 4> entries)
    : Generator(std::move(flow)), entries_(std::move(entries)) {
  for (const auto& e : entries_) check_field_for_flow(e, this->flow(), "entry");
}

Mat2d GeneralGenerator::evaluate(const DrivingState& w) const {
  return {entries_[0].evaluate(w), entries_[1].evaluate(w), entries_[2].evaluate(w), entries_[3].evaluate(w)};
}

bool GeneralGenerator::is_kinetic() const {
  auto is_const = [](const CoefficientField& f, double v) {
    return f.is_constant() && std::get<ConstantField>(f.repr()).value == v;
  };
  return is_const(entries_[0], 0.0) && is_const(entries_[1], 1.0);
}

double GeneralGenerator::mean_trace() const { return entries_[0].mean(flow()) + entries_[3].mean(flow()); }

double GeneralGenerator::sup_norm_bound() const {
  double s = 0.0;
  for (const auto& e : entries_) s += e.derived_sup_bound() * e.derived_sup_bound();
  return std::sqrt(s);
}

bool GeneralGenerator::fiber_constant() const {
  if (!flow().is_suspension()) return false;
  for (const auto& e : entries_)
    if (!e.fiber_constant()) return false;
  return true;
}

void GeneralGenerator::pass_pieces(double x, std::vector<PassPiece>& out) const {
  if (!fiber_constant()) Generator::pass_pieces(x, out);
  out.clear();
  out.push_back({0.0, flow().suspension().roof(x),
                 Mat2d{entries_[0].evaluate_base(x), entries_[1].evaluate_base(x), entries_[2].evaluate_base(x),
                       entries_[3].evaluate_base(x)},
                 nullptr});
}

std::vector<double> GeneralGenerator::base_breaks() const {
  std::vector<double> b;
  for (const auto& e : entries_) b = merged_breaks(b, e.base_breaks());
  if (flow().is_suspension()) b = merged_breaks(b, {flow().suspension().cut});
  return b;
}

std::string GeneralGenerator::describe() const {
  return fmt::format("general([{}, {}; {}, {}])", field_description(entries_[0]), field_description(entries_[1]),
                     field_description(entries_[2]), field_description(entries_[3]));
}

GeneratorPtr make_kinetic(const DrivingFlow& flow, CoefficientField alpha, CoefficientField beta) {
  return std::make_shared<KineticGenerator>(flow, std::move(alpha), std::move(beta));
}

GeneratorPtr make_constant_kinetic(const DrivingFlow& flow, double alpha, double beta) {
  return make_kinetic(flow, CoefficientField::constant(alpha), CoefficientField::constant(beta));
}

NormEstimate l1_norm(const Generator& a, std::uint64_t seed, std::size_t n) {
  auto samples = a.flow().sample_mu(seed, n);
  std::vector<double> values;
  values.reserve(n);
  for (const auto& w : samples) values.push_back(op_norm(a.evaluate(w)));
  SampleStats st = sample_stats(values);
  return {st.mean, n > 1 ? st.sd / std::sqrt(static_cast<double>(n)) : 0.0};
}

double castle_window_integral(const Generator& a, double lo, double hi, double f0, double f1,
                              const std::function<double(const Mat2d&, double)>& g) {
  if (!a.fiber_constant()) throw std::invalid_argument("castle_window_integral needs a fiber-constant generator");
  const auto& sp = a.flow().suspension();
  std::vector<double> cuts{lo};
  for (double b : a.base_breaks())
    if (b > lo && b < hi) cuts.push_back(b);
  cuts.push_back(hi);
  std::vector<PassPiece> pieces;
  auto integrand = [&](double x) {
    a.pass_pieces(x, pieces);
    double acc = 0.0;
    for (const auto& p : pieces) {
      double overlap = std::min(p.end, f1) - std::max(p.begin, f0);
      if (overlap > 0.0) acc += overlap * g(p.matrix, x);
    }
    return acc;
  };
  CompensatedSum total;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    total.add(boost::math::quadrature::gauss<double, 20>::integrate(integrand, cuts[i], cuts[i + 1]));
  return total.value() / sp.roof_integral();
}

double l1_norm_exact(const Generator& a) {
  return castle_window_integral(a, 0.0, 1.0, 0.0, std::numeric_limits<double>::infinity(),
                                [](const Mat2d& m, double) { return op_norm(m); });
}

}  // namespace kinetic
