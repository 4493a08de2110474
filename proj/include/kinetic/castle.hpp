#pragma once
// Exact propagation for fiber-constant generators over a suspension flow.
// Along an orbit such a generator is constant on finitely many pieces per
// pass, so Phi is a product of closed-form 2x2 exponentials. Templated on the
// scalar: double for speed, MpReal when the product is ill conditioned.

#include <array>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "kinetic/generator.hpp"
#include "kinetic/numeric.hpp"
#include "kinetic/precision.hpp"

namespace kinetic {

template <class S>
struct ScaledMat {
  Mat2<S> matrix = Mat2<S>::identity();
  double log_scale = 0.0;  // Phi = 2^(log_scale / ln 2) * matrix, i.e. exp(log_scale) * matrix
};

namespace detail {

inline int binary_exponent(double x) {
  int e = 0;
  std::frexp(x, &e);
  return e;
}
inline int binary_exponent(const MpReal& x) {
  int e = 0;
  boost::multiprecision::frexp(x, &e);
  return e;
}
inline double scale2(double x, int e) { return std::ldexp(x, e); }
inline MpReal scale2(const MpReal& x, int e) { return boost::multiprecision::ldexp(x, e); }

template <class S>
S rotation_angle(const ExactRotation& r);
template <>
inline double rotation_angle<double>(const ExactRotation& r) { return r.theta; }
template <>
inline MpReal rotation_angle<MpReal>(const ExactRotation& r) { return r.has_mp ? r.theta_mp : MpReal(r.theta); }

template <class S>
Mat2<S> lift(const Mat2d& m) { return {S(m.a), S(m.b), S(m.c), S(m.d)}; }

}  // namespace detail

/// [[cos th t, sin(th t)/th], [-th sin th t, cos th t]].
template <class S>
Mat2<S> rotation_propagator_t(const S& theta, const S& t) {
  using std::cos;
  using std::sin;
  S c = cos(theta * t), s = sin(theta * t);
  return {c, s / theta, -theta * s, c};
}

template <class S>
class CastleEngine {
 public:
  explicit CastleEngine(const Generator& g) : g_(g) {
    if (!g.fiber_constant()) throw std::invalid_argument("castle engine needs a fiber-constant suspension generator");
  }

  /// Phi(t, w), any sign of t, with exact power-of-two rescaling.
  ScaledMat<S> propagate(const CastlePoint& w, double t) {
    ScaledMat<S> out;
    long long exps = 0;
    walk(w, t, [&](const Mat2<S>& p) {
      out.matrix = p * out.matrix;
      int e = detail::binary_exponent(max_abs_entry(out.matrix));
      if (e > 64 || e < -64) {
        out.matrix = scale(out.matrix, -e);
        exps += e;
      }
    });
    out.log_scale = static_cast<double>(exps) * 0.69314718055994530942;
    return out;
  }

  /// v <- Phi(t, w) v normalized; returns log(||Phi v|| / ||v||).
  double push(const CastlePoint& w, double t, Vec2<S>& v) {
    using std::log;
    S n0 = norm(v);
    long long exps = 0;
    walk(w, t, [&](const Mat2<S>& p) {
      v = p * v;
      using std::abs;
      using std::max;
      int e = detail::binary_exponent(max(abs(v.x), abs(v.y)));
      if (e > 64 || e < -64) {
        v = {detail::scale2(v.x, -e), detail::scale2(v.y, -e)};
        exps += e;
      }
    });
    S n1 = norm(v);
    double growth = static_cast<double>(exps) * 0.69314718055994530942 + to_double(S(log(n1) - log(n0)));
    v = {v.x / n1, v.y / n1};
    return growth;
  }

  long long pieces_applied() const { return applied_; }

 private:
  static Mat2<S> scale(const Mat2<S>& m, int e) {
    return {detail::scale2(m.a, e), detail::scale2(m.b, e), detail::scale2(m.c, e), detail::scale2(m.d, e)};
  }

  Mat2<S> piece_propagator(const PassPiece& p, double dur) {
    if (p.rotation) {
      S th = detail::rotation_angle<S>(*p.rotation);
      return rotation_propagator_t<S>(th, S(dur));
    }
    std::array<double, 5> key{p.matrix.a, p.matrix.b, p.matrix.c, p.matrix.d, dur};
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    if (cache_.size() > 20000) cache_.clear();
    Mat2<S> m = detail::lift<S>(p.matrix);
    S d(dur);
    Mat2<S> e = expm(Mat2<S>{m.a * d, m.b * d, m.c * d, m.d * d});
    cache_.emplace(key, e);
    return e;
  }

  // Calls apply(P) for the propagator P of every piece traversed by the orbit
  // segment from w over flow time t, in traversal order. Passes are located
  // with the same counting convention as evolve_castle. Durations are taken
  // in fiber coordinates of each pass, so an unclipped piece always has the
  // exact duration end - begin wherever the walk started.
  template <class Apply>
  void walk(const CastlePoint& w, double t, Apply&& apply) {
    if (t == 0.0) return;
    const SuspensionSpec& sp = g_.flow().suspension();
    const double lo = sp.roof_low(), hi = sp.roof_high();
    long long n_lo = 0, n_hi = 0, n = 0;
    auto consumed = [&] { return static_cast<double>(n_lo) * lo + static_cast<double>(n_hi) * hi; };
    double x = w.x;
    if (t > 0) {
      const double end = w.r + t;  // in fiber coordinates of the first pass
      for (;;) {
        double before = consumed();
        if (n > 0 && before >= end) break;
        // Fiber window of this pass: [f0, f1).
        double f0 = n == 0 ? w.r : 0.0;
        double f1 = end - before;
        g_.pass_pieces(x, pieces_);
        for (const auto& p : pieces_) {
          if (p.end <= f0) continue;
          if (p.begin >= f1) break;
          double a = p.begin < f0 ? f0 : p.begin;
          double b = p.end > f1 ? f1 : p.end;
          double d = (a == p.begin && b == p.end) ? p.end - p.begin : b - a;
          if (d > 0.0) {
            apply(piece_propagator(p, d));
            ++applied_;
          }
        }
        (sp.roof(x) == lo ? n_lo : n_hi) += 1;
        x = rotate_orbit(w.x, sp.base_rotation, ++n);
      }
    } else {
      const double begin = w.r + t;  // may be far below zero
      for (;;) {
        // Fiber window of pass n (n <= 0) in its own coordinates: [f0, f1).
        double below = consumed();  // total roof of passes n+1 .. -1 when n < 0
        double f1 = n == 0 ? w.r : sp.roof(x);
        double f0 = begin + below + (n == 0 ? 0.0 : sp.roof(x));
        if (n < 0 && f0 >= f1) break;
        g_.pass_pieces(x, pieces_);
        for (auto p = pieces_.rbegin(); p != pieces_.rend(); ++p) {
          if (p->begin >= f1) continue;
          if (p->end <= f0) break;
          double a = p->begin < f0 ? f0 : p->begin;
          double b = p->end > f1 ? f1 : p->end;
          double d = (a == p->begin && b == p->end) ? p->end - p->begin : b - a;
          if (d > 0.0) {
            apply(piece_propagator(*p, -d));
            ++applied_;
          }
        }
        if (n < 0) (sp.roof(x) == lo ? n_lo : n_hi) += 1;
        x = rotate_orbit(w.x, sp.base_rotation, --n);
      }
    }
  }

  const Generator& g_;
  std::vector<PassPiece> pieces_;
  std::map<std::array<double, 5>, Mat2<S>> cache_;
  long long applied_ = 0;
};

}  // namespace kinetic
