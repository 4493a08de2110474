#pragma once
// 2x2 real linear algebra, templated on the scalar so the same closed forms
// serve double and multiprecision code paths.

#include <algorithm>
#include <cmath>
#include <limits>

namespace kinetic {

template <class T>
struct Vec2 {
  T x{};
  T y{};
};

/// Row-major 2x2 matrix [[a, b], [c, d]].
template <class T>
struct Mat2 {
  T a{}, b{}, c{}, d{};

  static Mat2 identity() { return {T(1), T(0), T(0), T(1)}; }
  static Mat2 zero() { return {T(0), T(0), T(0), T(0)}; }
};

using Vec2d = Vec2<double>;
using Mat2d = Mat2<double>;

template <class T>
Mat2<T> operator*(const Mat2<T>& m, const Mat2<T>& n) {
  return {m.a * n.a + m.b * n.c, m.a * n.b + m.b * n.d,
          m.c * n.a + m.d * n.c, m.c * n.b + m.d * n.d};
}

template <class T>
Vec2<T> operator*(const Mat2<T>& m, const Vec2<T>& v) {
  return {m.a * v.x + m.b * v.y, m.c * v.x + m.d * v.y};
}

template <class T>
Mat2<T> operator+(const Mat2<T>& m, const Mat2<T>& n) {
  return {m.a + n.a, m.b + n.b, m.c + n.c, m.d + n.d};
}

template <class T>
Mat2<T> operator-(const Mat2<T>& m, const Mat2<T>& n) {
  return {m.a - n.a, m.b - n.b, m.c - n.c, m.d - n.d};
}

template <class T>
Mat2<T> operator*(const T& s, const Mat2<T>& m) {
  return {s * m.a, s * m.b, s * m.c, s * m.d};
}

template <class T>
Vec2<T> operator*(const T& s, const Vec2<T>& v) {
  return {s * v.x, s * v.y};
}

template <class T>
T det(const Mat2<T>& m) { return m.a * m.d - m.b * m.c; }

template <class T>
T trace(const Mat2<T>& m) { return m.a + m.d; }

template <class T>
Mat2<T> transpose(const Mat2<T>& m) { return {m.a, m.c, m.b, m.d}; }

template <class T>
Mat2<T> inverse(const Mat2<T>& m) {
  T dt = det(m);
  return {m.d / dt, -m.b / dt, -m.c / dt, m.a / dt};
}

template <class T>
T cross(const Vec2<T>& u, const Vec2<T>& v) { return u.x * v.y - u.y * v.x; }

template <class T>
T dot(const Vec2<T>& u, const Vec2<T>& v) { return u.x * v.x + u.y * v.y; }

template <class T>
T norm(const Vec2<T>& v) {
  using std::hypot;
  return hypot(v.x, v.y);
}

template <class T>
Vec2<T> normalized(const Vec2<T>& v) {
  T n = norm(v);
  return {v.x / n, v.y / n};
}

template <class T>
T max_abs_entry(const Mat2<T>& m) {
  using std::abs;
  using std::max;
  return max(max(abs(m.a), abs(m.b)), max(abs(m.c), abs(m.d)));
}

/// Both singular values, largest first. Uses the stable split
/// M = [[e+h, f+g], [g-f, e-h]] style decomposition, so the small one keeps
/// relative accuracy when the matrix is well scaled.
template <class T>
void singular_values(const Mat2<T>& m, T& s1, T& s2) {
  using std::abs;
  using std::hypot;
  T p = hypot((m.a + m.d) / 2, (m.c - m.b) / 2);
  T q = hypot((m.a - m.d) / 2, (m.b + m.c) / 2);
  s1 = p + q;
  s2 = abs(p - q);
}

/// Operator 2-norm.
template <class T>
T op_norm(const Mat2<T>& m) {
  T s1, s2;
  singular_values(m, s1, s2);
  return s1;
}

/// Right singular vectors (v1 most expanded, v2 least expanded) as unit vectors.
/// The input is rescaled first so products with huge entries do not overflow.
template <class T>
void right_singular_vectors(const Mat2<T>& m, Vec2<T>& v1, Vec2<T>& v2) {
  using std::atan2;
  using std::cos;
  using std::sin;
  T s = max_abs_entry(m);
  Mat2<T> n = s > T(0) ? Mat2<T>{m.a / s, m.b / s, m.c / s, m.d / s} : Mat2<T>::identity();
  // N^T N = [[p, r], [r, q]]
  T p = n.a * n.a + n.c * n.c;
  T q = n.b * n.b + n.d * n.d;
  T r = n.a * n.b + n.c * n.d;
  T phi = atan2(2 * r, p - q) / 2;
  v1 = {cos(phi), sin(phi)};
  v2 = {-sin(phi), cos(phi)};
}

/// sin of the angle between the lines spanned by u and v, in [0, 1].
template <class T>
T projective_distance(const Vec2<T>& u, const Vec2<T>& v) {
  using std::abs;
  return abs(cross(u, v)) / (norm(u) * norm(v));
}

/// exp(M) in closed form: exp(m) [C I + S (M - m I)] with m = tr/2 and
/// q^2 = m^2 - det. C and S are the cosh/sinh (or cos/sin) pair, switched to a
/// power series in q^2 near the degenerate case.
template <class T>
Mat2<T> expm(const Mat2<T>& mat) {
  using std::abs;
  using std::cos;
  using std::cosh;
  using std::exp;
  using std::sin;
  using std::sinh;
  using std::sqrt;
  T m = trace(mat) / 2;
  Mat2<T> z{mat.a - m, mat.b, mat.c, mat.d - m};
  T q2 = -det(z);
  T C, S;
  if (abs(q2) <= T(1)) {
    // Series: C = sum q2^k/(2k)!, S = sum q2^k/(2k+1)!
    T eps = std::numeric_limits<T>::epsilon();
    T termC = T(1), termS = T(1);
    C = T(1);
    S = T(1);
    for (int k = 1; k < 400; ++k) {
      termC = termC * q2 / T((2 * k - 1) * (2 * k));
      termS = termS * q2 / T((2 * k) * (2 * k + 1));
      C += termC;
      S += termS;
      if (abs(termC) < eps && abs(termS) < eps) break;
    }
  } else if (q2 > T(0)) {
    T q = sqrt(q2);
    C = cosh(q);
    S = sinh(q) / q;
  } else {
    T w = sqrt(-q2);
    C = cos(w);
    S = sin(w) / w;
  }
  T e = exp(m);
  return {e * (C + S * z.a), e * (S * z.b), e * (S * z.c), e * (C + S * z.d)};
}

}  // namespace kinetic
