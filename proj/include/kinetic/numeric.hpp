#pragma once
// Small numeric helpers: compensated summation, mod-1 orbit arithmetic,
// seed derivation and a portable uniform generator.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace kinetic {

/// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// x mod 1 in [0, 1).
inline double frac(double x) {
  double f = x - std::floor(x);
  return f >= 1.0 ? 0.0 : f;
}

/// frac(x0 + n*rho) with the product n*rho split exactly (fma), so the orbit
/// error does not grow with n.
inline double rotate_orbit(double x0, double rho, long long n) {
  double nd = static_cast<double>(n);
  double p = nd * rho;
  double e = std::fma(nd, rho, -p);
  double hi = frac(p);
  return frac(frac(hi + x0) + e);
}

/// splitmix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Per-item seed derived from (seed, index); independent of thread count.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// mt19937_64 with a bit-exact uniform in [0,1) (std distributions are not
/// portable across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next() { return engine_(); }
  /// Standard normal via Box-Muller on the portable uniform.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 engine_;
};

/// Mean and 95% half-width of the mean.
struct SampleStats {
  double mean = 0.0;
  double sd = 0.0;
  double halfwidth95 = 0.0;
};

inline SampleStats sample_stats(const std::vector<double>& xs) {
  SampleStats s;
  if (xs.empty()) return s;
  CompensatedSum acc;
  for (double x : xs) acc.add(x);
  s.mean = acc.value() / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    CompensatedSum sq;
    for (double x : xs) sq.add((x - s.mean) * (x - s.mean));
    s.sd = std::sqrt(sq.value() / static_cast<double>(xs.size() - 1));
    s.halfwidth95 = 1.96 * s.sd / std::sqrt(static_cast<double>(xs.size()));
  }
  return s;
}

/// Least-squares line y = intercept + slope x with the slope's standard error.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

/// Best rational approximation p/q (q <= max_den) by continued fractions;
/// returns |x - p/q|.
double rational_approximation_error(double x, long long max_den);

}  // namespace kinetic
