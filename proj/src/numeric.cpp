#include "kinetic/numeric.hpp"

#include <limits>
#include <stdexcept>

namespace kinetic {

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 3)
    throw std::invalid_argument("fit_line: need at least 3 paired points");
  const double n = static_cast<double>(x.size());
  CompensatedSum sx, sy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx.add(x[i]);
    sy.add(y[i]);
  }
  double mx = sx.value() / n, my = sy.value() / n;
  CompensatedSum sxx, sxy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx.add((x[i] - mx) * (x[i] - mx));
    sxy.add((x[i] - mx) * (y[i] - my));
  }
  LinearFit f;
  f.slope = sxy.value() / sxx.value();
  f.intercept = my - f.slope * mx;
  CompensatedSum rss;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = y[i] - f.intercept - f.slope * x[i];
    rss.add(r * r);
  }
  f.slope_stderr = std::sqrt(rss.value() / (n - 2) / sxx.value());
  return f;
}

double rational_approximation_error(double x, long long max_den) {
  double best = std::numeric_limits<double>::infinity();
  // Convergents h/k of the continued fraction of x.
  long long h0 = 0, h1 = 1, k0 = 1, k1 = 0;
  double r = x;
  for (int it = 0; it < 64; ++it) {
    double a = std::floor(r);
    if (a > 1e12) break;
    long long ai = static_cast<long long>(a);
    long long h2 = ai * h1 + h0;
    long long k2 = ai * k1 + k0;
    if (k2 > max_den) break;
    double err = std::abs(x - static_cast<double>(h2) / static_cast<double>(k2));
    if (err < best) best = err;
    if (err == 0.0) break;
    h0 = h1; h1 = h2; k0 = k1; k1 = k2;
    double f = r - a;
    if (f < 1e-300) break;
    r = 1.0 / f;
  }
  return best;
}

}  // namespace kinetic
