#include "kinetic/distance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "kinetic/numeric.hpp"
#include "kinetic/perturbation.hpp"

namespace kinetic {

std::string method_name(DistanceMethod m) {
  return m == DistanceMethod::exact_support ? "exact_support" : "monte_carlo";
}

double bounded_distance(double x) {
  if (std::isinf(x)) return 1.0;
  if (!(x >= 0.0)) throw std::invalid_argument("bounded_distance: argument must be nonnegative");
  return x / (1.0 + x);
}

bool moments_unsettled(const std::vector<double>& samples, double tolerance) {
  if (samples.size() < 8) return false;
  CompensatedSum half, total;
  double largest = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i < samples.size() / 2) half.add(samples[i]);
    total.add(samples[i]);
    largest = std::max(largest, samples[i]);
  }
  double m_half = half.value() / static_cast<double>(samples.size() / 2);
  double m_all = total.value() / static_cast<double>(samples.size());
  if (!std::isfinite(m_all)) return true;
  if (m_all == 0.0) return false;
  if (largest > 0.5 * total.value()) return true;
  return std::abs(m_all - m_half) > tolerance * m_all;
}

DistanceEstimate sigma_hat_p(const Generator& a, const Generator& b, double p, const DistanceOptions& opts) {
  if (!(p >= 1.0) || !std::isfinite(p)) throw std::invalid_argument("sigma_hat_p: p must be a finite real >= 1");
  if (!a.flow().same_as(b.flow())) throw std::invalid_argument("sigma_hat_p: generators live on different flows");
  DistanceEstimate est;
  est.method = opts.method;
  if (&a == &b) return est;
  if (opts.method == DistanceMethod::exact_support) {
    est.value = sigma_hat_p_flowbox_exact(a, b, p);
    return est;
  }
  if (opts.samples == 0) throw std::invalid_argument("sigma_hat_p: sample count must be positive");
  std::vector<DrivingState> pts = a.flow().sample_mu(opts.seed, opts.samples);
  std::vector<double> d;
  d.reserve(pts.size());
  for (const auto& w : pts) d.push_back(std::pow(op_norm(a.evaluate(w) - b.evaluate(w)), p));
  est.samples = d.size();
  const bool bounded = std::isfinite(a.sup_norm_bound()) && std::isfinite(b.sup_norm_bound());
  if (!bounded && moments_unsettled(d)) {
    est.value = std::numeric_limits<double>::infinity();
    est.infinite = true;
    return est;
  }
  SampleStats st = sample_stats(d);
  if (st.mean <= 0.0) return est;
  est.value = std::pow(st.mean, 1.0 / p);
  double se_mean = d.size() > 1 ? st.sd / std::sqrt(static_cast<double>(d.size())) : 0.0;
  est.std_error = est.value / (p * st.mean) * se_mean;
  return est;
}

DistanceEstimate sigma_p(const Generator& a, const Generator& b, double p, const DistanceOptions& opts) {
  DistanceEstimate hat = sigma_hat_p(a, b, p, opts);
  DistanceEstimate out = hat;
  out.value = bounded_distance(hat.value);
  if (!hat.infinite) out.std_error = hat.std_error / ((1.0 + hat.value) * (1.0 + hat.value));
  return out;
}

}  // namespace kinetic
