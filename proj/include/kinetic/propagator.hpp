#pragma once
// Fundamental solution Phi_A(t, w) of X' = A(phi^t w) X by an adaptive
// Dormand-Prince 5(4) pair, with structural checks.

#include <stdexcept>
#include <string>

#include "kinetic/generator.hpp"

namespace kinetic {

struct IntegratorConfig {
  double rtol = 1e-10;
  double atol = 1e-12;
  double max_step_time = 0.01;
  double renorm_threshold = 1e8;
  /// Smallest admissible step, relative to max(1, |t|).
  double min_step_relative = 1e-13;

  void validate() const;
};

struct Propagator {
  Mat2d matrix = Mat2d::identity();
  double t = 0.0;
  long long step_count = 0;
  double estimated_local_error = 0.0;
};

/// Phi(t) = exp(log_scale) * matrix, for horizons where entries overflow.
struct ScaledPropagator {
  Mat2d matrix = Mat2d::identity();
  double log_scale = 0.0;
  long long step_count = 0;
};

class IntegrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Phi_A(t, w). Negative t integrates the reversed-time equation.
Propagator integrate(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg = {});

/// Phi_A(t, w) assembled from windows of length `window`, rescaled so that
/// arbitrarily long horizons stay finite.
ScaledPropagator integrate_scaled(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg,
                                  double window = 1.0);

/// ||Phi(t+s, w) - Phi(t, phi^s w) Phi(s, w)||.
double cocycle_defect(const Generator& a, const DrivingState& w, double t, double s, const IntegratorConfig& cfg = {});

struct GronwallSide {
  double log_plus_norm = 0.0;
  double integral_norm = 0.0;
  bool holds(double slack = 1e-8) const { return log_plus_norm <= integral_norm + slack; }
};

struct GronwallGap {
  GronwallSide forward;  ///< uses Phi(t)
  GronwallSide inverse;  ///< uses Phi(t)^{-1}
};

GronwallGap gronwall_gap(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg = {});

/// |log|det Phi(t)| - int_0^t trace A(phi^s w) ds|; for kinetic A the trace is -alpha.
double liouville_defect(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg = {});

/// int_t0^t1 f(A(phi^s w)) ds by adaptive Gauss-Kronrod on the smooth pieces.
double integrate_along_orbit(const Generator& a, const DrivingState& w, double t0, double t1,
                             const std::function<double(const Mat2d&)>& f);

/// ||Phi(t, w) Phi(-t, phi^t w) - Id||.
double inverse_consistency(const Generator& a, const DrivingState& w, double t, const IntegratorConfig& cfg = {});

}  // namespace kinetic
