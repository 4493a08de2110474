#pragma once
// Lyapunov exponents, Oseledets frames, the integrated top exponent and the
// jump (half spectral gap).

#include <cstdint>
#include <string>
#include <vector>

#include "kinetic/castle.hpp"
#include "kinetic/propagator.hpp"

namespace kinetic {

enum class PropagationMethod { automatic, rk45, castle };

struct EstimatorConfig {
  IntegratorConfig integrator;
  double window_time = 1.0;
  /// Flow time discarded before accumulating growth.
  double transient_time = 10.0;
  PropagationMethod method = PropagationMethod::automatic;
  /// Castle engine precision; above 53 bits MPFR is used.
  int precision_bits = 53;
};

/// True when the exact castle engine handles `a` under `cfg`.
bool uses_castle(const Generator& a, const EstimatorConfig& cfg);
std::string method_tag(const Generator& a, const EstimatorConfig& cfg);

/// Phi(t, w) rescaled to unit max entry, with the dropped log scale.
ScaledMat<double> propagate_scaled(const Generator& a, const DrivingState& w, double t, const EstimatorConfig& cfg);

struct GrowthRecord {
  double value = 0.0;       ///< (1/T) log growth over [0, T] after the transient
  double half_value = 0.0;  ///< same over the first half of the horizon
  long long renorm_count = 0;
  long long step_count = 0;
};

/// Forward growth rate of `start` (direction only matters) from w over T.
GrowthRecord growth_rate(const Generator& a, const DrivingState& w, double T, Vec2d start, const EstimatorConfig& cfg);
/// Growth rate of the reversed cocycle Phi(-t, w), t in [0, T].
GrowthRecord backward_growth_rate(const Generator& a, const DrivingState& w, double T, Vec2d start,
                                  const EstimatorConfig& cfg);

/// Birkhoff-style estimate of lambda1(A, w) from a fixed generic start vector.
double top_exponent(const Generator& a, const DrivingState& w, double T, const EstimatorConfig& cfg = {});

struct SpectrumEstimate {
  double lambda1 = 0.0;
  double lambda2 = 0.0;         ///< sum rule: mean trace - lambda1
  double lambda2_direct = 0.0;  ///< reversed-time growth along E2
  double horizon_time = 0.0;
  long long renorm_count = 0;
  long long step_count = 0;
  double ci_halfwidth = 0.0;    ///< ci_statistical + horizon_drift
  double ci_statistical = 0.0;  ///< 1.96 sd / sqrt(n) over the ensemble
  double horizon_drift = 0.0;   ///< |mean lambda1(T) - mean lambda1(T/2)|
  double ci_direct = 0.0;       ///< same construction for lambda2_direct
  double lambda1_half = 0.0;
  double mean_trace = 0.0;
  std::size_t ensemble_size = 0;
  std::string method;
  bool flagged = false;
  std::string flag_reason;
  std::vector<double> member_lambda1;

  double jump() const { return 0.5 * (lambda1 - lambda2); }
  double midpoint() const { return 0.5 * (lambda1 + lambda2); }
};

struct SpectrumOptions {
  bool direct_cross_check = true;
};

/// Ensemble spectrum. Members are (state, start vector) pairs derived from
/// `seed`; the reduction runs in member order.
SpectrumEstimate spectrum(const Generator& a, const std::vector<DrivingState>& ensemble, double T,
                          const EstimatorConfig& cfg, std::uint64_t seed, const SpectrumOptions& opts = {});
SpectrumEstimate spectrum(const Generator& a, std::size_t ensemble_size, double T, const EstimatorConfig& cfg,
                          std::uint64_t seed, const SpectrumOptions& opts = {});

struct OseledetsFrame {
  Vec2d e1;
  Vec2d e2;
  double angle = 0.0;     ///< asin |e1 x e2|
  double residual = 0.0;  ///< projective change between horizons T/2 and T
  bool flagged = false;
};

OseledetsFrame oseledets_splitting(const Generator& a, const DrivingState& w, double T, const EstimatorConfig& cfg = {});

struct AnglePoint {
  double t = 0.0;
  double value = 0.0;  ///< (1/t) log sin angle(E1, E2) at phi^t w
};

struct AngleProbe {
  std::vector<AnglePoint> series;
  LinearFit fit;
};

AngleProbe angle_subexponential_probe(const Generator& a, const DrivingState& w, double frame_horizon,
                                      const std::vector<double>& t_grid, const EstimatorConfig& cfg = {});

/// Smallest rate difference the integrator tolerance can resolve; ci-based
/// comparisons of two exponents never go below it.
double rate_resolution(const EstimatorConfig& cfg);

double script_L(const SpectrumEstimate& s);
double jump(const SpectrumEstimate& s);

}  // namespace kinetic
