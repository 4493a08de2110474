#pragma once
// sigma_hat_p and the bounded distance sigma_p = x / (1 + x) between
// generators over the same flow.

#include <cstdint>
#include <string>

#include "kinetic/generator.hpp"

namespace kinetic {

enum class DistanceMethod { monte_carlo, exact_support };

struct DistanceOptions {
  DistanceMethod method = DistanceMethod::monte_carlo;
  std::uint64_t seed = 1;
  std::size_t samples = 100000;
};

struct DistanceEstimate {
  double value = 0.0;      ///< may be +inf
  double std_error = 0.0;  ///< 0 for exact values
  bool infinite = false;
  DistanceMethod method = DistanceMethod::monte_carlo;
  std::size_t samples = 0;
};

/// (int ||A - B||^p dmu)^(1/p). Monte Carlo uses mu-samples derived from the
/// seed and a delta-method standard error; exact_support integrates over the
/// flowbox supports separating A and B.
DistanceEstimate sigma_hat_p(const Generator& a, const Generator& b, double p, const DistanceOptions& opts = {});

/// x / (1 + x), 1 for x = inf.
double bounded_distance(double x);

/// sigma_p with the standard error mapped through x / (1 + x).
DistanceEstimate sigma_p(const Generator& a, const Generator& b, double p, const DistanceOptions& opts = {});

/// True when the running p-th moments of a sample sequence fail to settle:
/// the last doubling moves the mean by more than `tolerance` relative, or one
/// sample carries more than half the total.
bool moments_unsettled(const std::vector<double>& samples, double tolerance = 0.25);

std::string method_name(DistanceMethod m);

}  // namespace kinetic
