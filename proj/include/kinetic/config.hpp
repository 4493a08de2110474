#pragma once
// Experiment configuration: YAML with unit-suffixed keys, parsed into typed
// sections. Errors carry line/column and the offending field.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kinetic/distance.hpp"
#include "kinetic/lyapunov.hpp"
#include "kinetic/perturbation.hpp"

namespace kinetic {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EstimatorSettings {
  std::size_t ensemble_size = 64;
  double horizon_time = 1000.0;
  EstimatorConfig estimator;
  bool direct_cross_check = true;
};

struct SpectrumSection {
  std::vector<std::string> generators;
  /// Horizons for the top-exponent consistency fit (each paired with 2T).
  std::vector<double> consistency_horizons_time;
  /// Ensemble used for the consistency fit.
  std::size_t consistency_ensemble_size = 8;
};

struct DistanceSection {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::vector<double> p;
  DistanceMethod method = DistanceMethod::monte_carlo;
  std::size_t samples = 100000;
};

struct LowerSection {
  std::string generator;
  double epsilon = 0.1;
  double delta_per_time = 0.1;
  GlobalPerturbationOptions perturbation;
  /// Spectrum of the perturbed generator.
  std::size_t b_ensemble_size = 16;
  double b_horizon_time = 20000.0;
  /// Horizon is raised to this many mean returns to the flowbox.
  double b_min_returns = 40.0;
  /// Plans checked independently (RK45 three-piece decomposition).
  std::size_t checked_plans = 4;
};

struct CollapseSection {
  LowerSection lower;
  double tol_per_time = 0.01;
  int max_rounds = 4;
};

struct UscSection {
  std::string generator;
  double epsilon_per_time = 0.05;
  std::vector<double> scales;  ///< target sigma_p values s_n
  double threshold = 1e-2;     ///< delta(epsilon): verdict applies for s_n <= threshold
  double p = 1.0;
  double offset_time = 2.0;    ///< flowbox fiber offset a
  std::size_t ensemble_size = 16;
  double horizon_time = 20000.0;
  double min_returns = 50.0;
  double max_horizon_time = 5e6;
};

struct ExperimentConfig {
  std::string source_text;
  std::string source_path;
  std::optional<DrivingFlow> flow;
  /// Declaration order is kept for deterministic output.
  std::vector<std::string> generator_order;
  std::map<std::string, GeneratorPtr> generators;
  std::map<std::string, std::string> generator_descriptions;
  EstimatorSettings estimator;
  std::uint64_t seed = 1;
  std::optional<SpectrumSection> spectrum;
  std::optional<DistanceSection> distance;
  std::optional<LowerSection> lower;
  std::optional<CollapseSection> collapse;
  std::optional<UscSection> usc;

  const GeneratorPtr& generator(const std::string& name) const;
};

ExperimentConfig parse_config_text(const std::string& text, const std::string& path = "<string>");
ExperimentConfig load_config(const std::string& path);

/// Named constants accepted for rotation numbers.
double resolve_rotation_constant(const std::string& name);

}  // namespace kinetic
