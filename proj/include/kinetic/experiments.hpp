#pragma once
// Experiment orchestration behind the CLI subcommands. Each run_* returns
// typed results and appends to a Report; cmd_* also writes the output files.

#include <cstdint>
#include <string>
#include <vector>

#include "kinetic/config.hpp"
#include "kinetic/report.hpp"

namespace kinetic {

/// Largest plan precision in the parent chain (53 when none).
int required_precision_bits(const Generator& g);

/// Spectrum with the estimator settings, raised to the precision the
/// generator's installed plans need.
SpectrumEstimate estimate_spectrum(const Generator& g, const EstimatorSettings& s, std::uint64_t seed);

struct ConsistencyPoint {
  double horizon_time = 0.0;
  double lambda1 = 0.0;         ///< ensemble mean of top_exponent at T
  double lambda1_double = 0.0;  ///< same at 2T
  double ci_halfwidth = 0.0;
};

struct SpectrumRun {
  std::string name;
  SpectrumEstimate estimate;
  std::vector<ConsistencyPoint> consistency;
  LinearFit consistency_fit;  ///< log|diff| against log T
  bool constant_system = false;
};

std::vector<SpectrumRun> run_spectrum(const ExperimentConfig& cfg, std::uint64_t seed, Report& report,
                                      CsvTable& convergence);

struct DistanceRow {
  std::string a;
  std::string b;
  double p = 1.0;
  DistanceEstimate hat;
  DistanceEstimate sigma;
};

std::vector<DistanceRow> run_distance(const ExperimentConfig& cfg, std::uint64_t seed, Report& report);

struct LowerRun {
  bool trivial = false;  ///< jump within ci: nothing to lower
  std::string error;     ///< screen or budget failure message
  SpectrumEstimate spec_a;
  SpectrumEstimate spec_b;
  bool b_estimated = false;
  GlobalPerturbationResult perturbation;
  GeneratorPtr b;
  double sigma_hat1 = 0.0;
  double sigma1 = 0.0;
  double target = 0.0;  ///< midpoint(A) + delta
  double delta = 0.0;
  double epsilon = 0.0;
  double b_horizon_time = 0.0;
  std::vector<PlanCheck> checks;
  std::size_t decomposition_checks = 0;
  double worst_swap_residual = 0.0;
  double worst_decomposition = 0.0;
  double worst_unit_time_norm = 0.0;
  double worst_support_norm = 0.0;
  double worst_growth_margin = -1e300;  ///< max(growth - cap)
};

/// Builds the global swap for `a`; with `estimate_b` also estimates the
/// spectrum of B and checks the installed plans.
LowerRun run_lower(const GeneratorPtr& a, const SpectrumEstimate& spec_a, const LowerSection& s,
                   const EstimatorSettings& est, std::uint64_t seed, bool estimate_b);

/// Appends the lower/perturb sections and verdicts.
void report_lower(const LowerRun& r, const std::string& prefix, bool with_tstat, Report& report);

struct CollapseRound {
  int round = 0;
  double jump = 0.0;
  double jump_ci = 0.0;
  double script_L = 0.0;
  double sigma1_round = 0.0;
  double sigma1_cumulative = 0.0;  ///< sigma_1(A_0, A_k) over the exact supports
  double epsilon_round = 0.0;
  int N = 0;
  int precision_bits = 53;
  double horizon_time = 0.0;
  std::string status;  ///< "start", "lowered", "trivial", "converged", or the failure
};

struct CollapseRun {
  std::vector<CollapseRound> rounds;
  bool strictly_decreasing = false;
  int completed_rounds = 0;
};

CollapseRun run_collapse(const ExperimentConfig& cfg, std::uint64_t seed, Report& report, CsvTable& trace);

struct UscRow {
  double scale = 0.0;  ///< requested sigma_p
  double sigma_p = 0.0;
  double sigma_hat_p = 0.0;
  double theta = 0.0;
  double support_base = 0.0;
  double script_L = 0.0;
  double ci_halfwidth = 0.0;
  double horizon_time = 0.0;
  bool identical = false;
  Verdict verdict = Verdict::pass;
  bool judged = false;
};

struct UscRun {
  double script_L_a = 0.0;
  double ci_a = 0.0;
  std::vector<UscRow> rows;
};

UscRun run_usc_probe(const ExperimentConfig& cfg, std::uint64_t seed, Report& report, CsvTable& scatter);

struct RunOptions {
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string out_dir = ".";
};

/// Subcommand entry points: write report.txt, telemetry.txt and the plot
/// files into out_dir and return the exit code.
int cmd_spectrum(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_distance(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_perturb(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_lower(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_collapse(const ExperimentConfig& cfg, const RunOptions& opts);
int cmd_usc_probe(const ExperimentConfig& cfg, const RunOptions& opts);

CsvTable empty_convergence_table();
CsvTable empty_collapse_table();
CsvTable empty_usc_table();

}  // namespace kinetic
