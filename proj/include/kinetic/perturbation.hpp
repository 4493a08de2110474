#pragma once
// Rotation perturbations: the constant elliptical-rotation generator P(theta),
// the local swap of Oseledets directions along a unit orbit segment, and the
// measure-budgeted global swap on a flowbox of a suspension flow.

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kinetic/lyapunov.hpp"

namespace kinetic {

constexpr double kPi = 3.14159265358979323846;
constexpr double kFourPiSquared = 4.0 * kPi * kPi;
/// Max-entry vs operator norm equivalence constant for 2x2 matrices.
constexpr double kNormEquivalenceC = 2.0;

/// Clockwise angle from line Ru to line Rv, lifted to (pi, 2pi]; equal lines give 2pi.
double clockwise_line_angle(Vec2d u, Vec2d v);

/// [[0, 1], [-theta^2, 0]].
Mat2d rotation_matrix(double theta);
/// Constant kinetic generator P(theta) over `flow`; theta in [pi, 2pi].
GeneratorPtr rotation_generator(const DrivingFlow& flow, double theta);
/// Closed form exp(t P(theta)).
Mat2d rotation_propagator(double theta, double t);

template <class S>
struct SwapSolution {
  S theta{};
  S gamma{};
  S residual{};  ///< projective distance between Phi_P(theta, 1) u and v
};

/// theta in [pi, 2pi] with Phi_P(theta, 1) u parallel to v, by a sweep and
/// bisection on the closed form.
SwapSolution<double> solve_swap_theta(Vec2d u, Vec2d v);
/// Same in multiprecision: bracket in double, then safeguarded Newton.
SwapSolution<MpReal> solve_swap_theta_mp(const Vec2<MpReal>& u, const Vec2<MpReal>& v);

struct RotationPlan {
  double theta = 2 * kPi;
  double gamma = 1.0;
  Vec2d source_line{1.0, 0.0};
  Vec2d target_line{1.0, 0.0};
  double residual = 0.0;
  /// Whether the literal clockwise line angle also realizes the swap.
  bool literal_angle_swaps = false;
  double literal_angle = 2 * kPi;
  int precision_bits = 53;
  ExactRotation exact;
};

/// Fills theta/gamma/residual/literal-angle fields of a plan from u, v.
RotationPlan make_rotation_plan(Vec2d u, Vec2d v);

/// B = P(theta) on the orbit segment phi^{[0,1]}(anchor), A elsewhere.
class LocalSwapGenerator final : public Generator {
 public:
  LocalSwapGenerator(GeneratorPtr parent, DrivingState anchor, RotationPlan plan);

  Mat2d evaluate(const DrivingState& w) const override;
  bool is_kinetic() const override { return parent_->is_kinetic(); }
  double mean_trace() const override { return parent_->mean_trace(); }
  double sup_norm_bound() const override;
  bool fiber_constant() const override { return parent_->fiber_constant(); }
  void pass_pieces(double x, std::vector<PassPiece>& out) const override;
  void breakpoints(const DrivingState& w, double t0, double t1, std::vector<double>& out) const override;
  std::vector<double> base_breaks() const override { return parent_->base_breaks(); }
  std::string describe() const override;

  const RotationPlan& plan() const { return plan_; }
  const DrivingState& anchor() const { return anchor_; }
  const GeneratorPtr& parent() const { return parent_; }
  /// Offset s in [0, 1] with w = phi^s(anchor), if w is on the segment.
  std::optional<double> segment_offset(const DrivingState& w) const;

 private:
  GeneratorPtr parent_;
  DrivingState anchor_;
  RotationPlan plan_;
};

std::shared_ptr<const LocalSwapGenerator> build_local_swap(GeneratorPtr a, const DrivingState& w, Vec2d u, Vec2d v);

enum class BudgetMeasure { normalized, unnormalized };

struct BudgetRecord {
  double epsilon = 0.0;
  double epsilon_prime = 0.0;  ///< epsilon / (1 - epsilon)
  double interval_length = 1.0;
  double l1_norm = 0.0;          ///< upper bound on int ||A|| dmu
  double sup_support_norm = 0.0; ///< sup ||A|| over the admissible support region
  double L = 0.0;
  double measure_normalized = 0.0;    ///< Leb(base) / int h
  double measure_unnormalized = 0.0;  ///< Leb(base)
  double measure_enforced = 0.0;
  double measure_cap = 0.0;  ///< largest admissible enforced measure
  double bound = 0.0;        ///< (b - a)(L + 4 pi^2) measure_enforced
  BudgetMeasure convention = BudgetMeasure::normalized;
};

/// Per-interval summary of the installed plans.
struct CellRecord {
  double lo = 0.0;
  double hi = 0.0;
  double centre = 0.0;
  RotationPlan centre_plan;
  double frame_variation = 0.0;  ///< projective spread of (u, v) across the interval
};

/// Frames and precision used for per-point swap plans.
struct PlanSettings {
  int precision_bits = 53;
  double frame_horizon_time = 200.0;
};

/// B = A outside phi^{[a, a+1]}(support); inside, the rotation planned for the
/// base point. Plans either swap the parent's Oseledets directions (computed
/// lazily per exact base point) or use a fixed angle per interval.
class FlowboxPerturbation final : public Generator {
 public:
  /// Swap plans.
  FlowboxPerturbation(GeneratorPtr parent, IntervalUnion support, double a, PlanSettings settings);
  /// Fixed angle per interval of `support`.
  FlowboxPerturbation(GeneratorPtr parent, IntervalUnion support, double a, std::vector<double> thetas);

  Mat2d evaluate(const DrivingState& w) const override;
  bool is_kinetic() const override { return parent_->is_kinetic(); }
  double mean_trace() const override;
  double sup_norm_bound() const override;
  bool fiber_constant() const override { return true; }
  void pass_pieces(double x, std::vector<PassPiece>& out) const override;
  std::vector<double> base_breaks() const override;
  std::string describe() const override;

  const GeneratorPtr& parent() const { return parent_; }
  const IntervalUnion& support() const { return support_; }
  double fiber_offset() const { return a_; }
  bool swap_mode() const { return thetas_.empty(); }
  const PlanSettings& settings() const { return settings_; }
  /// Plan at base point x (must lie in the support).
  const RotationPlan& plan_at(double x) const;
  /// Snapshot of all plans computed so far, keyed by base point.
  std::vector<std::pair<double, RotationPlan>> installed_plans() const;
  std::size_t plan_count() const;
  /// Largest ||P(theta)|| = theta^2 over installed plans and fixed angles.
  double sup_support_norm() const;
  /// Flowbox mass under mu.
  double flowbox_measure() const;

  BudgetRecord budget;
  std::vector<CellRecord> cells;

 private:
  RotationPlan compute_swap_plan(double x) const;

  GeneratorPtr parent_;
  IntervalUnion support_;
  double a_;
  PlanSettings settings_;
  std::vector<double> thetas_;
  std::vector<RotationPlan> fixed_plans_;
  mutable std::mutex mutex_;
  mutable std::map<double, std::unique_ptr<RotationPlan>> plans_;
};

/// Upper bound on int ||A|| dmu (exact for unperturbed fiber-constant fields).
double l1_norm_upper(const Generator& a);

/// Union of supports of all flowbox perturbations in the parent chain of a.
IntervalUnion perturbed_support(const Generator& a);

struct GlobalPerturbationOptions {
  double epsilon = 0.1;
  double eta = 0.2;
  /// 0 selects N automatically: the smallest even N whose screen passes.
  int N = 0;
  std::size_t candidate_count = 64;
  std::size_t max_intervals = 1;
  std::size_t min_passing = 4;
  double budget_fill = 0.9;
  BudgetMeasure budget_measure = BudgetMeasure::normalized;
  /// Base points to stay away from (supports of earlier perturbations).
  IntervalUnion excluded;
  std::uint64_t seed = 1;
  /// 0 selects the precision from the gap and the longest return time.
  int precision_bits = 0;
  /// 0 derives the frame horizon from precision and gap.
  double frame_horizon_time = 0.0;
  /// Horizon for the double-precision frames used by the screen.
  double screen_frame_horizon_time = 150.0;
  EstimatorConfig estimator;
};

struct ScreenRecord {
  double x = 0.0;
  bool passed = false;
  double worst_eta = 0.0;   ///< worst |lambda_i - finite-time rate| over the first condition
  double worst_eta2 = 0.0;  ///< same for the shifted point
};

struct GlobalPerturbationResult {
  std::shared_ptr<const FlowboxPerturbation> perturbation;
  int N = 0;
  int precision_bits = 53;
  double frame_horizon_time = 0.0;
  double longest_return_time = 0.0;
  std::vector<ScreenRecord> screen;
};

class ScreenEmptyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BudgetInfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Builds the global swap for A given its estimated spectrum.
GlobalPerturbationResult build_global_perturbation(const GeneratorPtr& a, const SpectrumEstimate& spec_a,
                                                   const GlobalPerturbationOptions& opts);

/// Finite-time rates (1/t) log ||Phi(t, w)|_{E^i}|| for i = 1, 2 with frames
/// from `oseledets_splitting` at w. Meant for short t (the screen uses t <= N),
/// where leakage of E1 into the pushed E2 stays at rounding level.
struct RestrictedRates {
  double rate1 = 0.0;
  double rate2 = 0.0;
};
RestrictedRates restricted_rates(const Generator& a, const DrivingState& w, double t, double frame_horizon,
                                 const EstimatorConfig& cfg);

/// sigma_hat_p between a generator and a flowbox descendant (either order),
/// integrating only over the perturbation supports.
double sigma_hat_p_flowbox_exact(const Generator& a, const Generator& b, double p);

struct PlanCheck {
  double base = 0.0;
  double swap_residual = 0.0;     ///< pd(Phi_B(1) E1(entry), E2(exit))
  double support_norm = 0.0;      ///< ||P(theta)||
  double unit_time_norm = 0.0;    ///< ||Phi_B(1, entry)||
  double decomposition_residual = -1.0;  ///< three-piece residual (RK45 vs pieces), -1 if not computed
  double growth_rate = 0.0;       ///< (1/N) log ||Phi_B(N, (x, 0))||
  double growth_cap = 0.0;
};

/// Independent double-precision checks of one installed plan (frames at the
/// plan's horizon, Phi_B(1) by RK45). When
/// `with_decomposition` is set, Phi_B(N) is also integrated by RK45 and
/// compared against the three-piece product.
PlanCheck check_plan(const FlowboxPerturbation& b, double x, int N, const SpectrumEstimate& spec_a, double eta,
                     bool with_decomposition, const EstimatorConfig& cfg);

}  // namespace kinetic
