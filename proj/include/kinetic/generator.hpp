#pragma once
// Infinitesimal generators A: M -> R^{2x2} over a driving flow, built from
// finitely parameterized coefficient fields.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "kinetic/driving_flow.hpp"
#include "kinetic/linalg.hpp"
#include "kinetic/precision.hpp"

namespace kinetic {

struct TrigTerm {
  int k1 = 0;
  int k2 = 0;
  double cos_coeff = 0.0;
  double sin_coeff = 0.0;
};

/// sum_k c_k cos(2 pi (k1 x + k2 y)) + s_k sin(2 pi (k1 x + k2 y)) on the torus.
struct TrigPolynomial {
  std::vector<TrigTerm> terms;
};

/// Piecewise constant in the suspension base, constant in fiber time.
/// `breaks` are the interior cut points (sorted, inside (0,1));
/// values.size() == breaks.size() + 1.
struct StepFunction {
  std::vector<double> breaks;
  std::vector<double> values;
};

struct ConstantField {
  double value = 0.0;
};

class CoefficientField {
 public:
  using Repr = std::variant<ConstantField, TrigPolynomial, StepFunction>;

  CoefficientField() : repr_(ConstantField{0.0}) {}
  static CoefficientField constant(double value);
  static CoefficientField trig(std::vector<TrigTerm> terms);
  static CoefficientField step(std::vector<double> breaks, std::vector<double> values);

  double evaluate(const DrivingState& w) const;
  /// Value at base point x (constant and step fields only).
  double evaluate_base(double x) const;
  bool is_constant() const { return std::holds_alternative<ConstantField>(repr_); }
  bool is_trig() const { return std::holds_alternative<TrigPolynomial>(repr_); }
  bool is_step() const { return std::holds_alternative<StepFunction>(repr_); }
  bool fiber_constant() const { return !is_trig(); }
  /// Bound on |value| derived from the parameters.
  double derived_sup_bound() const;
  /// Exact mean against the invariant probability measure of `flow`.
  double mean(const DrivingFlow& flow) const;
  /// Cut points of a step field (empty otherwise).
  std::vector<double> base_breaks() const;
  const Repr& repr() const { return repr_; }

  std::optional<double> declared_sup_bound;
  std::optional<double> declared_l1_bound;

 private:
  explicit CoefficientField(Repr r) : repr_(std::move(r)) {}
  Repr repr_;
};

/// A rotation piece whose angle may carry extra precision.
struct ExactRotation {
  double theta = 0.0;
  MpReal theta_mp;
  bool has_mp = false;
};

/// Constant generator value on fiber times [begin, end) of one castle pass.
struct PassPiece {
  double begin = 0.0;
  double end = 0.0;
  Mat2d matrix;
  const ExactRotation* rotation = nullptr;
};

class Generator {
 public:
  explicit Generator(DrivingFlow flow) : flow_(std::move(flow)) {}
  virtual ~Generator() = default;

  const DrivingFlow& flow() const { return flow_; }
  virtual Mat2d evaluate(const DrivingState& w) const = 0;
  virtual bool is_kinetic() const = 0;
  /// Exact mean of trace A against mu.
  virtual double mean_trace() const = 0;
  /// Upper bound on ||A(w)|| over M.
  virtual double sup_norm_bound() const = 0;
  /// Suspension generator that is constant on finitely many fiber pieces of
  /// every pass (the exact castle engine applies).
  virtual bool fiber_constant() const { return false; }
  /// Pieces of the pass over base point x, covering [0, h(x)).
  virtual void pass_pieces(double x, std::vector<PassPiece>& out) const;
  /// Times in (t0, t1) where t -> A(phi^t w) may jump, sorted.
  virtual void breakpoints(const DrivingState& w, double t0, double t1, std::vector<double>& out) const;
  /// Base points where the pass pieces change (for exact base integrals).
  virtual std::vector<double> base_breaks() const { return {}; }
  virtual std::string describe() const = 0;

 private:
  DrivingFlow flow_;
};

using GeneratorPtr = std::shared_ptr<const Generator>;

/// A(w) = [[0, 1], [-beta(w), -alpha(w)]].
class KineticGenerator final : public Generator {
 public:
  KineticGenerator(DrivingFlow flow, CoefficientField alpha, CoefficientField beta);

  Mat2d evaluate(const DrivingState& w) const override;
  bool is_kinetic() const override { return true; }
  double mean_trace() const override;
  double sup_norm_bound() const override;
  bool fiber_constant() const override;
  void pass_pieces(double x, std::vector<PassPiece>& out) const override;
  std::vector<double> base_breaks() const override;
  std::string describe() const override;

  const CoefficientField& alpha() const { return alpha_; }
  const CoefficientField& beta() const { return beta_; }

 private:
  CoefficientField alpha_;
  CoefficientField beta_;
};

/// Arbitrary 2x2 field, entries in row-major order.
class GeneralGenerator final : public Generator {
 public:
  GeneralGenerator(DrivingFlow flow, std::array<CoefficientField, 4> entries);

  Mat2d evaluate(const DrivingState& w) const override;
  bool is_kinetic() const override;
  double mean_trace() const override;
  double sup_norm_bound() const override;
  bool fiber_constant() const override;
  void pass_pieces(double x, std::vector<PassPiece>& out) const override;
  std::vector<double> base_breaks() const override;
  std::string describe() const override;

  const std::array<CoefficientField, 4>& entries() const { return entries_; }

 private:
  std::array<CoefficientField, 4> entries_;
};

GeneratorPtr make_kinetic(const DrivingFlow& flow, CoefficientField alpha, CoefficientField beta);
GeneratorPtr make_constant_kinetic(const DrivingFlow& flow, double alpha, double beta);

/// Monte Carlo estimate of int ||A|| dmu.
struct NormEstimate {
  double value = 0.0;
  double std_error = 0.0;
};
NormEstimate l1_norm(const Generator& a, std::uint64_t seed, std::size_t n);

/// Exact int ||A|| dmu for fiber-constant suspension generators.
double l1_norm_exact(const Generator& a);

/// Exact (1/int h) int_lo^hi int_{f0}^{f1} g(A(x, r)) dr dx for a
/// fiber-constant generator; g is applied piecewise. Integration in x is
/// Gauss-Legendre on subintervals split at base_breaks().
double castle_window_integral(const Generator& a, double lo, double hi, double f0, double f1,
                              const std::function<double(const Mat2d&, double x)>& g);

}  // namespace kinetic
