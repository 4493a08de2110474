#pragma once
// Measure-preserving driving flows: a linear flow on the 2-torus and a
// suspension flow over a circle rotation with a two-valued roof.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace kinetic {

/// Linear flow (x, y) -> (x + t, y + rho t) mod 1.
struct TorusFlowSpec {
  double rho = 0.0;
};

/// Suspension of x -> x + rho mod 1 under h(x) = n0+1 on [0,cut), n0+q after.
struct SuspensionSpec {
  double base_rotation = 0.0;
  int n0 = 1;
  double q = 1.4142135623730951;
  double cut = 0.5;

  double roof(double x) const { return x < cut ? n0 + 1.0 : n0 + q; }
  double roof_low() const { return n0 + 1.0; }
  double roof_high() const { return n0 + q; }
  /// Integral of h against Lebesgue on the base.
  double roof_integral() const { return cut * (n0 + 1.0) + (1.0 - cut) * (n0 + q); }
  double base_map(double x) const;
  double base_map_inverse(double x) const;
};

struct TorusPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Point of the castle: base x and fiber time r in [0, h(x)).
struct CastlePoint {
  double x = 0.0;
  double r = 0.0;
};

using DrivingState = std::variant<TorusPoint, CastlePoint>;

/// Finite union of disjoint half-open intervals [lo, hi) inside [0, 1).
class IntervalUnion {
 public:
  IntervalUnion() = default;
  explicit IntervalUnion(std::vector<std::pair<double, double>> intervals);

  bool contains(double x) const;
  /// Index of the interval containing x, or -1.
  int locate(double x) const;
  double measure() const;
  bool empty() const { return intervals_.empty(); }
  bool intersects(double lo, double hi) const;
  IntervalUnion united(const IntervalUnion& other) const;
  const std::vector<std::pair<double, double>>& intervals() const { return intervals_; }

 private:
  std::vector<std::pair<double, double>> intervals_;
};

/// Result of a flowbox membership query: base point and offset into [a, a+1].
struct FlowboxHit {
  double base = 0.0;
  double offset = 0.0;
};

class DrivingFlow {
 public:
  explicit DrivingFlow(TorusFlowSpec spec);
  explicit DrivingFlow(SuspensionSpec spec);

  bool is_torus() const { return std::holds_alternative<TorusFlowSpec>(spec_); }
  bool is_suspension() const { return std::holds_alternative<SuspensionSpec>(spec_); }
  const TorusFlowSpec& torus() const;
  const SuspensionSpec& suspension() const;

  /// phi^t(w). Any real t.
  DrivingState evolve(const DrivingState& w, double t) const;
  /// Samples from the invariant probability measure, deterministic in seed.
  std::vector<DrivingState> sample_mu(std::uint64_t seed, std::size_t n) const;
  /// Distance in state coordinates, aware of the torus wrap and the castle
  /// roof identification.
  double distance(const DrivingState& u, const DrivingState& v) const;
  bool valid(const DrivingState& w) const;
  bool same_as(const DrivingFlow& other) const;
  std::string describe() const;

 private:
  std::variant<TorusFlowSpec, SuspensionSpec> spec_;
};

double roof(const SuspensionSpec& spec, double x);

CastlePoint evolve_castle(const SuspensionSpec& spec, CastlePoint w, double t);
TorusPoint evolve_torus(const TorusFlowSpec& spec, TorusPoint w, double t);

/// Membership in phi^{[a,a+1]}(base_set). Throws std::invalid_argument when
/// a < 0 or a + 1 > n0 (support would cross the roof identification).
std::optional<FlowboxHit> flowbox_membership(const SuspensionSpec& spec, const CastlePoint& w,
                                             const IntervalUnion& base_set, double a);

/// Flowbox mass under the normalized invariant measure: Leb(base) / int h.
double flowbox_measure_normalized(const SuspensionSpec& spec, const IntervalUnion& base_set);
/// Flowbox mass with the base measure taken unnormalized: Leb(base).
double flowbox_measure_unnormalized(const IntervalUnion& base_set);

}  // namespace kinetic
