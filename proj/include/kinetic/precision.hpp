#pragma once
// Multiprecision scalar used by the exact castle engine.

#include <boost/multiprecision/mpfr.hpp>

namespace kinetic {

using MpReal = boost::multiprecision::number<boost::multiprecision::mpfr_float_backend<0>,
                                             boost::multiprecision::et_off>;

/// Decimal digits requested from MPFR for a binary precision.
int bits_to_digits10(int bits);
int current_precision_bits();

/// Sets the process-wide MPFR default precision for its lifetime. MPFR work
/// is single threaded, so a scoped global is sufficient.
class PrecisionGuard {
 public:
  explicit PrecisionGuard(int bits);
  ~PrecisionGuard();
  PrecisionGuard(const PrecisionGuard&) = delete;
  PrecisionGuard& operator=(const PrecisionGuard&) = delete;

 private:
  unsigned previous_digits10_;
};

inline double to_double(double x) { return x; }
inline double to_double(const MpReal& x) { return x.convert_to<double>(); }

}  // namespace kinetic
