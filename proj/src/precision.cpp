#include "kinetic/precision.hpp"

#include <cmath>

namespace kinetic {

int bits_to_digits10(int bits) { return static_cast<int>(std::ceil(bits * 0.30102999566398120)) + 1; }

int current_precision_bits() {
  return static_cast<int>(std::ceil(MpReal::default_precision() / 0.30102999566398120));
}

PrecisionGuard::PrecisionGuard(int bits) : previous_digits10_(MpReal::default_precision()) {
  MpReal::default_precision(bits_to_digits10(bits));
}

PrecisionGuard::~PrecisionGuard() { MpReal::default_precision(previous_digits10_); }

}  // namespace kinetic
