#pragma once

#include <cmath>
#include <stdexcept>

namespace esb {

// Extended class-K function used to shape the barrier constraint
// hdot >= -gamma(h). Linear (Gamma * s) or scaled cubic (Gamma * s^3).
struct ClassKFunction {
  enum class Kind { Linear, Cubic };
  Kind kind = Kind::Linear;
  double gain = 1.0;

  static ClassKFunction linear(double gamma) { return {Kind::Linear, gamma}; }
  static ClassKFunction cubic(double gamma) { return {Kind::Cubic, gamma}; }

  double operator()(double s) const {
    switch (kind) {
      case Kind::Linear: return gain * s;
      case Kind::Cubic: return gain * s * s * s;
    }
    return 0.0;
  }

  double derivative(double s) const {
    switch (kind) {
      case Kind::Linear: return gain;
      case Kind::Cubic: return 3.0 * gain * s * s;
    }
    return 0.0;
  }

  // Lipschitz constant; finite only for the linear kind.
  double lipschitz() const {
    if (kind != Kind::Linear)
      throw std::domain_error("ClassKFunction: cubic kind is not globally Lipschitz");
    return gain;
  }

  void validate() const {
    if (!(gain > 0.0))
      throw std::invalid_argument("ClassKFunction: gain must be positive");
  }
};

}  // namespace esb
