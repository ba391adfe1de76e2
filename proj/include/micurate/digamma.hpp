#pragma once

#include <cmath>
#include <string>

#include "micurate/error.hpp"

namespace micurate {

/// Digamma function for x > 0, absolute error below 1e-10.
///
/// Shifts x upward with psi(x) = psi(x+1) - 1/x until x >= 6, then applies the
/// asymptotic expansion with Bernoulli terms through x^-12.
inline double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw DomainError("digamma: argument must be positive and finite, got " + std::to_string(x));
  }
  double shift = 0.0;
  while (x < 6.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  // sum_{n=1..6} B_2n / (2n x^2n)
  const double series =
      f * (1.0 / 12 -
           f * (1.0 / 120 -
                f * (1.0 / 252 - f * (1.0 / 240 - f * (1.0 / 132 - f * (691.0 / 32760))))));
  return shift + std::log(x) - 0.5 / x - series;
}

}  // namespace micurate
