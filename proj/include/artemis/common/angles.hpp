#pragma once

#include <cmath>
#include <numbers>

namespace artemis {

/// Wraps an angle to (-pi, pi].
inline double wrap_to_pi(double x) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  return x - kTwoPi * std::ceil((x - std::numbers::pi) / kTwoPi);
}

}  // namespace artemis
