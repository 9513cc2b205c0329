#pragma once

#include <string>
#include <variant>

namespace dualfilter {

/// Dual parameter of a model whose dual has no deterministic component (WF).
struct NoParameter {
  friend bool operator==(const NoParameter&, const NoParameter&) = default;
};

/// Rate of the gamma components in the CIR family.
struct GammaRate {
  double value = 1.0;
  friend bool operator==(const GammaRate&, const GammaRate&) = default;
};

/// Mean and variance of the Gaussian component in the OU family.
struct GaussianMoments {
  double mean = 0.0;
  double variance = 1.0;
  friend bool operator==(const GaussianMoments&, const GaussianMoments&) = default;
};

/// The deterministic part of the dual state.
using DualParameter = std::variant<NoParameter, GammaRate, GaussianMoments>;

std::string to_string(const DualParameter& theta);

}  // namespace dualfilter
