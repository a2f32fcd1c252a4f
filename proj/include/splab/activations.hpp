#pragma once

#include <cmath>

namespace splab {

/// Logistic function evaluated without overflow for large |z|.
inline double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// log(1 + e^x) without overflow.
inline double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// Subgradient at exactly 0 is 0.
inline double relu_value(double x) { return x > 0.0 ? x : 0.0; }
inline double relu_derivative(double x) { return x > 0.0 ? 1.0 : 0.0; }

/// x * sigmoid(beta * x). beta = 1 is Swish; large beta approaches ReLU.
inline double pswish_value(double x, double beta) { return x * stable_sigmoid(beta * x); }
inline double pswish_derivative(double x, double beta) {
  const double s = stable_sigmoid(beta * x);
  return s + beta * x * s * (1.0 - s);
}

/// x * tanh(softplus(x)).
inline double mish_value(double x) { return x * std::tanh(stable_softplus(x)); }
inline double mish_derivative(double x) {
  const double t = std::tanh(stable_softplus(x));
  return t + x * (1.0 - t * t) * stable_sigmoid(x);
}

}  // namespace splab
