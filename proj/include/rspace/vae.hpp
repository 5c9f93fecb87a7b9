#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rspace/common.hpp"

namespace rspace {

// Log-variances are clamped into this range before use; the clamp has zero
// gradient outside it.
inline constexpr double kLogvarMin = -20.0;
inline constexpr double kLogvarMax = 20.0;

inline double clamp_logvar(double lv) { return std::clamp(lv, kLogvarMin, kLogvarMax); }
inline bool logvar_in_range(double lv) { return lv > kLogvarMin && lv < kLogvarMax; }

struct ReparamSample {
  std::vector<double> z;
  std::vector<double> eps;
};

/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from `seed`.
inline ReparamSample reparameterize(std::span<const double> mu, std::span<const double> logvar, std::uint64_t seed) {
  if (mu.size() != logvar.size()) throw ShapeError("reparameterize: mu and logvar sizes differ");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ReparamSample s{std::vector<double>(mu.size()), std::vector<double>(mu.size())};
  for (std::size_t i = 0; i < mu.size(); ++i) {
    s.eps[i] = normal(rng);
    s.z[i] = mu[i] + std::exp(0.5 * clamp_logvar(logvar[i])) * s.eps[i];
  }
  return s;
}

/// Backpropagates dL/dz of a reparameterized sample to (mu, logvar).
inline void reparameterize_backward(std::span<const double> logvar, std::span<const double> eps,
                                    std::span<const double> grad_z, std::span<double> grad_mu,
                                    std::span<double> grad_logvar) {
  for (std::size_t i = 0; i < grad_z.size(); ++i) {
    grad_mu[i] += grad_z[i];
    if (logvar_in_range(logvar[i]))
      grad_logvar[i] += grad_z[i] * 0.5 * std::exp(0.5 * clamp_logvar(logvar[i])) * eps[i];
  }
}

/// KL(N(mu, diag exp(logvar)) || N(0, I)).
inline double kl_divergence(std::span<const double> mu, std::span<const double> logvar) {
  if (mu.size() != logvar.size()) throw ShapeError("kl_divergence: mu and logvar sizes differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double lv = clamp_logvar(logvar[i]);
    kl += mu[i] * mu[i] + std::exp(lv) - lv - 1.0;
  }
  return 0.5 * kl;
}

/// Adds scale * dKL/d(mu, logvar).
inline void kl_divergence_backward(std::span<const double> mu, std::span<const double> logvar, double scale,
                                   std::span<double> grad_mu, std::span<double> grad_logvar) {
  for (std::size_t i = 0; i < mu.size(); ++i) {
    grad_mu[i] += scale * mu[i];
    if (logvar_in_range(logvar[i])) grad_logvar[i] += scale * 0.5 * (std::exp(logvar[i]) - 1.0);
  }
}

}  // namespace rspace
