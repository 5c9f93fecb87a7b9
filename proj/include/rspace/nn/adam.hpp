#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rspace/common.hpp"

namespace rspace::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n_params, AdamConfig cfg) : cfg_(cfg), m_(n_params, T(0)), v_(n_params, T(0)) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t step_count() const noexcept { return step_; }
  std::span<const T> first_moment() const noexcept { return m_; }
  std::span<const T> second_moment() const noexcept { return v_; }

  /// One bias-corrected Adam update. Rejects non-finite gradients before
  /// touching any state.
  void step(std::span<T> params, std::span<const T> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw ShapeError("adam: parameter/gradient/state sizes differ (" + std::to_string(params.size()) + ", " +
                       std::to_string(grads.size()) + ", " + std::to_string(m_.size()) + ")");
    for (std::size_t i = 0; i < grads.size(); ++i)
      if (!std::isfinite(grads[i]))
        throw TrainingError("adam: non-finite gradient at parameter " + std::to_string(i));
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const T g = grads[i];
      m_[i] = b1 * m_[i] + (T(1) - b1) * g;
      v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
      const T mhat = T(m_[i] / bc1);
      const T vhat = T(v_[i] / bc2);
      params[i] -= T(cfg_.lr) * mhat / (std::sqrt(vhat) + T(cfg_.eps));
    }
  }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<T> m_, v_;
};

}  // namespace rspace::nn
