#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "rspace/common.hpp"
#include "rspace/nn/sequential.hpp"

namespace rspace::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // coordinates whose +-h evaluations crossed a relu kink or sort tie
};

/// Result of one loss evaluation for finite differencing: the value and a
/// signature of every piecewise branch taken (relu masks, sort orders).
struct LossProbe {
  double value = 0.0;
  std::uint64_t signature = 0;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares `analytic` against central differences of `probe` with respect
/// to `params`. If there are more than `max_coords` parameters a seeded
/// random subsample of that size is checked. Coordinates whose perturbation
/// changes the branch signature are skipped and counted.
template <class T, class Probe>
GradCheckReport grad_check_params(std::span<T> params, std::span<const T> analytic, Probe&& probe, double h,
                                  std::size_t max_coords = 256, std::uint64_t seed = 0) {
  if (params.size() != analytic.size()) throw ShapeError("grad_check: gradient size does not match parameters");
  std::vector<std::size_t> coords(params.size());
  std::iota(coords.begin(), coords.end(), std::size_t(0));
  if (coords.size() > max_coords) {
    Rng rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }
  const std::uint64_t base_sig = probe().signature;
  GradCheckReport rep;
  for (std::size_t i : coords) {
    const T saved = params[i];
    params[i] = T(double(saved) + h);
    const LossProbe plus = probe();
    params[i] = T(double(saved) - h);
    const LossProbe minus = probe();
    params[i] = saved;
    if (plus.signature != base_sig || minus.signature != base_sig) {
      ++rep.skipped_kinks;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * h);
    const double err = relative_error(double(analytic[i]), numeric);
    ++rep.checked;
    if (err >= rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
  }
  return rep;
}

/// Model-level check with a fixed random linear read-out loss
/// L = sum_i r_i * model(x)_i, r ~ U(-1, 1) seeded.
template <class T>
GradCheckReport grad_check(Sequential<T>& model, const Tensor<T>& input, double h, std::size_t max_coords = 256,
                           std::uint64_t seed = 0) {
  Rng rng(derive_seed(seed, "readout"));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<T> readout(model.output_shape());
  for (auto& v : readout.vec()) v = T(u(rng));

  auto probe = [&]() {
    Tape<T> tape;
    const Tensor<T> y = model.forward(input, &tape);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += double(readout[i]) * double(y[i]);
    return LossProbe{s, model.activation_signature(tape)};
  };

  Tape<T> tape;
  model.forward(input, &tape);
  Buffer<T> grads(model.num_params(), T(0));
  model.backward(tape, readout, grads, false);
  return grad_check_params<T>(model.params(), std::span<const T>(grads), probe, h, max_coords, seed);
}

}  // namespace rspace::nn
