#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "rspace/autoencoders.hpp"
#include "rspace/eval/calinski_harabasz.hpp"
#include "rspace/nn/grad_check.hpp"
#include "rspace/nn/sequential.hpp"
#include "rspace/training.hpp"

namespace rspace::oracle {

inline nn::Tensor<double> random_tensor(const nn::Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  nn::Tensor<double> t(s);
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

inline void randomize(std::span<double> p, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : p) v = u(rng);
}

inline double dot(const nn::Tensor<double>& a, const nn::Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Moves every coordinate at least `gap` away from zero, keeping its sign.
inline nn::Tensor<double> away_from_zero(nn::Tensor<double> x, double gap) {
  for (auto& v : x.vec())
    if (std::abs(v) < gap) v = v < 0 ? -gap - std::abs(v) : gap + std::abs(v);
  return x;
}

/// Max relative error of the analytic input gradient of L = <r, model(x)>
/// against central differences.
inline double input_grad_error(const nn::Sequential<double>& model, nn::Tensor<double> x, std::uint64_t seed,
                               double h = 1e-4) {
  const nn::Tensor<double> r = random_tensor(model.output_shape(), seed);
  nn::Tape<double> tape;
  model.forward(x, &tape);
  nn::Buffer<double> gp(model.num_params(), 0.0);
  const nn::Tensor<double> gx = model.backward(tape, r, gp, true);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double lp = dot(r, model.forward(x));
    x[i] = saved - h;
    const double lm = dot(r, model.forward(x));
    x[i] = saved;
    worst = std::max(worst, nn::relative_error(gx[i], (lp - lm) / (2.0 * h)));
  }
  return worst;
}

struct LayerCase {
  const char* name;
  nn::Shape in;
  std::vector<nn::LayerSpec> specs;
};

/// One small model per layer kind, for input-gradient checks.
inline std::vector<LayerCase> layer_input_cases() {
  using nn::LayerSpec;
  return {
      {"conv3d", {2, 4, 4, 4}, {LayerSpec::conv3d(2, 2, 3, 1, 1)}},
      {"conv3d_strided", {2, 5, 4, 5}, {LayerSpec::conv3d(2, 2, 3, 2, 1)}},
      {"conv3d_transposed", {2, 2, 3, 2}, {LayerSpec::conv3d_transposed(2, 2, 3, 2, 1, 1)}},
      {"dense", {6}, {LayerSpec::dense(6, 4)}},
      {"relu", {20}, {LayerSpec::relu()}},
      {"flatten", {2, 2, 3, 2}, {LayerSpec::flatten()}},
      {"reshape", {24}, {LayerSpec::reshape({2, 2, 3, 2})}},
      {"pad3d", {2, 2, 3, 2}, {LayerSpec::pad3d(1)}},
      {"crop3d", {2, 4, 5, 4}, {LayerSpec::crop3d(1)}},
  };
}

/// Models whose parameter gradients are checked.
inline std::vector<LayerCase> layer_param_cases() {
  using nn::LayerSpec;
  return {
      {"conv3d", {2, 5, 4, 5}, {LayerSpec::conv3d(2, 3, 3, 2, 1)}},
      {"conv3d_transposed", {3, 3, 2, 3}, {LayerSpec::conv3d_transposed(3, 2, 3, 2, 1, 1)}},
      {"dense", {7}, {LayerSpec::dense(7, 5)}},
      {"conv_relu_dense",
       {1, 6, 6, 6},
       {LayerSpec::conv3d(1, 2, 3, 2, 1), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(54, 4)}},
  };
}

inline Patch random_patch(int side, std::uint64_t seed) {
  Patch p;
  p.data = Volume(Dims::cube(side));
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : p.data.data()) v = u(rng);
  return p;
}

/// Max relative error of the full variant loss gradient over a subsample of
/// encoder and decoder parameters (double precision, kink guarded).
inline double variant_loss_grad_error(Variant v, std::size_t* checked = nullptr) {
  VariantParams hyper;
  hyper.n_projections = 7;
  hyper.lambda = 3.0;
  hyper.beta = 0.5;
  AeModel<double> m = build_model<double>(v, 3, 8, 5, Architecture{{2, 2}}, hyper);
  const std::vector<Patch> data{random_patch(8, 1), random_patch(8, 2), random_patch(8, 3)};
  std::vector<const Volume*> batch;
  for (const auto& p : data) batch.push_back(&p.data);
  const std::uint64_t seed = 99;
  AeGrads<double> g(m);
  ae_loss(m, batch, seed, &g);
  auto probe = [&] {
    const LossValue lv = ae_loss(m, batch, seed);
    return nn::LossProbe{lv.total, lv.signature};
  };
  const auto enc = nn::grad_check_params<double>(m.encoder.params(), g.encoder, probe, 1e-4, 150, 1);
  const auto dec = nn::grad_check_params<double>(m.decoder.params(), g.decoder, probe, 1e-4, 150, 2);
  if (checked) *checked = enc.checked + dec.checked;
  return std::max(enc.max_rel_error, dec.max_rel_error);
}

/// Exact squared 2-Wasserstein distance between equal-size 1-D samples.
inline double w2_sq_1d(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / double(a.size());
}

/// Best one-to-one matching of a k x k table by trying every permutation.
inline long exhaustive_max_match(const std::vector<long>& table, int k) {
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  long best = -1;
  do {
    long s = 0;
    for (int r = 0; r < k; ++r) s += table[std::size_t(r) * std::size_t(k) + std::size_t(perm[std::size_t(r)])];
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// CH from the definition with explicit loops over subsets.
inline double ch_direct(const Points& x, const std::vector<int>& labels) {
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  const long n = long(labels.size());
  const long d = long(x.cols());
  std::vector<double> mean(std::size_t(d), 0.0);
  for (long i = 0; i < n; ++i)
    for (long c = 0; c < d; ++c) mean[std::size_t(c)] += x(i, c) / double(n);
  double B = 0.0, W = 0.0;
  for (int j = 0; j < k; ++j) {
    std::vector<long> members;
    for (long i = 0; i < n; ++i)
      if (labels[std::size_t(i)] == j) members.push_back(i);
    std::vector<double> cj(std::size_t(d), 0.0);
    for (long i : members)
      for (long c = 0; c < d; ++c) cj[std::size_t(c)] += x(i, c) / double(members.size());
    for (long c = 0; c < d; ++c) B += double(members.size()) * std::pow(cj[std::size_t(c)] - mean[std::size_t(c)], 2);
    for (long i : members)
      for (long c = 0; c < d; ++c) W += std::pow(x(i, c) - cj[std::size_t(c)], 2);
  }
  return (B / double(k - 1)) / (W / double(n - k));
}

inline Points random_cloud(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Points p(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) p(i, c) = g(rng);
  return p;
}

/// Monte-Carlo KL(q || N(0, I)) for q = N(mu, diag exp(logvar)): the mean of
/// log q(z) - log p(z) over samples z ~ q.
inline double kl_monte_carlo(const std::vector<double>& mu, const std::vector<double>& logvar, int samples,
                             std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  double acc = 0.0;
  for (int s = 0; s < samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
      const double e = g(rng), z = mu[j] + std::exp(0.5 * logvar[j]) * e;
      log_ratio += 0.5 * (z * z - e * e - logvar[j]);
    }
    acc += log_ratio;
  }
  return acc / samples;
}

}  // namespace rspace::oracle
