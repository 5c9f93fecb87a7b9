#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "rspace/common.hpp"

namespace rspace {

/// n x d point set, one point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Uniform samples from the solid d-ball of the given radius: Gaussian
/// direction, radius * u^(1/d).
inline Points sample_prior_ball(int n, int dim, double radius, std::uint64_t seed) {
  if (n < 1 || dim < 1) throw ContractError("sample_prior_ball: n and dim must be >= 1");
  if (!(radius > 0.0)) throw ContractError("sample_prior_ball: radius must be > 0");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Points p(n, dim);
  for (int i = 0; i < n; ++i) {
    double norm = 0.0;
    do {
      for (int j = 0; j < dim; ++j) p(i, j) = normal(rng);
      norm = p.row(i).norm();
    } while (norm < 1e-300);
    const double r = radius * std::pow(unit(rng), 1.0 / dim);
    p.row(i) *= r / norm;
  }
  return p;
}

/// Unit directions uniform on the sphere, one per row.
inline Points random_directions(int count, int dim, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Points dirs(count, dim);
  for (int l = 0; l < count; ++l) {
    double norm = 0.0;
    do {
      for (int j = 0; j < dim; ++j) dirs(l, j) = normal(rng);
      norm = dirs.row(l).norm();
    } while (norm < 1e-300);
    dirs.row(l) /= norm;
  }
  return dirs;
}

struct SlicedWasserstein {
  double value = 0.0;
  Points grad_a;  // d value / d a (empty unless requested)
  Points grad_b;
  std::uint64_t sort_signature = 0;  // hash of matched orders, changes at ties
};

/// Monte-Carlo squared sliced 2-Wasserstein distance between equally sized
/// point sets: (1/L) sum_l (1/n) sum_i (a_(i),l - b_(i),l)^2 over sorted
/// projections. The matching induced by sorting fixes the gradient path.
inline SlicedWasserstein sliced_wasserstein_sq(const Points& a, const Points& b, int n_projections,
                                               std::uint64_t seed, bool want_grad = false) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError("sliced_wasserstein_sq: point sets must have equal size and dimension");
  if (a.rows() < 1 || a.cols() < 1 || n_projections < 1)
    throw ContractError("sliced_wasserstein_sq: need n >= 1, d >= 1, L >= 1");
  const Eigen::Index n = a.rows();
  const Points dirs = random_directions(n_projections, int(a.cols()), seed);
  const Points pa = a * dirs.transpose();  // n x L
  const Points pb = b * dirs.transpose();

  SlicedWasserstein out;
  if (want_grad) {
    out.grad_a = Points::Zero(n, a.cols());
    out.grad_b = Points::Zero(n, b.cols());
  }
  std::uint64_t sig = 0xcbf29ce484222325ULL;
  std::vector<Eigen::Index> ia(static_cast<std::size_t>(n)), ib(static_cast<std::size_t>(n));
  const double scale = 1.0 / (double(n_projections) * double(n));
  for (int l = 0; l < n_projections; ++l) {
    std::iota(ia.begin(), ia.end(), Eigen::Index(0));
    std::iota(ib.begin(), ib.end(), Eigen::Index(0));
    std::sort(ia.begin(), ia.end(), [&](auto i, auto j) { return pa(i, l) < pa(j, l) || (pa(i, l) == pa(j, l) && i < j); });
    std::sort(ib.begin(), ib.end(), [&](auto i, auto j) { return pb(i, l) < pb(j, l) || (pb(i, l) == pb(j, l) && i < j); });
    for (Eigen::Index r = 0; r < n; ++r) {
      const double diff = pa(ia[r], l) - pb(ib[r], l);
      out.value += diff * diff * scale;
      if (want_grad) {
        out.grad_a.row(ia[r]) += 2.0 * scale * diff * dirs.row(l);
        out.grad_b.row(ib[r]) -= 2.0 * scale * diff * dirs.row(l);
      }
      sig = (sig ^ std::uint64_t(ia[r] * 31 + ib[r])) * 0x100000001b3ULL;
    }
  }
  out.sort_signature = sig;
  return out;
}

}  // namespace rspace
