#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "rspace/common.hpp"
#include "rspace/sliced_wasserstein.hpp"

namespace rspace::eval {

struct KMeansConfig {
  int n_restarts = 10;
  int max_iter = 300;
  double tol = 1e-6;  // relative inertia improvement below which Lloyd stops
};

struct ClusterResult {
  std::vector<int> labels;
  Points centroids;
  double inertia = 0.0;
  int iterations = 0;
  int restart = 0;
};

namespace detail {

inline double assign_nearest(const Points& x, const Points& c, std::vector<int>& labels, std::vector<double>& dist2) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < c.rows(); ++j) {
      const double d = (x.row(i) - c.row(j)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = int(j);
      }
    }
    labels[std::size_t(i)] = best;
    dist2[std::size_t(i)] = best_d;
    inertia += best_d;
  }
  return inertia;
}

inline Points kmeans_pp_seed(const Points& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Points c(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  c.row(0) = x.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[std::size_t(i)] = (x.row(i) - c.row(0)).squaredNorm();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int j = 1; j < k; ++j) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = unit(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[std::size_t(i)];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
    }
    c.row(j) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[std::size_t(i)] = std::min(d2[std::size_t(i)], (x.row(i) - c.row(j)).squaredNorm());
  }
  return c;
}

// Moves the point farthest from its centroid into each empty cluster.
// Returns true if anything changed.
inline bool repair_empty(const Points& x, Points& c, std::vector<int>& labels, std::vector<double>& dist2) {
  const int k = int(c.rows());
  bool changed = false;
  for (;;) {
    std::vector<long> counts(std::size_t(k), 0);
    for (int l : labels) ++counts[std::size_t(l)];
    const auto empty = std::find(counts.begin(), counts.end(), 0L);
    if (empty == counts.end()) return changed;
    Eigen::Index far = -1;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      if (counts[std::size_t(labels[std::size_t(i)])] < 2) continue;
      if (far < 0 || dist2[std::size_t(i)] > dist2[std::size_t(far)]) far = i;
    }
    if (far < 0) return changed;
    const int j = int(empty - counts.begin());
    c.row(j) = x.row(far);
    labels[std::size_t(far)] = j;
    dist2[std::size_t(far)] = 0.0;
    changed = true;
  }
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding and restarts; keeps the restart
/// with minimal inertia (ties: lowest restart index).
inline ClusterResult kmeans(const Points& x, int k, std::uint64_t seed, const KMeansConfig& cfg = {}) {
  const Eigen::Index n = x.rows();
  if (k < 1 || n < k) throw ContractError("kmeans: need n >= k >= 1 (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
  if (cfg.n_restarts < 1 || cfg.max_iter < 1) throw ContractError("kmeans: restarts and max_iter must be >= 1");

  std::vector<ClusterResult> results(std::size_t(cfg.n_restarts));
  parallel_for(results.size(), [&](std::size_t r) {
    Rng rng(derive_seed(seed, std::uint64_t(r)));
    ClusterResult res;
    res.restart = int(r);
    Points c = detail::kmeans_pp_seed(x, k, rng);
    std::vector<int> labels(std::size_t(n), 0);
    std::vector<double> dist2(std::size_t(n), 0.0);
    double inertia = detail::assign_nearest(x, c, labels, dist2);
    int it = 0;
    for (; it < cfg.max_iter; ++it) {
      if (detail::repair_empty(x, c, labels, dist2)) {
        inertia = 0.0;
        for (double v : dist2) inertia += v;
      }
      // Update step.
      Points next = Points::Zero(k, x.cols());
      std::vector<long> counts(std::size_t(k), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        next.row(labels[std::size_t(i)]) += x.row(i);
        ++counts[std::size_t(labels[std::size_t(i)])];
      }
      for (int j = 0; j < k; ++j) next.row(j) /= double(counts[std::size_t(j)]);
      c = std::move(next);
      // Assignment step.
      const std::vector<int> before = labels;
      const double updated = detail::assign_nearest(x, c, labels, dist2);
      if (updated > inertia * (1.0 + 1e-12) + 1e-12)
        throw ContractError("kmeans: inertia increased during Lloyd iteration (" + std::to_string(inertia) + " -> " +
                            std::to_string(updated) + ")");
      const bool stable = labels == before;
      const bool small = inertia - updated <= cfg.tol * inertia;
      inertia = updated;
      if (stable || small) {
        ++it;
        break;
      }
    }
    // Final labels are nearest-centroid assignments for `c`; an empty
    // cluster here can only arise from exact duplicates.
    if (detail::repair_empty(x, c, labels, dist2)) {
      inertia = 0.0;
      for (double v : dist2) inertia += v;
    }
    res.labels = std::move(labels);
    res.centroids = std::move(c);
    res.inertia = inertia;
    res.iterations = it;
    results[r] = std::move(res);
  });

  std::size_t best = 0;
  for (std::size_t r = 1; r < results.size(); ++r)
    if (results[r].inertia < results[best].inertia) best = r;
  return std::move(results[best]);
}

}  // namespace rspace::eval
