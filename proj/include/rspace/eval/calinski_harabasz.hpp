#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rspace/common.hpp"
#include "rspace/sliced_wasserstein.hpp"

namespace rspace::eval {

struct Dispersion {
  double between = 0.0;  // B = sum_j n_j |c_j - c|^2
  double within = 0.0;   // W = sum_j sum_{i in j} |x_i - c_j|^2
};

inline int label_count(std::span<const int> labels) {
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw ContractError("labels must be >= 0");
    k = std::max(k, l + 1);
  }
  return k;
}

inline Dispersion dispersion(const Points& x, std::span<const int> labels) {
  if (std::size_t(x.rows()) != labels.size()) throw ContractError("dispersion: points and labels differ in length");
  const int k = label_count(labels);
  const Eigen::Index d = x.cols();
  Eigen::RowVectorXd global = x.colwise().mean();
  Points centroids = Points::Zero(k, d);
  std::vector<long> counts(std::size_t(k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    centroids.row(labels[std::size_t(i)]) += x.row(i);
    ++counts[std::size_t(labels[std::size_t(i)])];
  }
  Dispersion out;
  for (int j = 0; j < k; ++j) {
    if (counts[std::size_t(j)] == 0) continue;
    centroids.row(j) /= double(counts[std::size_t(j)]);
    out.between += double(counts[std::size_t(j)]) * (centroids.row(j) - global).squaredNorm();
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.within += (x.row(i) - centroids.row(labels[std::size_t(i)])).squaredNorm();
  return out;
}

/// Calinski-Harabasz score [B / (k - 1)] / [W / (n - k)]. Returns +infinity
/// when W = 0 (every subset collapsed to a point).
inline double calinski_harabasz(const Points& x, std::span<const int> labels) {
  const int k = label_count(labels);
  const long n = long(labels.size());
  if (k < 2) throw ContractError("calinski_harabasz: need k >= 2 subsets, got " + std::to_string(k));
  if (n <= k) throw ContractError("calinski_harabasz: need n > k (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
  const Dispersion disp = dispersion(x, labels);
  if (disp.within == 0.0) return std::numeric_limits<double>::infinity();
  return (disp.between / double(k - 1)) / (disp.within / double(n - k));
}

}  // namespace rspace::eval
