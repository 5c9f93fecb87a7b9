#pragma once

// Optimal one-to-one assignment (Hungarian / shortest augmenting path) and
// the clustering precision built on it.

#include <algorithm>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rspace/common.hpp"

namespace rspace::eval {

/// Minimum-cost perfect assignment on a square cost matrix (row-major,
/// n x n). Returns col_of_row. O(n^3).
inline std::vector<int> min_cost_assignment(const std::vector<double>& cost, int n) {
  if (n < 0 || cost.size() != std::size_t(n) * std::size_t(n)) throw ContractError("assignment: cost matrix must be n x n");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] = row matched to column j, 0 = none.
  std::vector<double> u(std::size_t(n) + 1, 0.0), v(std::size_t(n) + 1, 0.0);
  std::vector<int> p(std::size_t(n) + 1, 0), way(std::size_t(n) + 1, 0);
  auto a = [&](int i, int j) { return cost[std::size_t(i - 1) * std::size_t(n) + std::size_t(j - 1)]; };
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(std::size_t(n) + 1, inf);
    std::vector<char> used(std::size_t(n) + 1, 0);
    do {
      used[std::size_t(j0)] = 1;
      const int i0 = p[std::size_t(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[std::size_t(j)]) continue;
        const double cur = a(i0, j) - u[std::size_t(i0)] - v[std::size_t(j)];
        if (cur < minv[std::size_t(j)]) {
          minv[std::size_t(j)] = cur;
          way[std::size_t(j)] = j0;
        }
        if (minv[std::size_t(j)] < delta) {
          delta = minv[std::size_t(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[std::size_t(j)]) {
          u[std::size_t(p[std::size_t(j)])] += delta;
          v[std::size_t(j)] -= delta;
        } else {
          minv[std::size_t(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[std::size_t(j0)] != 0);
    do {
      const int j1 = way[std::size_t(j0)];
      p[std::size_t(j0)] = p[std::size_t(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> col_of_row(std::size_t(n), -1);
  for (int j = 1; j <= n; ++j)
    if (p[std::size_t(j)] > 0) col_of_row[std::size_t(p[std::size_t(j)] - 1)] = j - 1;
  return col_of_row;
}

/// k x k table: table[predicted * k + truth] = count.
inline std::vector<long> contingency_table(std::span<const int> predicted, std::span<const int> truth, int k) {
  if (predicted.size() != truth.size())
    throw ContractError("precision: predicted (" + std::to_string(predicted.size()) + ") and truth (" +
                        std::to_string(truth.size()) + ") lengths differ");
  if (k < 1) throw ContractError("precision: k must be >= 1");
  std::vector<long> table(std::size_t(k) * std::size_t(k), 0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] < 0 || predicted[i] >= k || truth[i] < 0 || truth[i] >= k)
      throw ContractError("precision: label out of range [0, " + std::to_string(k) + ") at index " + std::to_string(i));
    ++table[std::size_t(predicted[i]) * std::size_t(k) + std::size_t(truth[i])];
  }
  return table;
}

/// Largest total count of a one-to-one cluster -> subset matching.
inline long max_matched_count(const std::vector<long>& table, int k) {
  std::vector<double> cost(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) cost[i] = -double(table[i]);
  const std::vector<int> match = min_cost_assignment(cost, k);
  long total = 0;
  for (int r = 0; r < k; ++r) total += table[std::size_t(r) * std::size_t(k) + std::size_t(match[std::size_t(r)])];
  return total;
}

/// Fraction of points whose cluster maps to their ground-truth subset under
/// the optimal one-to-one assignment.
inline double precision(std::span<const int> predicted, std::span<const int> truth, int k) {
  const std::vector<long> table = contingency_table(predicted, truth, k);
  if (predicted.empty()) return 0.0;
  return double(max_matched_count(table, k)) / double(predicted.size());
}

}  // namespace rspace::eval
