#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "rspace/common.hpp"
#include "rspace/eval/assignment.hpp"
#include "rspace/eval/calinski_harabasz.hpp"
#include "rspace/eval/kmeans.hpp"

namespace rspace::eval {

struct PointSet {
  Points points;            // n x d
  std::vector<int> labels;  // ground truth, 0..k-1

  void validate() const {
    if (std::size_t(points.rows()) != labels.size()) throw ContractError("point set: points and labels differ in length");
    if (!points.allFinite()) throw ContractError("point set contains non-finite coordinates");
    const int k = label_count(labels);
    std::vector<char> seen(std::size_t(k), 0);
    for (int l : labels) seen[std::size_t(l)] = 1;
    for (int j = 0; j < k; ++j)
      if (!seen[std::size_t(j)]) throw ContractError("point set labels do not cover 0.." + std::to_string(k - 1));
  }
};

struct EvalMetrics {
  double precision = 0.0;
  double ch_ground_truth = 0.0;  // +inf when every subset is a single point
  double ch_predicted = 0.0;
  double inertia = 0.0;
  int k = 0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

inline EvalMetrics evaluate_rspace(const PointSet& ps, int k, std::uint64_t seed, const KMeansConfig& cfg = {}) {
  ps.validate();
  const ClusterResult cr = kmeans(ps.points, k, seed, cfg);
  EvalMetrics m;
  m.precision = precision(cr.labels, ps.labels, k);
  m.ch_ground_truth = calinski_harabasz(ps.points, ps.labels);
  m.ch_predicted = calinski_harabasz(ps.points, cr.labels);
  m.inertia = cr.inertia;
  m.k = k;
  m.n = ps.labels.size();
  m.seed = seed;
  return m;
}

/// JSON-safe encoding of a CH score: finite values as numbers, the W = 0
/// sentinel as the string "inf".
inline nlohmann::json score_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

inline double score_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw FormatError("unexpected score string '" + j.get<std::string>() + "'", 0);
  }
  return j.get<double>();
}

inline nlohmann::json to_json(const EvalMetrics& m, const std::string& variant, const std::string& experiment) {
  return {{"variant", variant},
          {"experiment", experiment},
          {"precision", m.precision},
          {"ch_ground_truth", score_json(m.ch_ground_truth)},
          {"ch_predicted", score_json(m.ch_predicted)},
          {"inertia", m.inertia},
          {"k", m.k},
          {"n", m.n},
          {"seed", m.seed}};
}

inline EvalMetrics metrics_from_json(const nlohmann::json& j) {
  EvalMetrics m;
  m.precision = j.at("precision").get<double>();
  m.ch_ground_truth = score_from_json(j.at("ch_ground_truth"));
  m.ch_predicted = score_from_json(j.at("ch_predicted"));
  m.inertia = j.at("inertia").get<double>();
  m.k = j.at("k").get<int>();
  m.n = j.at("n").get<std::size_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

}  // namespace rspace::eval
