#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rspace/common.hpp"
#include "rspace/volume.hpp"

namespace rspace {

struct DeformConfig {
  int grid_size = 5;
  double sigma = 1.0;
  int spline_order = 3;

  void validate() const {
    if (grid_size < 2) throw ConfigError("deformation grid_size must be >= 2");
    if (!(sigma >= 0.0)) throw ConfigError("deformation sigma must be >= 0");
    if (spline_order != 1 && spline_order != 3)
      throw ConfigError("unsupported spline order " + std::to_string(spline_order) + " (expected 1 or 3)");
  }
};

struct TranslateConfig {
  int max_shift = 10;

  void validate() const {
    if (max_shift < 0) throw ConfigError("translation max_shift must be >= 0");
  }
};

/// Control-point displacements, component-major: [3][g][g][g] (z, y, x components).
struct ControlGrid {
  int grid_size = 0;
  std::vector<double> values;

  double& at(int comp, int i, int j, int k) { return values[index(comp, i, j, k)]; }
  double at(int comp, int i, int j, int k) const { return values[index(comp, i, j, k)]; }
  std::size_t index(int comp, int i, int j, int k) const {
    const std::size_t g = std::size_t(grid_size);
    return ((std::size_t(comp) * g + std::size_t(i)) * g + std::size_t(j)) * g + std::size_t(k);
  }
};

/// Dense displacement in voxels, component-major: [3][side][side][side].
struct DenseField {
  int side = 0;
  std::vector<double> values;

  std::size_t index(int comp, int z, int y, int x) const {
    const std::size_t s = std::size_t(side);
    return ((std::size_t(comp) * s + std::size_t(z)) * s + std::size_t(y)) * s + std::size_t(x);
  }
  double at(int comp, int z, int y, int x) const { return values[index(comp, z, y, x)]; }
};

inline ControlGrid control_grid_sample(int grid_size, double sigma, std::uint64_t seed) {
  if (grid_size < 2) throw ConfigError("deformation grid_size must be >= 2");
  if (!(sigma >= 0.0)) throw ConfigError("deformation sigma must be >= 0");
  ControlGrid g{grid_size, std::vector<double>(3 * std::size_t(grid_size) * grid_size * grid_size, 0.0)};
  if (sigma == 0.0) return g;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  for (double& v : g.values) v = normal(rng);
  return g;
}

namespace detail {

inline double cubic_bspline(double t) {
  t = std::abs(t);
  if (t < 1.0) return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
  if (t < 2.0) {
    const double u = 2.0 - t;
    return u * u * u / 6.0;
  }
  return 0.0;
}

// Mirror boundary without edge repetition: -1 -> 1, g -> g-2.
inline int mirror_index(int j, int g) {
  if (g == 1) return 0;
  const int period = 2 * (g - 1);
  j %= period;
  if (j < 0) j += period;
  return j < g ? j : period - j;
}

}  // namespace detail

/// Weights w (length g) such that f(u) = sum_j w_j * c_j interpolates control
/// values c at fractional control coordinate u in [0, g-1].
inline std::vector<double> spline_weights(int order, int g, double u) {
  std::vector<double> w(std::size_t(g), 0.0);
  if (order == 1) {
    const int i = std::clamp(int(std::floor(u)), 0, g - 2);
    const double f = u - i;
    w[std::size_t(i)] += 1.0 - f;
    w[std::size_t(i + 1)] += f;
    return w;
  }
  if (order != 3) throw ConfigError("unsupported spline order " + std::to_string(order) + " (expected 1 or 3)");
  // Interpolating cubic B-spline: coefficients c = A^-1 v with A the
  // mirror-folded B-spline sampling matrix, so f(u) = b(u)^T A^-1 v.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(g, g);
  for (int i = 0; i < g; ++i)
    for (int j = i - 1; j <= i + 1; ++j) a(i, detail::mirror_index(j, g)) += detail::cubic_bspline(double(i - j));
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(g);
  const int base = int(std::floor(u));
  for (int j = base - 1; j <= base + 2; ++j) b(detail::mirror_index(j, g)) += detail::cubic_bspline(u - j);
  const Eigen::RowVectorXd row = a.transpose().partialPivLu().solve(b.transpose()).transpose();
  for (int j = 0; j < g; ++j) w[std::size_t(j)] = row(j);
  return w;
}

/// Evaluates the interpolated displacement at a continuous voxel position.
inline std::array<double, 3> sample_displacement(const ControlGrid& grid, int target_side, int spline_order,
                                                 std::array<double, 3> pos) {
  const int g = grid.grid_size;
  const double scale = target_side > 1 ? double(g - 1) / double(target_side - 1) : 0.0;
  std::array<std::vector<double>, 3> w;
  for (int a = 0; a < 3; ++a) w[a] = spline_weights(spline_order, g, pos[a] * scale);
  std::array<double, 3> out{0.0, 0.0, 0.0};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j)
        for (int k = 0; k < g; ++k) out[c] += w[0][i] * w[1][j] * w[2][k] * grid.at(c, i, j, k);
  return out;
}

/// Upsamples a control grid to a dense field over a cube of `target_side`
/// voxels. Control points are corner aligned: control index i sits at voxel
/// coordinate i * (side - 1) / (g - 1).
inline DenseField dense_displacement(const ControlGrid& grid, int target_side, int spline_order) {
  if (spline_order != 1 && spline_order != 3)
    throw ConfigError("unsupported spline order " + std::to_string(spline_order) + " (expected 1 or 3)");
  if (target_side < 1) throw ConfigError("target side must be >= 1");
  const int g = grid.grid_size;
  const int s = target_side;
  const double scale = s > 1 ? double(g - 1) / double(s - 1) : 0.0;

  Eigen::MatrixXd m(s, g);  // per-axis interpolation matrix
  for (int v = 0; v < s; ++v) {
    const auto w = spline_weights(spline_order, g, v * scale);
    for (int j = 0; j < g; ++j) m(v, j) = w[std::size_t(j)];
  }

  DenseField field{s, std::vector<double>(3 * std::size_t(s) * s * s, 0.0)};
  std::vector<double> tmp_x(std::size_t(g) * g * s), tmp_y(std::size_t(g) * s * s);
  for (int c = 0; c < 3; ++c) {
    // x axis: [g][g][g] -> [g][g][s]
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j)
        for (int x = 0; x < s; ++x) {
          double acc = 0.0;
          for (int k = 0; k < g; ++k) acc += m(x, k) * grid.at(c, i, j, k);
          tmp_x[(std::size_t(i) * g + j) * s + x] = acc;
        }
    // y axis: -> [g][s][s]
    for (int i = 0; i < g; ++i)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          double acc = 0.0;
          for (int j = 0; j < g; ++j) acc += m(y, j) * tmp_x[(std::size_t(i) * g + j) * s + x];
          tmp_y[(std::size_t(i) * s + y) * s + x] = acc;
        }
    // z axis: -> [s][s][s]
    for (int z = 0; z < s; ++z)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          double acc = 0.0;
          for (int i = 0; i < g; ++i) acc += m(z, i) * tmp_y[(std::size_t(i) * s + y) * s + x];
          field.values[field.index(c, z, y, x)] = acc;
        }
  }
  return field;
}

/// Trilinear sample with coordinates clamped to the grid.
inline double sample_trilinear(const Volume& v, double z, double y, double x) {
  const Dims d = v.dims();
  auto split = [](double c, int n, int& i0, int& i1, double& f) {
    c = std::clamp(c, 0.0, double(n - 1));
    i0 = int(std::floor(c));
    i1 = std::min(i0 + 1, n - 1);
    f = c - i0;
  };
  int z0, z1, y0, y1, x0, x1;
  double fz, fy, fx;
  split(z, d.nz, z0, z1, fz);
  split(y, d.ny, y0, y1, fy);
  split(x, d.nx, x0, x1, fx);
  auto lerp = [](double a, double b, double f) { return a * (1.0 - f) + b * f; };
  const double c00 = lerp(v(z0, y0, x0), v(z0, y0, x1), fx);
  const double c01 = lerp(v(z0, y1, x0), v(z0, y1, x1), fx);
  const double c10 = lerp(v(z1, y0, x0), v(z1, y0, x1), fx);
  const double c11 = lerp(v(z1, y1, x0), v(z1, y1, x1), fx);
  return lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz);
}

/// Backward warp: out(x) = in(x - d(x)), clamped to [0, 1].
inline Volume warp(const Volume& in, const DenseField& field) {
  const int s = field.side;
  if (in.dims() != Dims::cube(s)) throw ShapeError("displacement field does not match patch size");
  Volume out(in.dims());
  for (int z = 0; z < s; ++z)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double v = sample_trilinear(in, z - field.at(0, z, y, x), y - field.at(1, z, y, x),
                                          x - field.at(2, z, y, x));
        out(z, y, x) = float(std::clamp(v, 0.0, 1.0));
      }
  return out;
}

inline Patch elastic_deform(const Patch& patch, const DeformConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const ControlGrid grid = control_grid_sample(cfg.grid_size, cfg.sigma, seed);
  Patch out = patch;
  out.data = warp(patch.data, dense_displacement(grid, patch.side(), cfg.spline_order));
  return out;
}

struct Translation {
  Patch patch;
  Index3 shift;
};

inline Translation translate_patch(const VolumeSequence& seq, const Patch& parent, const TranslateConfig& cfg,
                                   std::uint64_t seed) {
  cfg.validate();
  if (!satisfies_margin(seq.dims(), parent.center, parent.side(), cfg.max_shift))
    throw BoundsError("parent patch at (" + std::to_string(parent.center.z) + "," + std::to_string(parent.center.y) +
                      "," + std::to_string(parent.center.x) + ") violates the margin required for shifts of +-" +
                      std::to_string(cfg.max_shift));
  Rng rng(seed);
  std::uniform_int_distribution<int> shift(-cfg.max_shift, cfg.max_shift);
  Index3 s;
  s.z = shift(rng);
  s.y = shift(rng);
  s.x = shift(rng);
  Patch p = extract_patch(seq, parent.frame_index, parent.center + s, parent.side());
  p.label = parent.label;
  return {std::move(p), s};
}

enum class AugmentKind { deformation, translation };

inline const char* to_string(AugmentKind k) { return k == AugmentKind::deformation ? "deformation" : "translation"; }

struct AugmentRecord {
  int parent_label = 0;
  std::uint64_t seed = 0;
  Index3 shift;  // translation only
};

struct AugmentedSet {
  AugmentKind kind = AugmentKind::deformation;
  std::vector<Patch> patches;
  std::vector<AugmentRecord> records;
};

/// Per reference: n_aug deformed and n_aug translated patches (the reference
/// itself is not included). Per-patch seeds depend only on (seed, index).
inline std::pair<AugmentedSet, AugmentedSet> build_experiment_sets(const VolumeSequence& seq,
                                                                   const std::vector<Patch>& references, int n_aug,
                                                                   const DeformConfig& dcfg,
                                                                   const TranslateConfig& tcfg, std::uint64_t seed) {
  if (n_aug < 1) throw ConfigError("n_aug must be >= 1");
  dcfg.validate();
  tcfg.validate();
  const std::size_t total = references.size() * std::size_t(n_aug);
  AugmentedSet def{AugmentKind::deformation, std::vector<Patch>(total), std::vector<AugmentRecord>(total)};
  AugmentedSet tra{AugmentKind::translation, std::vector<Patch>(total), std::vector<AugmentRecord>(total)};
  const std::uint64_t dseed = derive_seed(seed, "deformation");
  const std::uint64_t tseed = derive_seed(seed, "translation");

  parallel_for(total, [&](std::size_t idx) {
    const Patch& ref = references[idx / std::size_t(n_aug)];
    const std::uint64_t ds = derive_seed(dseed, idx);
    def.patches[idx] = elastic_deform(ref, dcfg, ds);
    def.records[idx] = {ref.label, ds, {}};
    const std::uint64_t ts = derive_seed(tseed, idx);
    Translation t = translate_patch(seq, ref, tcfg, ts);
    tra.patches[idx] = std::move(t.patch);
    tra.records[idx] = {ref.label, ts, t.shift};
  });
  return {std::move(def), std::move(tra)};
}

}  // namespace rspace
