#pragma once

// Synthetic 3D+t ultrasound-like phantom: smooth background, ellipsoidal
// inclusions, one tube, a sinusoidal global drift and multiplicative speckle.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "rspace/common.hpp"
#include "rspace/volume.hpp"

namespace rspace {

enum class SpeckleMode { per_frame, fixed };

struct PhantomConfig {
  Dims dims{64, 64, 64};
  int n_frames = 20;
  int n_inclusions = 8;
  double radius_min = 3.0;
  double radius_max = 9.0;
  double speckle_strength = 0.3;  // 0 disables speckle
  SpeckleMode speckle_mode = SpeckleMode::per_frame;
  double motion_amplitude = 4.0;  // voxels
  double motion_period = 20.0;    // frames
  double frame_period = 1.0;

  void validate() const {
    if (!dims.positive()) throw ConfigError("phantom dims must all be > 0");
    if (n_frames < 1) throw ConfigError("phantom n_frames must be >= 1");
    if (n_inclusions < 0) throw ConfigError("phantom n_inclusions must be >= 0");
    if (!(radius_min > 0.0) || radius_max < radius_min) throw ConfigError("phantom radius range invalid");
    if (!(speckle_strength >= 0.0 && speckle_strength < 1.0)) throw ConfigError("speckle_strength must be in [0, 1)");
    if (!(motion_amplitude >= 0.0)) throw ConfigError("motion_amplitude must be >= 0");
    if (!(motion_period > 0.0)) throw ConfigError("motion_period must be > 0");
  }
};

using Vec3 = std::array<double, 3>;  // (z, y, x)

struct Ellipsoid {
  Vec3 center;
  Vec3 semi_axes;
  std::array<Vec3, 3> axes;  // orthonormal rows
  double level;
};

struct Tube {
  Vec3 point;
  Vec3 direction;
  double radius;
  double level;
};

class Phantom {
 public:
  static constexpr double kEdgeWidth = 0.75;  // voxels, soft boundary of structures
  static constexpr double kTubeLevel = 0.06;

  Phantom(const PhantomConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
    config_.validate();
    Rng rng(derive_seed(seed, "anatomy"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Vec3 extent{double(config_.dims.nz), double(config_.dims.ny), double(config_.dims.nx)};

    for (auto& w : waves_) {
      const Vec3 dir = random_unit(rng, gauss);
      const double wavelength = 24.0 + 24.0 * unit(rng);
      for (int a = 0; a < 3; ++a) w.k[a] = dir[a] * 2.0 * std::numbers::pi / wavelength;
      w.phase = 2.0 * std::numbers::pi * unit(rng);
    }

    const int n = config_.n_inclusions;
    std::vector<double> levels(std::size_t(std::max(n, 0)));
    for (int i = 0; i < n; ++i) levels[std::size_t(i)] = n == 1 ? 0.9 : 0.12 + 0.83 * double(i) / double(n - 1);
    std::shuffle(levels.begin(), levels.end(), rng);
    for (int i = 0; i < n; ++i) {
      Ellipsoid e;
      for (int a = 0; a < 3; ++a) {
        e.center[a] = extent[a] * (0.1 + 0.8 * unit(rng));
        e.semi_axes[a] = config_.radius_min + (config_.radius_max - config_.radius_min) * unit(rng);
      }
      e.axes = random_rotation(rng, gauss);
      e.level = levels[std::size_t(i)];
      inclusions_.push_back(e);
    }

    for (int a = 0; a < 3; ++a) tube_.point[a] = extent[a] * (0.3 + 0.4 * unit(rng));
    tube_.direction = random_unit(rng, gauss);
    tube_.radius = 2.0 + 1.5 * unit(rng);
    tube_.level = kTubeLevel;
  }

  const PhantomConfig& config() const { return config_; }
  const std::vector<Ellipsoid>& inclusions() const { return inclusions_; }
  const Tube& tube() const { return tube_; }

  /// Unit direction of the global drift (mostly along z, like breathing).
  static Vec3 drift_direction() {
    const double n = std::sqrt(1.0 + 0.35 * 0.35 + 0.2 * 0.2);
    return {1.0 / n, 0.35 / n, 0.2 / n};
  }

  Vec3 drift(int frame) const {
    const double s = config_.motion_amplitude * std::sin(2.0 * std::numbers::pi * frame / config_.motion_period);
    const Vec3 u = drift_direction();
    return {s * u[0], s * u[1], s * u[2]};
  }

  double background(const Vec3& p) const {
    double b = 0.4;
    for (const auto& w : waves_) b += 0.06 * std::sin(w.k[0] * p[0] + w.k[1] * p[1] + w.k[2] * p[2] + w.phase);
    return b;
  }

  static double ellipsoid_weight(const Ellipsoid& e, const Vec3& p) {
    const Vec3 d{p[0] - e.center[0], p[1] - e.center[1], p[2] - e.center[2]};
    double r2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double proj = e.axes[a][0] * d[0] + e.axes[a][1] * d[1] + e.axes[a][2] * d[2];
      r2 += (proj / e.semi_axes[a]) * (proj / e.semi_axes[a]);
    }
    if (r2 > 4.0) return 0.0;
    const double a_min = std::min({e.semi_axes[0], e.semi_axes[1], e.semi_axes[2]});
    return 1.0 / (1.0 + std::exp(-(1.0 - std::sqrt(r2)) * a_min / kEdgeWidth));
  }

  static double tube_weight(const Tube& t, const Vec3& p) {
    const Vec3 d{p[0] - t.point[0], p[1] - t.point[1], p[2] - t.point[2]};
    const double along = d[0] * t.direction[0] + d[1] * t.direction[1] + d[2] * t.direction[2];
    double dist2 = 0.0;
    for (int a = 0; a < 3; ++a) dist2 += (d[a] - along * t.direction[a]) * (d[a] - along * t.direction[a]);
    const double dist = std::sqrt(dist2);
    if (dist > t.radius + 12.0 * kEdgeWidth) return 0.0;
    return 1.0 / (1.0 + std::exp(-(t.radius - dist) / kEdgeWidth));
  }

  /// Noise-free anatomy in the rest frame.
  double anatomy(const Vec3& p) const {
    double v = background(p);
    for (const auto& e : inclusions_) {
      const double w = ellipsoid_weight(e, p);
      if (w > 0.0) v += w * (e.level - v);
    }
    const double w = tube_weight(tube_, p);
    if (w > 0.0) v += w * (tube_.level - v);
    return v;
  }

  Volume render(int frame) const {
    Volume out(config_.dims);
    const Vec3 d = drift(frame);
    const double strength = config_.speckle_strength;
    const double rayleigh_mean = std::sqrt(std::numbers::pi) / 2.0;
    const std::uint64_t speckle_seed =
        derive_seed(derive_seed(seed_, "speckle"),
                    std::uint64_t(config_.speckle_mode == SpeckleMode::fixed ? 0 : frame));
    Rng rng(speckle_seed);
    std::exponential_distribution<double> expo(1.0);
    for (int z = 0; z < config_.dims.nz; ++z)
      for (int y = 0; y < config_.dims.ny; ++y)
        for (int x = 0; x < config_.dims.nx; ++x) {
          double v = anatomy({z - d[0], y - d[1], x - d[2]});
          if (strength > 0.0) v *= 1.0 + strength * (std::sqrt(expo(rng)) / rayleigh_mean - 1.0);
          out(z, y, x) = float(std::clamp(v, 0.0, 1.0));
        }
    return out;
  }

 private:
  struct Wave {
    Vec3 k;
    double phase;
  };

  static Vec3 random_unit(Rng& rng, std::normal_distribution<double>& gauss) {
    for (;;) {
      Vec3 v{gauss(rng), gauss(rng), gauss(rng)};
      const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      if (n > 1e-9) return {v[0] / n, v[1] / n, v[2] / n};
    }
  }

  // Rotation from a random unit quaternion.
  static std::array<Vec3, 3> random_rotation(Rng& rng, std::normal_distribution<double>& gauss) {
    double q[4];
    double n = 0.0;
    do {
      n = 0.0;
      for (double& c : q) {
        c = gauss(rng);
        n += c * c;
      }
    } while (n < 1e-12);
    n = std::sqrt(n);
    const double w = q[0] / n, a = q[1] / n, b = q[2] / n, c = q[3] / n;
    return {{{1 - 2 * (b * b + c * c), 2 * (a * b - c * w), 2 * (a * c + b * w)},
             {2 * (a * b + c * w), 1 - 2 * (a * a + c * c), 2 * (b * c - a * w)},
             {2 * (a * c - b * w), 2 * (b * c + a * w), 1 - 2 * (a * a + b * b)}}};
  }

  PhantomConfig config_;
  std::uint64_t seed_;
  std::array<Wave, 3> waves_{};
  std::vector<Ellipsoid> inclusions_;
  Tube tube_{};
};

inline VolumeSequence generate_phantom(const PhantomConfig& config, std::uint64_t seed) {
  const Phantom phantom(config, seed);
  VolumeSequence seq;
  seq.frame_period = config.frame_period;
  seq.frames.resize(std::size_t(config.n_frames));
  parallel_for(seq.frames.size(), [&](std::size_t t) { seq.frames[t] = phantom.render(int(t)); });
  return seq;
}

}  // namespace rspace
