#pragma once

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "rspace/common.hpp"
#include "rspace/eval/evaluate.hpp"
#include "rspace/volume.hpp"

namespace rspace::test {

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  std::string tag = name;
  if (info) tag = std::string(info->test_suite_name()) + "_" + info->name() + "_" + name;
  const auto dir = std::filesystem::temp_directory_path() / ("rspace_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

inline Volume random_volume(Dims d, std::uint64_t seed) {
  Volume v(d);
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& x : v.data()) x = u(rng);
  return v;
}

/// Smooth test pattern in [0, 1].
inline Volume smooth_volume(Dims d) {
  Volume v(d);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x)
        v(z, y, x) = float(0.5 + 0.25 * std::sin(0.3 * z) * std::cos(0.2 * y) + 0.2 * std::sin(0.25 * x + 0.1 * z));
  return v;
}

/// k isotropic Gaussian blobs of `per` points in d dimensions. Centers are
/// spread along random axes at `spacing`; within-blob std is `std`.
inline eval::PointSet gaussian_blobs(int k, int per, int d, double spacing, double std, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  eval::PointSet ps;
  ps.points.resize(k * per, d);
  Points centers = Points::Zero(k, d);
  for (int j = 0; j < k; ++j) centers(j, j % d) = spacing * (1 + j / d);
  for (int j = 0; j < k; ++j)
    for (int i = 0; i < per; ++i) {
      for (int c = 0; c < d; ++c) ps.points(j * per + i, c) = centers(j, c) + std * g(rng);
      ps.labels.push_back(j);
    }
  return ps;
}

/// Sets RSPACE_THREADS for the lifetime of the object.
class ThreadsOverride {
 public:
  explicit ThreadsOverride(int n) {
    if (const char* old = std::getenv("RSPACE_THREADS")) old_ = old;
    setenv("RSPACE_THREADS", std::to_string(n).c_str(), 1);
  }
  ~ThreadsOverride() {
    if (old_.empty())
      unsetenv("RSPACE_THREADS");
    else
      setenv("RSPACE_THREADS", old_.c_str(), 1);
  }

 private:
  std::string old_;
};

}  // namespace rspace::test
