#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rspace/common.hpp"

namespace rspace {

struct Index3 {
  int z = 0, y = 0, x = 0;
  friend bool operator==(const Index3&, const Index3&) = default;
  Index3 operator+(const Index3& o) const { return {z + o.z, y + o.y, x + o.x}; }
};

struct Dims {
  int nz = 0, ny = 0, nx = 0;
  friend bool operator==(const Dims&, const Dims&) = default;
  std::size_t count() const { return std::size_t(nz) * std::size_t(ny) * std::size_t(nx); }
  bool positive() const { return nz > 0 && ny > 0 && nx > 0; }
  static Dims cube(int side) { return {side, side, side}; }
};

/// Dense scalar grid, z-major then y then x (x fastest).
class Volume {
 public:
  Volume() = default;
  explicit Volume(Dims dims, float fill = 0.0f) : dims_(dims), data_(dims.count(), fill) {
    if (!dims.positive()) throw ConfigError("volume dimensions must be positive");
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  std::size_t offset(int z, int y, int x) const noexcept {
    return (std::size_t(z) * std::size_t(dims_.ny) + std::size_t(y)) * std::size_t(dims_.nx) + std::size_t(x);
  }
  float& operator()(int z, int y, int x) noexcept { return data_[offset(z, y, x)]; }
  const float& operator()(int z, int y, int x) const noexcept { return data_[offset(z, y, x)]; }

  bool contains(const Index3& p) const noexcept {
    return p.z >= 0 && p.y >= 0 && p.x >= 0 && p.z < dims_.nz && p.y < dims_.ny && p.x < dims_.nx;
  }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Dims dims_;
  std::vector<float> data_;
};

struct VolumeSequence {
  std::vector<Volume> frames;
  double frame_period = 1.0;

  Dims dims() const { return frames.empty() ? Dims{} : frames.front().dims(); }
  std::size_t size() const { return frames.size(); }
};

struct Patch {
  Volume data;  // side^3
  int frame_index = 0;
  Index3 center;
  int label = 0;

  int side() const { return data.dims().nz; }
  friend bool operator==(const Patch&, const Patch&) = default;
};

/// Lower corner of a cube of `side` voxels around `center` (half-open).
inline Index3 patch_low_corner(const Index3& center, int side) {
  const int h = side / 2;
  return {center.z - h, center.y - h, center.x - h};
}

inline void check_cube_in_bounds(const Dims& dims, const Index3& center, int side) {
  if (side < 1) throw ConfigError("patch side must be >= 1");
  const Index3 lo = patch_low_corner(center, side);
  auto axis_ok = [&](int l, int n) { return l >= 0 && l + side <= n; };
  if (!axis_ok(lo.z, dims.nz) || !axis_ok(lo.y, dims.ny) || !axis_ok(lo.x, dims.nx))
    throw BoundsError("patch of side " + std::to_string(side) + " at center (" + std::to_string(center.z) + "," +
                      std::to_string(center.y) + "," + std::to_string(center.x) + ") exceeds volume " +
                      std::to_string(dims.nz) + "x" + std::to_string(dims.ny) + "x" + std::to_string(dims.nx));
}

inline Patch extract_patch(const Volume& volume, const Index3& center, int side) {
  check_cube_in_bounds(volume.dims(), center, side);
  const Index3 lo = patch_low_corner(center, side);
  Patch p{Volume(Dims::cube(side)), 0, center, 0};
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y) {
      const float* src = &volume(lo.z + z, lo.y + y, lo.x);
      std::copy(src, src + side, &p.data(z, y, 0));
    }
  return p;
}

inline Patch extract_patch(const VolumeSequence& seq, int frame, const Index3& center, int side) {
  if (frame < 0 || std::size_t(frame) >= seq.size())
    throw BoundsError("frame index " + std::to_string(frame) + " out of range");
  Patch p = extract_patch(seq.frames[std::size_t(frame)], center, side);
  p.frame_index = frame;
  return p;
}

/// Writes the patch voxels back into `volume` at the patch's center.
inline void embed_patch(Volume& volume, const Patch& patch) {
  const int side = patch.side();
  check_cube_in_bounds(volume.dims(), patch.center, side);
  const Index3 lo = patch_low_corner(patch.center, side);
  for (int z = 0; z < side; ++z)
    for (int y = 0; y < side; ++y) {
      const float* src = &patch.data(z, y, 0);
      std::copy(src, src + side, &volume(lo.z + z, lo.y + y, lo.x));
    }
}

/// Admissible center interval along one axis of length n such that
/// center +- (side/2 + margin) stays a valid voxel index.
struct AxisRange {
  int lo, hi;
  bool empty() const { return hi < lo; }
};

inline AxisRange admissible_centers(int n, int side, int margin) {
  const int reach = side / 2 + margin;
  return {reach, n - 1 - reach};
}

inline bool satisfies_margin(const Dims& dims, const Index3& c, int side, int margin) {
  auto ok = [&](int v, int n) {
    const AxisRange r = admissible_centers(n, side, margin);
    return v >= r.lo && v <= r.hi;
  };
  return ok(c.z, dims.nz) && ok(c.y, dims.ny) && ok(c.x, dims.nx);
}

inline std::vector<Patch> sample_reference_patches(const VolumeSequence& seq, int n, int side, int margin,
                                                   std::uint64_t seed) {
  if (n < 1) throw ConfigError("number of reference patches must be >= 1");
  if (margin < 0) throw ConfigError("margin must be >= 0");
  if (seq.frames.empty()) throw ConfigError("volume sequence is empty");
  const Dims d = seq.dims();
  const AxisRange rz = admissible_centers(d.nz, side, margin);
  const AxisRange ry = admissible_centers(d.ny, side, margin);
  const AxisRange rx = admissible_centers(d.nx, side, margin);
  if (rz.empty() || ry.empty() || rx.empty())
    throw ConfigError("no admissible patch centers: volume too small for side " + std::to_string(side) +
                      " with margin " + std::to_string(margin));

  Rng rng(seed);
  std::uniform_int_distribution<int> frame_dist(0, int(seq.size()) - 1);
  std::uniform_int_distribution<int> zd(rz.lo, rz.hi), yd(ry.lo, ry.hi), xd(rx.lo, rx.hi);
  std::vector<Patch> out;
  out.reserve(std::size_t(n));
  for (int i = 0; i < n; ++i) {
    const int frame = frame_dist(rng);
    const int z = zd(rng), y = yd(rng), x = xd(rng);
    Patch p = extract_patch(seq, frame, {z, y, x}, side);
    p.label = i;
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// RSVOL1 / RSPAT1 binary formats (little-endian).

inline constexpr std::string_view kVolumeMagic = "RSVOL1";
inline constexpr std::string_view kPatchMagic = "RSPAT1";
inline constexpr std::uint32_t kFormatVersion = 1;

inline void write_sequence(const std::string& path, const VolumeSequence& seq) {
  if (seq.frames.empty()) throw ConfigError("cannot write an empty volume sequence");
  const Dims d = seq.dims();
  for (const auto& f : seq.frames)
    if (f.dims() != d) throw ShapeError("frames of a sequence must share dimensions");
  binio::Writer w(path);
  w.magic(kVolumeMagic);
  w.pod<std::uint32_t>(kFormatVersion);
  w.pod<std::uint32_t>(std::uint32_t(seq.size()));
  w.pod<std::uint32_t>(std::uint32_t(d.nz));
  w.pod<std::uint32_t>(std::uint32_t(d.ny));
  w.pod<std::uint32_t>(std::uint32_t(d.nx));
  for (const auto& f : seq.frames) w.floats(f.data().data(), f.size());
  w.close();
}

inline VolumeSequence read_sequence(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic(kVolumeMagic);
  const std::uint64_t version_at = r.offset();
  if (r.pod<std::uint32_t>("version") != kFormatVersion) throw FormatError("unsupported RSVOL version", version_at);
  const std::uint64_t dims_at = r.offset();
  const std::uint64_t nt = r.pod<std::uint32_t>("nt");
  const std::uint64_t nz = r.pod<std::uint32_t>("nz");
  const std::uint64_t ny = r.pod<std::uint32_t>("ny");
  const std::uint64_t nx = r.pod<std::uint32_t>("nx");
  constexpr std::uint64_t kMaxAxis = std::uint64_t(std::numeric_limits<int>::max());
  if (nt == 0 || nz == 0 || ny == 0 || nx == 0) throw FormatError("zero dimension in header", dims_at);
  if (nz > kMaxAxis || ny > kMaxAxis || nx > kMaxAxis) throw FormatError("dimension overflow", dims_at);
  constexpr std::uint64_t kMaxVoxels = std::uint64_t(1) << 40;
  if (ny > kMaxVoxels / nz || nx > kMaxVoxels / (nz * ny) || nt > kMaxVoxels / (nz * ny * nx))
    throw FormatError("dimension overflow", dims_at);
  const std::uint64_t per_frame = nz * ny * nx;
  if (nt * per_frame > r.remaining() / sizeof(float))
    throw FormatError("truncated payload: header declares " + std::to_string(nt * per_frame) + " floats, file has " +
                          std::to_string(r.remaining() / sizeof(float)),
                      r.offset());
  VolumeSequence seq;
  const Dims d{int(nz), int(ny), int(nx)};
  seq.frames.reserve(nt);
  for (std::uint64_t t = 0; t < nt; ++t) {
    Volume v(d);
    r.floats(v.data().data(), v.size(), "volume payload");
    seq.frames.push_back(std::move(v));
  }
  r.expect_end();
  return seq;
}

inline void write_volume(const std::string& path, const Volume& volume) {
  VolumeSequence s;
  s.frames.push_back(volume);
  write_sequence(path, s);
}

inline Volume read_volume(const std::string& path) {
  VolumeSequence s = read_sequence(path);
  if (s.size() != 1) throw FormatError("expected a single-frame volume file, found nt=" + std::to_string(s.size()), 10);
  return std::move(s.frames.front());
}

inline void write_patches(const std::string& path, const std::vector<Patch>& patches) {
  const int side = patches.empty() ? 0 : patches.front().side();
  for (const auto& p : patches)
    if (p.side() != side || p.data.dims() != Dims::cube(side)) throw ShapeError("patch archive requires equal cubic patches");
  binio::Writer w(path);
  w.magic(kPatchMagic);
  w.pod<std::uint32_t>(kFormatVersion);
  w.pod<std::uint32_t>(std::uint32_t(patches.size()));
  w.pod<std::uint32_t>(std::uint32_t(side));
  for (const auto& p : patches) {
    w.pod<std::uint32_t>(std::uint32_t(p.label));
    w.pod<std::uint32_t>(std::uint32_t(p.frame_index));
    w.pod<std::int32_t>(p.center.z);
    w.pod<std::int32_t>(p.center.y);
    w.pod<std::int32_t>(p.center.x);
    w.floats(p.data.data().data(), p.data.size());
  }
  w.close();
}

inline std::vector<Patch> read_patches(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic(kPatchMagic);
  const std::uint64_t version_at = r.offset();
  if (r.pod<std::uint32_t>("version") != kFormatVersion) throw FormatError("unsupported RSPAT version", version_at);
  const std::uint64_t count = r.pod<std::uint32_t>("count");
  const std::uint64_t side_at = r.offset();
  const std::uint64_t side = r.pod<std::uint32_t>("side");
  if (count > 0 && (side == 0 || side > 4096)) throw FormatError("invalid patch side", side_at);
  const std::uint64_t record = 20 + side * side * side * sizeof(float);
  if (count > 0 && count > r.remaining() / record)
    throw FormatError("truncated payload: header declares " + std::to_string(count) + " patches", r.offset());
  std::vector<Patch> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Patch p;
    p.label = int(r.pod<std::uint32_t>("label"));
    p.frame_index = int(r.pod<std::uint32_t>("frame_index"));
    p.center.z = r.pod<std::int32_t>("center");
    p.center.y = r.pod<std::int32_t>("center");
    p.center.x = r.pod<std::int32_t>("center");
    p.data = Volume(Dims::cube(int(side)));
    r.floats(p.data.data().data(), p.data.size(), "patch payload");
    out.push_back(std::move(p));
  }
  r.expect_end();
  return out;
}

}  // namespace rspace
