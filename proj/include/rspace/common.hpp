#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace rspace {

// Error hierarchy. The CLI maps each family onto an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

  FormatError with_prefix(const std::string& prefix) const { return FormatError(prefix + what(), offset_, 0); }

 private:
  FormatError(const std::string& full, std::uint64_t offset, int) : Error(full), offset_(offset) {}
  std::uint64_t offset_;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for a named consumer: master ^ tag, then mixed.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) noexcept {
  return splitmix64(master ^ fnv1a64(tag));
}

/// Seed for the index-th item of a stream (schedule independent).
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Worker thread count: RSPACE_THREADS if set to a positive integer, else
/// hardware concurrency.
inline unsigned worker_threads() {
  if (const char* env = std::getenv("RSPACE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(std::min(v, 256L));
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n). Each index is handled exactly once; callers
/// must write results to index-owned slots so output is schedule independent.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(worker_threads(), n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace binio {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
  }

  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }

  template <class T>
  void pod(T v) {
    v = to_little(v);
    bytes(&v, sizeof(T));
  }

  void floats(const float* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(p, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) pod(p[i]);
    }
  }

  void close() {
    out_.flush();
    if (!out_) throw IoError("write failed for '" + path_ + "'");
    out_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

/// Reads a whole file up front; all accessors bounds-check against the
/// payload and report the failing offset.
class Reader {
 public:
  explicit Reader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::uint64_t offset() const noexcept { return pos_; }
  std::uint64_t remaining() const noexcept { return buf_.size() - pos_; }

  void expect_magic(std::string_view m) {
    if (remaining() < m.size() || std::string_view(buf_.data() + pos_, m.size()) != m)
      throw FormatError("bad magic, expected '" + std::string(m) + "'", pos_);
    pos_ += m.size();
  }

  template <class T>
  T pod(const char* what) {
    if (remaining() < sizeof(T)) throw FormatError(std::string("truncated while reading ") + what, pos_);
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(v);
  }

  void floats(float* dst, std::uint64_t n, const char* what) {
    if (n > remaining() / sizeof(float))
      throw FormatError(std::string("truncated payload in ") + what + ": need " + std::to_string(n) +
                            " floats, have " + std::to_string(remaining() / sizeof(float)),
                        pos_);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, buf_.data() + pos_, n * sizeof(float));
      pos_ += n * sizeof(float);
    } else {
      for (std::uint64_t i = 0; i < n; ++i) dst[i] = pod<float>(what);
    }
  }

  std::string string(std::uint64_t n, const char* what) {
    if (n > remaining()) throw FormatError(std::string("truncated while reading ") + what, pos_);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void expect_end() const {
    if (remaining() != 0) throw FormatError(std::to_string(remaining()) + " trailing bytes", pos_);
  }

 private:
  std::vector<char> buf_;
  std::uint64_t pos_ = 0;
};

}  // namespace binio

}  // namespace rspace
