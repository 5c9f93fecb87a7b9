#pragma once

// RSMDL1 model files: magic, u32 version, u32 descriptor length, JSON
// descriptor, then every parameter tensor as little-endian f32 in
// declaration order.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rspace/common.hpp"

namespace rspace::nn {

inline constexpr std::string_view kModelMagic = "RSMDL1";
inline constexpr std::uint32_t kModelVersion = 1;

struct ModelFile {
  nlohmann::json descriptor;
  std::vector<float> params;
};

inline void write_model_file(const std::string& path, const nlohmann::json& descriptor,
                             const std::vector<std::span<const float>>& tensors) {
  const std::string desc = descriptor.dump();
  binio::Writer w(path);
  w.magic(kModelMagic);
  w.pod<std::uint32_t>(kModelVersion);
  w.pod<std::uint32_t>(std::uint32_t(desc.size()));
  w.bytes(desc.data(), desc.size());
  for (const auto& t : tensors) w.floats(t.data(), t.size());
  w.close();
}

/// Reads a model file; `expected_params` (from the descriptor) is computed
/// by the caller-supplied function so payload size can be validated.
template <class CountFn>
ModelFile read_model_file(const std::string& path, CountFn&& expected_params) {
  binio::Reader r(path);
  r.expect_magic(kModelMagic);
  const std::uint64_t at = r.offset();
  if (r.pod<std::uint32_t>("version") != kModelVersion) throw FormatError("unsupported RSMDL version", at);
  const std::uint32_t len = r.pod<std::uint32_t>("descriptor length");
  const std::uint64_t desc_at = r.offset();
  ModelFile mf;
  try {
    mf.descriptor = nlohmann::json::parse(r.string(len, "descriptor"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid model descriptor: ") + e.what(), desc_at);
  }
  std::size_t n = 0;
  try {
    n = expected_params(mf.descriptor);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("incomplete model descriptor: ") + e.what(), desc_at);
  }
  mf.params.resize(n);
  r.floats(mf.params.data(), n, "parameters");
  r.expect_end();
  return mf;
}

}  // namespace rspace::nn
