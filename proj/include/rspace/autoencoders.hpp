#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rspace/common.hpp"
#include "rspace/nn/sequential.hpp"
#include "rspace/nn/serialize.hpp"
#include "rspace/vae.hpp"
#include "rspace/volume.hpp"

namespace rspace {

enum class Variant { cae, vae, swae };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::cae: return "cae";
    case Variant::vae: return "vae";
    case Variant::swae: return "swae";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  if (s == "cae") return Variant::cae;
  if (s == "vae") return Variant::vae;
  if (s == "swae") return Variant::swae;
  throw ConfigError("unknown model variant '" + s + "' (expected cae, vae or swae)");
}

inline constexpr Variant kAllVariants[] = {Variant::cae, Variant::vae, Variant::swae};

struct VariantParams {
  double beta = 1e-2;        // vae: KL weight
  double lambda = 10.0;      // swae: sliced-Wasserstein weight
  int n_projections = 50;    // swae
  double prior_radius = 1.0; // swae: radius of the uniform ball prior

  friend bool operator==(const VariantParams&, const VariantParams&) = default;
};

/// Channel widths of the stride-2 conv stages; the decoder mirrors them.
struct Architecture {
  std::vector<int> channels{8, 16, 32};
};

template <class T>
struct AeModel {
  Variant variant = Variant::cae;
  int latent_dim = 128;
  int patch_side = 30;
  VariantParams hyper;
  nn::Sequential<T> encoder;
  nn::Sequential<T> decoder;

  int encoder_width() const { return encoder.output_shape().at(0); }
  std::size_t num_params() const { return encoder.num_params() + decoder.num_params(); }

  template <class U>
  AeModel<U> cast() const {
    return {variant, latent_dim, patch_side, hyper, encoder.template cast<U>(), decoder.template cast<U>()};
  }
};

/// Encoder: pad to a multiple of 2^stages, stride-2 conv stages with relu,
/// flatten, dense to the latent (2x latent for vae: mean then log-variance).
/// Decoder: dense, relu, reshape, transposed conv stages, crop back.
template <class T = float>
AeModel<T> build_model(Variant variant, int latent_dim, int patch_side, std::uint64_t seed,
                       const Architecture& arch = {}, VariantParams hyper = {}) {
  using nn::LayerSpec;
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (arch.channels.empty()) throw ConfigError("architecture needs at least one conv stage");
  const int multiple = 1 << arch.channels.size();
  const int padded = (patch_side + multiple - 1) / multiple * multiple;
  if (patch_side < 2 || (padded - patch_side) % 2 != 0)
    throw ConfigError("patch side " + std::to_string(patch_side) + " cannot be padded symmetrically to a multiple of " +
                      std::to_string(multiple));
  const int pad = (padded - patch_side) / 2;
  const int bottom = padded / multiple;
  const int last = arch.channels.back();
  const int flat = last * bottom * bottom * bottom;
  const int enc_out = variant == Variant::vae ? 2 * latent_dim : latent_dim;

  std::vector<LayerSpec> enc;
  if (pad > 0) enc.push_back(LayerSpec::pad3d(pad));
  int in_ch = 1;
  for (int ch : arch.channels) {
    enc.push_back(LayerSpec::conv3d(in_ch, ch, 3, 2, 1));
    enc.push_back(LayerSpec::relu());
    in_ch = ch;
  }
  enc.push_back(LayerSpec::flatten());
  enc.push_back(LayerSpec::dense(flat, enc_out));

  std::vector<LayerSpec> dec;
  dec.push_back(LayerSpec::dense(latent_dim, flat));
  dec.push_back(LayerSpec::relu());
  dec.push_back(LayerSpec::reshape({last, bottom, bottom, bottom}));
  for (std::size_t i = arch.channels.size(); i-- > 0;) {
    const int out_ch = i == 0 ? 1 : arch.channels[i - 1];
    dec.push_back(LayerSpec::conv3d_transposed(arch.channels[i], out_ch, 3, 2, 1, 1));
    if (i != 0) dec.push_back(LayerSpec::relu());
  }
  if (pad > 0) dec.push_back(LayerSpec::crop3d(pad));

  AeModel<T> m{variant,
               latent_dim,
               patch_side,
               hyper,
               nn::Sequential<T>({1, patch_side, patch_side, patch_side}, std::move(enc)),
               nn::Sequential<T>({latent_dim}, std::move(dec))};
  m.encoder.init(derive_seed(seed, "encoder"));
  m.decoder.init(derive_seed(seed, "decoder"));
  return m;
}

/// The default 30^3 -> 128 architecture (32^3 padded, channels 8/16/32).
inline AeModel<float> build_default_model(Variant variant, std::uint64_t seed, int latent_dim = 128,
                                          int patch_side = 30, VariantParams hyper = {}) {
  return build_model<float>(variant, latent_dim, patch_side, seed, Architecture{}, hyper);
}

template <class T>
nn::Tensor<T> patch_tensor(const Volume& v) {
  const Dims d = v.dims();
  return nn::Tensor<T>({1, d.nz, d.ny, d.nx}, nn::Buffer<T>(v.data().begin(), v.data().end()));
}

/// Representation of one patch. cae/swae: encoder output; vae: the mean
/// (or, with `sample_seed`, a reparameterized posterior sample).
template <class T>
std::vector<float> encode(const AeModel<T>& model, const Patch& patch, const std::uint64_t* sample_seed = nullptr) {
  if (patch.side() != model.patch_side || patch.data.dims() != Dims::cube(model.patch_side))
    throw ShapeError("encode: patch side " + std::to_string(patch.side()) + " does not match model side " +
                     std::to_string(model.patch_side));
  const nn::Tensor<T> h = model.encoder.forward(patch_tensor<T>(patch.data));
  const std::size_t L = std::size_t(model.latent_dim);
  std::vector<float> out(L);
  if (model.variant == Variant::vae && sample_seed) {
    std::vector<double> mu(h.vec().begin(), h.vec().begin() + L), lv(h.vec().begin() + L, h.vec().end());
    const ReparamSample s = reparameterize(mu, lv, *sample_seed);
    for (std::size_t i = 0; i < L; ++i) out[i] = float(s.z[i]);
  } else {
    for (std::size_t i = 0; i < L; ++i) out[i] = float(h[i]);
  }
  return out;
}

template <class T>
std::vector<std::vector<float>> encode_all(const AeModel<T>& model, const std::vector<Patch>& patches,
                                           bool vae_sample = false, std::uint64_t seed = 0) {
  std::vector<std::vector<float>> out(patches.size());
  parallel_for(patches.size(), [&](std::size_t i) {
    const std::uint64_t s = derive_seed(seed, i);
    out[i] = encode(model, patches[i], vae_sample ? &s : nullptr);
  });
  return out;
}

// ---------------------------------------------------------------------------
// RSMDL1 persistence

inline nlohmann::json describe(const AeModel<float>& m) {
  return {{"format", "rspace-autoencoder"},
          {"variant", to_string(m.variant)},
          {"latent_dim", m.latent_dim},
          {"patch_side", m.patch_side},
          {"hyper",
           {{"beta", m.hyper.beta},
            {"lambda", m.hyper.lambda},
            {"n_projections", m.hyper.n_projections},
            {"prior_radius", m.hyper.prior_radius}}},
          {"encoder", m.encoder.describe()},
          {"decoder", m.decoder.describe()}};
}

inline void save_model(const std::string& path, const AeModel<float>& m) {
  nn::write_model_file(path, describe(m), {m.encoder.params(), m.decoder.params()});
}

inline AeModel<float> load_model(const std::string& path) {
  AeModel<float> m;
  auto count = [&](const nlohmann::json& d) {
    m.variant = variant_from_string(d.at("variant").get<std::string>());
    m.latent_dim = d.at("latent_dim").get<int>();
    m.patch_side = d.at("patch_side").get<int>();
    const auto& h = d.at("hyper");
    m.hyper = {h.at("beta").get<double>(), h.at("lambda").get<double>(), h.at("n_projections").get<int>(),
               h.at("prior_radius").get<double>()};
    try {
      m.encoder = nn::Sequential<float>::from_description(d.at("encoder"));
      m.decoder = nn::Sequential<float>::from_description(d.at("decoder"));
    } catch (const ShapeError& e) {
      throw FormatError(std::string("model descriptor has inconsistent layer shapes: ") + e.what(), 10);
    }
    return m.num_params();
  };
  nn::ModelFile mf = nn::read_model_file(path, count);
  std::copy(mf.params.begin(), mf.params.begin() + std::ptrdiff_t(m.encoder.num_params()), m.encoder.params().begin());
  std::copy(mf.params.begin() + std::ptrdiff_t(m.encoder.num_params()), mf.params.end(), m.decoder.params().begin());
  const int want = m.variant == Variant::vae ? 2 * m.latent_dim : m.latent_dim;
  if (m.encoder.output_shape() != nn::Shape{want} || m.decoder.input_shape() != nn::Shape{m.latent_dim} ||
      m.encoder.input_shape() != nn::Shape{1, m.patch_side, m.patch_side, m.patch_side} ||
      m.decoder.output_shape() != m.encoder.input_shape())
    throw FormatError("model descriptor is inconsistent with its variant/latent_dim/patch_side", 10);
  return m;
}

}  // namespace rspace
