#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "rspace/autoencoders.hpp"
#include "rspace/common.hpp"
#include "rspace/nn/adam.hpp"
#include "rspace/sliced_wasserstein.hpp"
#include "rspace/vae.hpp"

namespace rspace {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 0;
  nn::AdamConfig adam;
  VariantParams hyper;
  int latent_dim = 128;
  Architecture arch;

  void validate(Variant v) const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (v == Variant::swae && batch_size < 2)
      throw ConfigError("swae needs batch_size >= 2: the sliced-Wasserstein term is computed over a batch");
    if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(hyper.beta > 0.0) || !(hyper.lambda > 0.0) || hyper.n_projections < 1 || !(hyper.prior_radius > 0.0))
      throw ConfigError("variant hyperparameters must be positive");
  }
};

struct LossValue {
  double total = 0.0;
  double reconstruction = 0.0;  // mean voxel MSE over the batch
  double regularizer = 0.0;     // beta * mean KL (vae) or lambda * SW^2 (swae), already weighted
  std::uint64_t signature = 0;  // branch signature for finite-difference checks
};

template <class T>
struct AeGrads {
  nn::Buffer<T> encoder, decoder;

  explicit AeGrads(const AeModel<T>& m) : encoder(m.encoder.num_params(), T(0)), decoder(m.decoder.num_params(), T(0)) {}
  void zero() {
    std::fill(encoder.begin(), encoder.end(), T(0));
    std::fill(decoder.begin(), decoder.end(), T(0));
  }
};

/// Batch loss of one variant. cae: MSE. vae: MSE of the decoded
/// reparameterized sample + beta * mean KL. swae: MSE + lambda * SW^2
/// between encoded batch and a fresh equally sized prior-ball draw.
/// If `grads` is given, the exact gradient of the returned total is added.
template <class T>
LossValue ae_loss(const AeModel<T>& m, const std::vector<const Volume*>& batch, std::uint64_t seed,
                  AeGrads<T>* grads = nullptr) {
  const std::size_t B = batch.size();
  if (B == 0) throw ContractError("loss: empty batch");
  if (m.variant == Variant::swae && B < 2) throw ContractError("loss: swae needs a batch of at least 2 patches");
  const std::size_t L = std::size_t(m.latent_dim);
  const bool want_grad = grads != nullptr;

  struct Sample {
    nn::Tensor<T> x;
    nn::Tape<T> enc_tape;
    std::vector<double> h;       // encoder output
    std::vector<double> grad_h;  // regularizer part of d loss / d h
    std::vector<double> eps;     // vae noise
    double recon = 0.0;
    double kl = 0.0;
    std::uint64_t signature = 0;
    nn::Buffer<T> g_enc, g_dec;
  };
  std::vector<Sample> s(B);

  // Encode.
  parallel_for(B, [&](std::size_t i) {
    s[i].x = patch_tensor<T>(*batch[i]);
    const nn::Tensor<T> h = m.encoder.forward(s[i].x, &s[i].enc_tape);
    s[i].h.assign(h.vec().begin(), h.vec().end());
    s[i].grad_h.assign(s[i].h.size(), 0.0);
  });

  // Regularizer over the encoded batch.
  LossValue out;
  if (m.variant == Variant::vae) {
    for (std::size_t i = 0; i < B; ++i) {
      const std::span<const double> mu(s[i].h.data(), L), lv(s[i].h.data() + L, L);
      s[i].kl = kl_divergence(mu, lv);
      kl_divergence_backward(mu, lv, m.hyper.beta / double(B), std::span<double>(s[i].grad_h.data(), L),
                             std::span<double>(s[i].grad_h.data() + L, L));
      out.regularizer += m.hyper.beta * s[i].kl / double(B);
    }
  } else if (m.variant == Variant::swae) {
    Points z(static_cast<Eigen::Index>(B), static_cast<Eigen::Index>(L));
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < L; ++j) z(Eigen::Index(i), Eigen::Index(j)) = s[i].h[j];
    const Points prior = sample_prior_ball(int(B), int(L), m.hyper.prior_radius, derive_seed(seed, "prior"));
    const SlicedWasserstein sw =
        sliced_wasserstein_sq(z, prior, m.hyper.n_projections, derive_seed(seed, "projections"), want_grad);
    out.regularizer = m.hyper.lambda * sw.value;
    out.signature = sw.sort_signature;
    if (want_grad)
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < L; ++j) s[i].grad_h[j] = m.hyper.lambda * sw.grad_a(Eigen::Index(i), Eigen::Index(j));
  }

  // Decode, reconstruction loss and backward per sample.
  parallel_for(B, [&](std::size_t i) {
    Sample& si = s[i];
    std::vector<double> z(si.h.begin(), si.h.begin() + std::ptrdiff_t(L));
    if (m.variant == Variant::vae) {
      ReparamSample rs = reparameterize(std::span<const double>(si.h.data(), L),
                                        std::span<const double>(si.h.data() + L, L), derive_seed(seed, i));
      z = std::move(rs.z);
      si.eps = std::move(rs.eps);
    }
    nn::Tape<T> dec_tape;
    const nn::Tensor<T> zt({int(L)}, nn::Buffer<T>(z.begin(), z.end()));
    const nn::Tensor<T> y = m.decoder.forward(zt, &dec_tape);
    const std::size_t n = y.size();
    nn::Tensor<T> gy(y.shape());
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double d = double(y[k]) - double(si.x[k]);
      acc += d * d;
      gy[k] = T(2.0 * d / (double(n) * double(B)));
    }
    si.recon = acc / double(n);
    si.signature = m.encoder.activation_signature(si.enc_tape) ^ (m.decoder.activation_signature(dec_tape) * 31);
    if (!want_grad) return;

    si.g_dec.assign(m.decoder.num_params(), T(0));
    si.g_enc.assign(m.encoder.num_params(), T(0));
    const nn::Tensor<T> gz = m.decoder.backward(dec_tape, gy, si.g_dec, true);
    std::vector<double> gh = si.grad_h;
    if (m.variant == Variant::vae) {
      std::vector<double> gzd(gz.vec().begin(), gz.vec().end());
      reparameterize_backward(std::span<const double>(si.h.data() + L, L), si.eps, gzd,
                              std::span<double>(gh.data(), L), std::span<double>(gh.data() + L, L));
    } else {
      for (std::size_t j = 0; j < L; ++j) gh[j] += double(gz[j]);
    }
    const nn::Tensor<T> ght(m.encoder.output_shape(), nn::Buffer<T>(gh.begin(), gh.end()));
    m.encoder.backward(si.enc_tape, ght, si.g_enc, false);
  });

  // Ordered reduction: independent of the thread schedule.
  for (std::size_t i = 0; i < B; ++i) {
    out.reconstruction += s[i].recon / double(B);
    out.signature = (out.signature * 0x100000001b3ULL) ^ s[i].signature;
    if (want_grad) {
      for (std::size_t k = 0; k < grads->encoder.size(); ++k) grads->encoder[k] += s[i].g_enc[k];
      for (std::size_t k = 0; k < grads->decoder.size(); ++k) grads->decoder[k] += s[i].g_dec[k];
    }
  }
  out.total = out.reconstruction + out.regularizer;
  return out;
}

struct TrainResult {
  AeModel<float> model;
  std::vector<double> loss_curve;        // per-epoch mean training loss
  std::vector<double> validation_curve;  // per-epoch mean validation loss (empty without validation data)
};

using EpochCallback = std::function<void(int epoch, double train_loss, double validation_loss)>;

namespace detail {

inline double mean_loss(const AeModel<float>& m, const std::vector<Patch>& data, int batch_size, std::uint64_t seed) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < data.size(); start += std::size_t(batch_size)) {
    const std::size_t end = std::min(data.size(), start + std::size_t(batch_size));
    if (m.variant == Variant::swae && end - start < 2) break;
    std::vector<const Volume*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&data[i].data);
    total += ae_loss(m, batch, derive_seed(seed, start)).total * double(end - start);
    count += end - start;
  }
  return count ? total / double(count) : 0.0;
}

}  // namespace detail

/// Shuffled mini-batch Adam. Deterministic per cfg.seed. The trailing
/// partial batch is kept unless it is too small for the variant.
inline TrainResult train(Variant variant, const std::vector<Patch>& dataset, const TrainConfig& cfg,
                         const std::vector<Patch>& validation = {}, const EpochCallback& on_epoch = {}) {
  cfg.validate(variant);
  if (dataset.size() < std::size_t(cfg.batch_size))
    throw ConfigError("training set of " + std::to_string(dataset.size()) + " patches is smaller than batch_size " +
                      std::to_string(cfg.batch_size));
  const int side = dataset.front().side();
  for (const auto& p : dataset)
    if (p.side() != side) throw ShapeError("training patches must share one side length");

  TrainResult res{build_model<float>(variant, cfg.latent_dim, side, derive_seed(cfg.seed, "init"), cfg.arch, cfg.hyper),
                  {},
                  {}};
  AeModel<float>& m = res.model;
  nn::Adam<float> adam_enc(m.encoder.num_params(), cfg.adam), adam_dec(m.decoder.num_params(), cfg.adam);
  AeGrads<float> grads(m);
  const std::size_t min_batch = variant == Variant::swae ? 2 : 1;
  std::vector<std::size_t> order(dataset.size());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t(0));
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, "shuffle"), std::uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_total = 0.0;
    std::size_t seen = 0;
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size), ++batch_index) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
      if (end - start < min_batch) break;
      std::vector<const Volume*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&dataset[order[i]].data);
      grads.zero();
      const std::uint64_t step_seed =
          derive_seed(derive_seed(cfg.seed, "step"), std::uint64_t(epoch) * 1000003ULL + std::uint64_t(batch_index));
      const LossValue lv = ae_loss(m, batch, step_seed, &grads);
      if (!std::isfinite(lv.total))
        throw TrainingError(std::string(to_string(variant)) + " training diverged (non-finite loss) at epoch " +
                            std::to_string(epoch + 1) + ", batch " + std::to_string(batch_index));
      try {
        adam_enc.step(m.encoder.params(), grads.encoder);
        adam_dec.step(m.decoder.params(), grads.decoder);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batch_index));
      }
      epoch_total += lv.total * double(end - start);
      seen += end - start;
    }
    res.loss_curve.push_back(epoch_total / double(seen));
    double val = 0.0;
    if (!validation.empty()) {
      val = detail::mean_loss(m, validation, cfg.batch_size, derive_seed(cfg.seed, "validation"));
      res.validation_curve.push_back(val);
    }
    if (on_epoch) on_epoch(epoch + 1, res.loss_curve.back(), val);
  }
  return res;
}

}  // namespace rspace
