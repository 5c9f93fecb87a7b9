#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rspace/common.hpp"
#include "rspace/nn/layers.hpp"
#include "rspace/nn/tensor.hpp"

namespace rspace::nn {

/// Per-layer caches recorded by a forward pass.
template <class T>
struct Tape {
  std::vector<Tensor<T>> caches;
};

/// Feed-forward stack of layers with all parameters in one flat buffer
/// (layer declaration order, weights then bias per layer).
template <class T>
class Sequential {
 public:
  Sequential() = default;

  Sequential(Shape input_shape, std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
    shapes_.push_back(std::move(input_shape));
    for (const int d : shapes_.front())
      if (d < 1) throw ShapeError("model input shape " + shape_str(shapes_.front()) + " has a non-positive extent");
    offsets_.push_back(0);
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      try {
        shapes_.push_back(layer_output_shape(specs_[i], shapes_.back()));
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" + to_string(specs_[i].kind) + "): " + e.what());
      }
      offsets_.push_back(offsets_.back() + specs_[i].param_count());
    }
    params_.assign(offsets_.back(), T(0));
  }

  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  const Shape& input_shape() const { return shapes_.front(); }
  const Shape& output_shape() const { return shapes_.back(); }
  const Shape& shape_before(std::size_t layer) const { return shapes_[layer]; }
  std::size_t num_layers() const noexcept { return specs_.size(); }
  std::size_t num_params() const noexcept { return params_.size(); }
  std::span<T> params() noexcept { return params_; }
  std::span<const T> params() const noexcept { return params_; }
  std::span<const T> layer_params(std::size_t i) const {
    return std::span<const T>(params_).subspan(offsets_[i], specs_[i].param_count());
  }
  std::size_t param_offset(std::size_t layer) const { return offsets_[layer]; }

  /// Glorot-uniform weights, zero biases, drawn layer by layer.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < specs_.size(); ++i)
      init_layer<T>(specs_[i], std::span<T>(params_).subspan(offsets_[i], specs_[i].param_count()), rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr) const {
    check_input(x);
    if (tape) tape->caches.assign(specs_.size(), Tensor<T>());
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < specs_.size(); ++i)
      cur = layer_forward<T>(specs_[i], layer_params(i), cur, shapes_[i + 1], tape ? &tape->caches[i] : nullptr);
    return cur;
  }

  /// Reverse pass. Parameter gradients are accumulated into grad_params.
  Tensor<T> backward(const Tape<T>& tape, const Tensor<T>& grad_out, std::span<T> grad_params,
                     bool need_input_grad = true) const {
    if (tape.caches.size() != specs_.size()) throw ContractError("backward called without a recorded forward pass");
    if (grad_out.shape() != output_shape())
      throw ShapeError("output gradient shape " + shape_str(grad_out.shape()) + " does not match model output " +
                       shape_str(output_shape()));
    if (grad_params.size() != params_.size()) throw ShapeError("gradient buffer size does not match parameter count");
    // Earliest layer whose input gradient is actually needed.
    std::size_t first_needed = 0;
    if (!need_input_grad) {
      first_needed = specs_.size();
      for (std::size_t i = 0; i < specs_.size(); ++i)
        if (specs_[i].param_count() > 0) {
          first_needed = i;
          break;
        }
    }
    Tensor<T> g = grad_out;
    for (std::size_t i = specs_.size(); i-- > 0;) {
      if (i < first_needed) break;
      const bool want = need_input_grad || i > first_needed;
      g = layer_backward<T>(specs_[i], layer_params(i), shapes_[i], tape.caches[i], g,
                            std::span<T>(grad_params).subspan(offsets_[i], specs_[i].param_count()), want);
      if (!want) break;
    }
    return need_input_grad ? g : Tensor<T>();
  }

  /// Hash of the relu activation pattern recorded in a tape. Equal
  /// signatures mean the forward pass took the same piecewise-linear branch.
  std::uint64_t activation_signature(const Tape<T>& tape) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      if (specs_[i].kind != LayerKind::relu) continue;
      for (const T& v : tape.caches[i].vec()) {
        h ^= (v > T(0)) ? 1u : 0u;
        h *= 0x100000001b3ULL;
      }
    }
    return h;
  }

  template <class U>
  Sequential<U> cast() const {
    Sequential<U> out(input_shape(), specs_);
    std::copy(params_.begin(), params_.end(), out.params().begin());
    return out;
  }

  nlohmann::json describe() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& s : specs_) layers.push_back(to_json(s));
    return {{"input_shape", input_shape()}, {"layers", layers}, {"param_count", num_params()}};
  }

  static Sequential from_description(const nlohmann::json& j) {
    std::vector<LayerSpec> specs;
    for (const auto& l : j.at("layers")) specs.push_back(layer_spec_from_json(l));
    return Sequential(j.at("input_shape").get<Shape>(), std::move(specs));
  }

 private:
  void check_input(const Tensor<T>& x) const {
    const Shape& want = input_shape();
    if (x.rank() != want.size())
      throw ShapeError("model input: expected rank " + std::to_string(want.size()) + " " + shape_str(want) + ", got " +
                       shape_str(x.shape()));
    for (std::size_t a = 0; a < want.size(); ++a)
      if (x.dim(a) != want[a])
        throw ShapeError("model input: axis " + std::to_string(a) + " expected " + std::to_string(want[a]) +
                         ", got " + std::to_string(x.dim(a)));
  }

  std::vector<LayerSpec> specs_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> offsets_;
  Buffer<T> params_;
};

/// A recorded scalar loss together with its gradient w.r.t. the model output.
template <class T>
struct LossNode {
  Tensor<T> value;
  Tensor<T> grad_output;
};

template <class T>
struct Gradients {
  Buffer<T> params;
  Tensor<T> input;
};

template <class T>
Gradients<T> backward(const Sequential<T>& model, const Tape<T>& tape, const LossNode<T>& loss) {
  if (loss.value.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.value.shape()));
  Gradients<T> g{Buffer<T>(model.num_params(), T(0)), {}};
  g.input = model.backward(tape, loss.grad_output, g.params, true);
  return g;
}

template <class T>
LossNode<T> sum_loss(const Tensor<T>& y) {
  T s = T(0);
  for (const T& v : y.vec()) s += v;
  return {Tensor<T>({1}, {s}), Tensor<T>(y.shape(), T(1))};
}

/// mean((y - target)^2) and its gradient 2 (y - target) / N.
template <class T>
LossNode<T> mse_loss(const Tensor<T>& y, const Tensor<T>& target) {
  if (y.size() != target.size()) throw ShapeError("mse: prediction and target sizes differ");
  const T n = T(y.size());
  Tensor<T> g(y.shape());
  T acc = T(0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T d = y[i] - target[i];
    acc += d * d;
    g[i] = T(2) * d / n;
  }
  return {Tensor<T>({1}, {acc / n}), std::move(g)};
}

}  // namespace rspace::nn
