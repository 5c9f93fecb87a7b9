#pragma once

#include <Eigen/Core>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rspace/common.hpp"
#include "rspace/nn/tensor.hpp"

namespace rspace::nn {

enum class LayerKind { conv3d, conv3d_transposed, dense, relu, flatten, reshape, pad3d, crop3d };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::conv3d_transposed: return "conv3d_transposed";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::reshape: return "reshape";
    case LayerKind::pad3d: return "pad3d";
    case LayerKind::crop3d: return "crop3d";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::conv3d, LayerKind::conv3d_transposed, LayerKind::dense, LayerKind::relu,
                      LayerKind::flatten, LayerKind::reshape, LayerKind::pad3d, LayerKind::crop3d})
    if (s == to_string(k)) return k;
  throw FormatError("unknown layer kind '" + s + "'", 0);
}

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int in_channels = 0, out_channels = 0, kernel = 0, stride = 1, padding = 0;  // conv kinds
  int output_padding = 0;                                                     // conv3d_transposed only
  int in_features = 0, out_features = 0;                                      // dense
  int amount = 0;                                                             // pad3d / crop3d, per side
  Shape target;                                                               // reshape

  static LayerSpec of(LayerKind kind) {
    LayerSpec s;
    s.kind = kind;
    return s;
  }
  static LayerSpec conv3d(int cin, int cout, int k, int stride, int padding) {
    LayerSpec s = of(LayerKind::conv3d);
    s.in_channels = cin;
    s.out_channels = cout;
    s.kernel = k;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec conv3d_transposed(int cin, int cout, int k, int stride, int padding, int output_padding = 0) {
    LayerSpec s = conv3d(cin, cout, k, stride, padding);
    s.kind = LayerKind::conv3d_transposed;
    s.output_padding = output_padding;
    return s;
  }
  static LayerSpec dense(int in, int out) {
    LayerSpec s = of(LayerKind::dense);
    s.in_features = in;
    s.out_features = out;
    return s;
  }
  static LayerSpec relu() { return of(LayerKind::relu); }
  static LayerSpec flatten() { return of(LayerKind::flatten); }
  static LayerSpec reshape(Shape target) {
    LayerSpec s = of(LayerKind::reshape);
    s.target = std::move(target);
    return s;
  }
  static LayerSpec pad3d(int amount) {
    LayerSpec s = of(LayerKind::pad3d);
    s.amount = amount;
    return s;
  }
  static LayerSpec crop3d(int amount) {
    LayerSpec s = of(LayerKind::crop3d);
    s.amount = amount;
    return s;
  }

  std::size_t weight_count() const {
    switch (kind) {
      case LayerKind::conv3d:
      case LayerKind::conv3d_transposed:
        return std::size_t(in_channels) * out_channels * kernel * kernel * kernel;
      case LayerKind::dense: return std::size_t(in_features) * out_features;
      default: return 0;
    }
  }
  std::size_t bias_count() const {
    switch (kind) {
      case LayerKind::conv3d:
      case LayerKind::conv3d_transposed: return std::size_t(out_channels);
      case LayerKind::dense: return std::size_t(out_features);
      default: return 0;
    }
  }
  std::size_t param_count() const { return weight_count() + bias_count(); }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline nlohmann::json to_json(const LayerSpec& s) {
  nlohmann::json j{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case LayerKind::conv3d:
    case LayerKind::conv3d_transposed:
      j["in_channels"] = s.in_channels;
      j["out_channels"] = s.out_channels;
      j["kernel"] = s.kernel;
      j["stride"] = s.stride;
      j["padding"] = s.padding;
      if (s.kind == LayerKind::conv3d_transposed) j["output_padding"] = s.output_padding;
      break;
    case LayerKind::dense:
      j["in_features"] = s.in_features;
      j["out_features"] = s.out_features;
      break;
    case LayerKind::reshape: j["target"] = s.target; break;
    case LayerKind::pad3d:
    case LayerKind::crop3d: j["amount"] = s.amount; break;
    default: break;
  }
  j["param_count"] = s.param_count();
  return j;
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  s.in_channels = j.value("in_channels", 0);
  s.out_channels = j.value("out_channels", 0);
  s.kernel = j.value("kernel", 0);
  s.stride = j.value("stride", 1);
  s.padding = j.value("padding", 0);
  s.output_padding = j.value("output_padding", 0);
  s.in_features = j.value("in_features", 0);
  s.out_features = j.value("out_features", 0);
  s.amount = j.value("amount", 0);
  if (j.contains("target")) s.target = j.at("target").get<Shape>();
  return s;
}

namespace detail {

inline void expect_axis(const Shape& in, std::size_t axis, int expected, const char* layer) {
  if (in.size() <= axis || in[axis] != expected)
    throw ShapeError(std::string(layer) + ": axis " + std::to_string(axis) + " expected " + std::to_string(expected) +
                     ", got " + (in.size() <= axis ? std::string("none") : std::to_string(in[axis])) + " (input " +
                     shape_str(in) + ")");
}

inline void expect_rank(const Shape& in, std::size_t rank, const char* layer) {
  if (in.size() != rank)
    throw ShapeError(std::string(layer) + ": expected rank " + std::to_string(rank) + " input, got " + shape_str(in));
}

/// Geometry of a strided 3D cross-correlation between an image grid and
/// the output ("column") grid.
struct ConvGeometry {
  int channels, d, h, w;  // image
  int k, stride, pad;
  int od, oh, ow;  // columns
  int rows() const { return channels * k * k * k; }
  int cols() const { return od * oh * ow; }
};

template <class T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const int k = g.k;
  const std::size_t ncols = std::size_t(g.cols());
  for (int c = 0; c < g.channels; ++c)
    for (int kd = 0; kd < k; ++kd)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          T* row = col + std::size_t(((c * k + kd) * k + kh) * k + kw) * ncols;
          for (int od = 0; od < g.od; ++od) {
            const int iz = od * g.stride - g.pad + kd;
            for (int oh = 0; oh < g.oh; ++oh) {
              const int iy = oh * g.stride - g.pad + kh;
              T* dst = row + (std::size_t(od) * g.oh + oh) * g.ow;
              if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) {
                std::fill(dst, dst + g.ow, T(0));
                continue;
              }
              const T* src = img + ((std::size_t(c) * g.d + iz) * g.h + iy) * g.w;
              for (int ow = 0; ow < g.ow; ++ow) {
                const int ix = ow * g.stride - g.pad + kw;
                dst[ow] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
              }
            }
          }
        }
}

/// Adjoint of im2col: accumulates columns back into the image.
template <class T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const int k = g.k;
  const std::size_t ncols = std::size_t(g.cols());
  for (int c = 0; c < g.channels; ++c)
    for (int kd = 0; kd < k; ++kd)
      for (int kh = 0; kh < k; ++kh)
        for (int kw = 0; kw < k; ++kw) {
          const T* row = col + std::size_t(((c * k + kd) * k + kh) * k + kw) * ncols;
          for (int od = 0; od < g.od; ++od) {
            const int iz = od * g.stride - g.pad + kd;
            if (iz < 0 || iz >= g.d) continue;
            for (int oh = 0; oh < g.oh; ++oh) {
              const int iy = oh * g.stride - g.pad + kh;
              if (iy < 0 || iy >= g.h) continue;
              const T* src = row + (std::size_t(od) * g.oh + oh) * g.ow;
              T* dst = img + ((std::size_t(c) * g.d + iz) * g.h + iy) * g.w;
              for (int ow = 0; ow < g.ow; ++ow) {
                const int ix = ow * g.stride - g.pad + kw;
                if (ix >= 0 && ix < g.w) dst[ix] += src[ow];
              }
            }
          }
        }
}

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline int conv_out(int n, int k, int stride, int pad) { return (n + 2 * pad - k) / stride + 1; }
inline int conv_transposed_out(int n, int k, int stride, int pad, int out_pad) {
  return (n - 1) * stride - 2 * pad + k + out_pad;
}

}  // namespace detail

/// Output shape of a layer given its input shape; throws ShapeError naming
/// the offending axis.
inline Shape layer_output_shape(const LayerSpec& s, const Shape& in) {
  const char* name = to_string(s.kind);
  switch (s.kind) {
    case LayerKind::conv3d:
    case LayerKind::conv3d_transposed: {
      detail::expect_rank(in, 4, name);
      detail::expect_axis(in, 0, s.in_channels, name);
      if (s.kernel < 1 || s.stride < 1 || s.padding < 0 || s.out_channels < 1)
        throw ShapeError(std::string(name) + ": invalid kernel/stride/padding/channels");
      if (s.output_padding < 0 || (s.output_padding > 0 && s.output_padding >= s.stride))
        throw ShapeError(std::string(name) + ": output_padding must be in [0, stride)");
      if (s.kind == LayerKind::conv3d && s.output_padding != 0)
        throw ShapeError("conv3d: output_padding applies to conv3d_transposed only");
      Shape out{s.out_channels, 0, 0, 0};
      for (std::size_t a = 1; a < 4; ++a) {
        const int n = s.kind == LayerKind::conv3d ? detail::conv_out(in[a], s.kernel, s.stride, s.padding)
                                                  : detail::conv_transposed_out(in[a], s.kernel, s.stride, s.padding,
                                                                                s.output_padding);
        if (n < 1 || (s.kind == LayerKind::conv3d && in[a] + 2 * s.padding < s.kernel))
          throw ShapeError(std::string(name) + ": axis " + std::to_string(a) + " of size " + std::to_string(in[a]) +
                           " too small for kernel " + std::to_string(s.kernel));
        out[a] = n;
      }
      return out;
    }
    case LayerKind::dense:
      detail::expect_rank(in, 1, name);
      detail::expect_axis(in, 0, s.in_features, name);
      if (s.out_features < 1) throw ShapeError("dense: out_features must be >= 1");
      return {s.out_features};
    case LayerKind::relu: return in;
    case LayerKind::flatten: return {int(shape_count(in))};
    case LayerKind::reshape:
      if (shape_count(s.target) != shape_count(in) || s.target.empty())
        throw ShapeError("reshape: cannot reshape " + shape_str(in) + " to " + shape_str(s.target));
      return s.target;
    case LayerKind::pad3d:
    case LayerKind::crop3d: {
      detail::expect_rank(in, 4, name);
      if (s.amount < 0) throw ShapeError(std::string(name) + ": amount must be >= 0");
      Shape out = in;
      for (std::size_t a = 1; a < 4; ++a) {
        out[a] = s.kind == LayerKind::pad3d ? in[a] + 2 * s.amount : in[a] - 2 * s.amount;
        if (out[a] < 1)
          throw ShapeError("crop3d: axis " + std::to_string(a) + " of size " + std::to_string(in[a]) +
                           " cannot be cropped by " + std::to_string(s.amount) + " per side");
      }
      return out;
    }
  }
  throw ShapeError("unknown layer kind");
}

template <class T>
void init_layer(const LayerSpec& s, std::span<T> params, Rng& rng) {
  std::fill(params.begin(), params.end(), T(0));
  std::size_t fan_in = 0, fan_out = 0;
  switch (s.kind) {
    case LayerKind::conv3d:
    case LayerKind::conv3d_transposed: {
      const std::size_t k3 = std::size_t(s.kernel) * s.kernel * s.kernel;
      fan_in = std::size_t(s.in_channels) * k3;
      fan_out = std::size_t(s.out_channels) * k3;
      break;
    }
    case LayerKind::dense:
      fan_in = std::size_t(s.in_features);
      fan_out = std::size_t(s.out_features);
      break;
    default: return;
  }
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (std::size_t i = 0; i < s.weight_count(); ++i) params[i] = T(u(rng));
}

/// Forward pass of one layer. `cache` receives what backward needs.
template <class T>
Tensor<T> layer_forward(const LayerSpec& s, std::span<const T> params, const Tensor<T>& x, const Shape& out_shape,
                        Tensor<T>* cache) {
  using namespace detail;
  switch (s.kind) {
    case LayerKind::conv3d: {
      const Shape& in = x.shape();
      const ConvGeometry g{in[0], in[1], in[2], in[3], s.kernel, s.stride, s.padding,
                           out_shape[1], out_shape[2], out_shape[3]};
      Tensor<T> col({g.rows(), g.cols()});
      im2col(x.data(), g, col.data());
      Tensor<T> y(out_shape);
      Eigen::Map<const MatR<T>> w(params.data(), s.out_channels, g.rows());
      Eigen::Map<const VecX<T>> b(params.data() + s.weight_count(), s.out_channels);
      Eigen::Map<MatR<T>> ym(y.data(), s.out_channels, g.cols());
      ym.noalias() = w * Eigen::Map<const MatR<T>>(col.data(), g.rows(), g.cols());
      ym.colwise() += b;
      if (cache) *cache = std::move(col);
      return y;
    }
    case LayerKind::conv3d_transposed: {
      const Shape& in = x.shape();
      const ConvGeometry g{s.out_channels, out_shape[1], out_shape[2], out_shape[3], s.kernel, s.stride, s.padding,
                           in[1], in[2], in[3]};
      const int nin = g.cols();
      Eigen::Map<const MatR<T>> w(params.data(), s.in_channels, g.rows());
      Eigen::Map<const VecX<T>> b(params.data() + s.weight_count(), s.out_channels);
      MatR<T> cols = w.transpose() * Eigen::Map<const MatR<T>>(x.data(), s.in_channels, nin);
      Tensor<T> y(out_shape);
      col2im(cols.data(), g, y.data());
      const std::size_t vox = shape_count(out_shape) / std::size_t(s.out_channels);
      for (int c = 0; c < s.out_channels; ++c) {
        T* p = y.data() + std::size_t(c) * vox;
        for (std::size_t i = 0; i < vox; ++i) p[i] += b(c);
      }
      if (cache) *cache = x;
      return y;
    }
    case LayerKind::dense: {
      Eigen::Map<const MatR<T>> w(params.data(), s.out_features, s.in_features);
      Eigen::Map<const VecX<T>> b(params.data() + s.weight_count(), s.out_features);
      Tensor<T> y(out_shape);
      Eigen::Map<VecX<T>>(y.data(), s.out_features).noalias() =
          w * Eigen::Map<const VecX<T>>(x.data(), s.in_features) + b;
      if (cache) *cache = x;
      return y;
    }
    case LayerKind::relu: {
      Tensor<T> y(out_shape);
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      if (cache) *cache = x;
      return y;
    }
    case LayerKind::flatten:
    case LayerKind::reshape: {
      Tensor<T> y = x;
      y.reshape(out_shape);
      return y;
    }
    case LayerKind::pad3d:
    case LayerKind::crop3d: {
      Tensor<T> y(out_shape);
      const Shape& in = x.shape();
      const bool pad = s.kind == LayerKind::pad3d;
      const int a = s.amount;
      const Shape& small = pad ? in : out_shape;
      const Shape& big = pad ? out_shape : in;
      for (int c = 0; c < small[0]; ++c)
        for (int z = 0; z < small[1]; ++z)
          for (int yy = 0; yy < small[2]; ++yy) {
            const std::size_t so = ((std::size_t(c) * small[1] + z) * small[2] + yy) * small[3];
            const std::size_t bo = ((std::size_t(c) * big[1] + z + a) * big[2] + yy + a) * big[3] + a;
            if (pad)
              std::copy(x.data() + so, x.data() + so + small[3], y.data() + bo);
            else
              std::copy(x.data() + bo, x.data() + bo + small[3], y.data() + so);
          }
      return y;
    }
  }
  throw ShapeError("unknown layer kind");
}

/// Backward pass of one layer: accumulates parameter gradients into
/// `grad_params` and returns the input gradient (empty if not requested).
template <class T>
Tensor<T> layer_backward(const LayerSpec& s, std::span<const T> params, const Shape& in_shape,
                         const Tensor<T>& cache, const Tensor<T>& gy, std::span<T> grad_params,
                         bool need_input_grad) {
  using namespace detail;
  switch (s.kind) {
    case LayerKind::conv3d: {
      const Shape& out = gy.shape();
      const ConvGeometry g{in_shape[0], in_shape[1], in_shape[2], in_shape[3], s.kernel, s.stride, s.padding,
                           out[1], out[2], out[3]};
      Eigen::Map<const MatR<T>> gym(gy.data(), s.out_channels, g.cols());
      Eigen::Map<const MatR<T>> col(cache.data(), g.rows(), g.cols());
      Eigen::Map<MatR<T>> gw(grad_params.data(), s.out_channels, g.rows());
      Eigen::Map<VecX<T>> gb(grad_params.data() + s.weight_count(), s.out_channels);
      gw.noalias() += gym * col.transpose();
      gb += gym.rowwise().sum();
      if (!need_input_grad) return {};
      Eigen::Map<const MatR<T>> w(params.data(), s.out_channels, g.rows());
      MatR<T> gcol = w.transpose() * gym;
      Tensor<T> gx(in_shape);
      col2im(gcol.data(), g, gx.data());
      return gx;
    }
    case LayerKind::conv3d_transposed: {
      const Shape& out = gy.shape();
      const ConvGeometry g{s.out_channels, out[1], out[2], out[3], s.kernel, s.stride, s.padding,
                           in_shape[1], in_shape[2], in_shape[3]};
      const int nin = g.cols();
      MatR<T> gcols(g.rows(), nin);
      im2col(gy.data(), g, gcols.data());
      Eigen::Map<const MatR<T>> xm(cache.data(), s.in_channels, nin);
      Eigen::Map<MatR<T>> gw(grad_params.data(), s.in_channels, g.rows());
      gw.noalias() += xm * gcols.transpose();
      const std::size_t vox = gy.size() / std::size_t(s.out_channels);
      for (int c = 0; c < s.out_channels; ++c) {
        T acc = T(0);
        const T* p = gy.data() + std::size_t(c) * vox;
        for (std::size_t i = 0; i < vox; ++i) acc += p[i];
        grad_params[s.weight_count() + std::size_t(c)] += acc;
      }
      if (!need_input_grad) return {};
      Eigen::Map<const MatR<T>> w(params.data(), s.in_channels, g.rows());
      Tensor<T> gx(in_shape);
      Eigen::Map<MatR<T>>(gx.data(), s.in_channels, nin).noalias() = w * gcols;
      return gx;
    }
    case LayerKind::dense: {
      Eigen::Map<const VecX<T>> gyv(gy.data(), s.out_features);
      Eigen::Map<const VecX<T>> xv(cache.data(), s.in_features);
      Eigen::Map<MatR<T>> gw(grad_params.data(), s.out_features, s.in_features);
      Eigen::Map<VecX<T>> gb(grad_params.data() + s.weight_count(), s.out_features);
      gw.noalias() += gyv * xv.transpose();
      gb += gyv;
      if (!need_input_grad) return {};
      Eigen::Map<const MatR<T>> w(params.data(), s.out_features, s.in_features);
      Tensor<T> gx(in_shape);
      Eigen::Map<VecX<T>>(gx.data(), s.in_features).noalias() = w.transpose() * gyv;
      return gx;
    }
    case LayerKind::relu: {
      if (!need_input_grad) return {};
      Tensor<T> gx(in_shape);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = cache[i] > T(0) ? gy[i] : T(0);
      return gx;
    }
    case LayerKind::flatten:
    case LayerKind::reshape: {
      if (!need_input_grad) return {};
      Tensor<T> gx = gy;
      gx.reshape(in_shape);
      return gx;
    }
    case LayerKind::pad3d:
    case LayerKind::crop3d: {
      if (!need_input_grad) return {};
      LayerSpec adjoint = s;
      adjoint.kind = s.kind == LayerKind::pad3d ? LayerKind::crop3d : LayerKind::pad3d;
      return layer_forward<T>(adjoint, {}, gy, in_shape, nullptr);
    }
  }
  throw ShapeError("unknown layer kind");
}

}  // namespace rspace::nn
