#pragma once

/// @file layers.hpp
/// @brief Neural-operator building blocks: pointwise MLPs, spectral
/// convolution, Fourier blocks and the paired resampling layers.
///
/// Layers do not own tensors. Each layer records indices into a flat
/// ParamStore, and forward functions read parameters from a view (a vector
/// parallel to the store) so that a training step can substitute
/// tape-attached copies without touching the model.

#include <random>

#include "diano/conv.hpp"
#include "diano/fft.hpp"
#include "diano/grid_field.hpp"

namespace diano {

template <Real T>
using ParamView = std::vector<Tensor<T>>;

/// Named, ordered trainable tensors.
template <Real T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const ParamView<T>& values() const { return values_; }
  ParamView<T>& values() { return values_; }
  const Tensor<T>& operator[](std::size_t i) const { return values_.at(i); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.numel();
    return n;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw Error("no parameter named '" + name + "'");
  }

 private:
  std::vector<std::string> names_;
  ParamView<T> values_;
};

using Rng = std::mt19937_64;

namespace init {

template <Real T>
Tensor<T> uniform(Shape shape, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

template <Real T>
Tensor<T> symmetric(Shape shape, double bound, Rng& rng) {
  return uniform<T>(std::move(shape), -bound, bound, rng);
}

}  // namespace init

// ---------------------------------------------------------------------------
// Pointwise layers

struct LinearLayer {
  std::size_t weight = 0, bias = 0;
  std::size_t in = 0, out = 0;
};

/// Channel-mixing linear map applied at every grid point, W [out, in].
template <Real T>
LinearLayer make_pointwise_linear(ParamStore<T>& store, const std::string& name,
                                  std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearLayer l;
  l.in = in;
  l.out = out;
  l.weight = store.add(name + ".weight", init::symmetric<T>({out, in}, bound, rng));
  l.bias = store.add(name + ".bias", init::symmetric<T>({out}, bound, rng));
  return l;
}

/// Dense layer on flattened vectors, W [out, in].
template <Real T>
LinearLayer make_dense(ParamStore<T>& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng) {
  return make_pointwise_linear(store, name, in, out, rng);
}

template <Real T>
Tensor<T> apply_pointwise(const Tensor<T>& x, const LinearLayer& l, const ParamView<T>& p) {
  if (x.dim(1) != l.in) {
    throw ShapeError("pointwise layer expects " + std::to_string(l.in) + " channels, got " +
                     std::to_string(x.dim(1)));
  }
  return channel_linear(x, p[l.weight], &p[l.bias]);
}

/// Pointwise MLP; `act` is applied between layers, not after the last.
struct PointwiseMlp {
  std::vector<LinearLayer> layers;
  Activation act = Activation::gelu;
};

template <Real T>
PointwiseMlp make_pointwise_mlp(ParamStore<T>& store, const std::string& name,
                                const std::vector<std::size_t>& widths, Activation act,
                                Rng& rng) {
  PointwiseMlp m;
  m.act = act;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    m.layers.push_back(make_pointwise_linear(store, name + "." + std::to_string(i), widths[i],
                                             widths[i + 1], rng));
  }
  return m;
}

template <Real T>
Tensor<T> apply_mlp(const Tensor<T>& x, const PointwiseMlp& m, const ParamView<T>& p) {
  Tensor<T> y = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    y = apply_pointwise(y, m.layers[i], p);
    if (i + 1 < m.layers.size()) y = activate(y, m.act);
  }
  return y;
}

/// Lifts c_in channels to `width` at every grid point (c_in -> w -> w).
template <Real T>
PointwiseMlp make_lift(ParamStore<T>& store, const std::string& name, std::size_t c_in,
                       std::size_t width, Activation act, Rng& rng) {
  return make_pointwise_mlp(store, name, {c_in, width, width}, act, rng);
}

/// Projects `width` channels to c_out at every grid point (w -> w -> c_out).
template <Real T>
PointwiseMlp make_project(ParamStore<T>& store, const std::string& name, std::size_t width,
                          std::size_t c_out, Activation act, Rng& rng) {
  return make_pointwise_mlp(store, name, {width, width, c_out}, act, rng);
}

template <Real T>
GridField<T> lift(const GridField<T>& x, const PointwiseMlp& m, const ParamView<T>& p) {
  return x.with_values(apply_mlp(x.values(), m, p));
}

template <Real T>
GridField<T> project(const GridField<T>& x, const PointwiseMlp& m, const ParamView<T>& p) {
  return x.with_values(apply_mlp(x.values(), m, p));
}

// ---------------------------------------------------------------------------
// Spectral convolution

namespace detail {

/// Retained frequency indices along a full (two-sided) axis of length n:
/// the m lowest non-negative frequencies, then the m most negative ones.
inline std::vector<std::size_t> two_sided_modes(std::size_t n, std::size_t m) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < m; ++k) idx.push_back(k);
  for (std::size_t k = n - m; k < n; ++k) idx.push_back(k);
  return idx;
}

}  // namespace detail

/// Fourier-space channel mixing on the lowest modes.
///
/// x is [B, Cin, n1..nd] and W is complex [Cin, Cout, M1..Md, 2] with
/// M_a = 2 m_a on every axis but the last (positive then negative
/// frequencies) and M_d = m_d on the last (half-spectrum) axis. All other
/// modes are zeroed.
template <Real T>
Tensor<T> spectral_conv(const Tensor<T>& x, const Tensor<T>& weight) {
  if (x.ndim() < 3) throw ShapeError("spectral_conv: input must be [B, C, n...]");
  const std::size_t d = x.ndim() - 2;
  if (weight.ndim() != d + 3 || weight.dim(0) != x.dim(1) || weight.shape().back() != 2) {
    throw ShapeError("spectral_conv: weights " + shape_string(weight.shape()) +
                     " do not match input " + shape_string(x.shape()));
  }
  const std::size_t n_last = x.shape().back();
  Tensor<T> s = rfftn(x, d);  // [B, Cin, n1.., h, 2]
  for (std::size_t a = 0; a < d; ++a) {
    const std::size_t n = x.dim(2 + a);
    const std::size_t M = weight.dim(2 + a);
    if (a + 1 < d) {
      if (M % 2 != 0 || M > n) {
        throw ShapeError("spectral_conv: " + std::to_string(M / 2) +
                         " modes exceed the capacity of an axis of " + std::to_string(n));
      }
      s = index_select(s, 2 + a, detail::two_sided_modes(n, M / 2));
    } else {
      if (M > n / 2 + 1) {
        throw ShapeError("spectral_conv: " + std::to_string(M) +
                         " modes exceed the capacity of an axis of " + std::to_string(n));
      }
      s = slice(s, 2 + a, 0, M);
    }
  }
  Tensor<T> mixed = complex_channel_mix(s, weight);
  for (std::size_t a = 0; a < d; ++a) {
    const std::size_t n = x.dim(2 + a);
    const std::size_t M = weight.dim(2 + a);
    if (a + 1 < d) {
      mixed = index_scatter(mixed, 2 + a, detail::two_sided_modes(n, M / 2), n);
    } else {
      mixed = pad(mixed, 2 + a, 0, n / 2 + 1 - M);
    }
  }
  return irfftn(mixed, d, n_last);
}

struct SpectralLayer {
  std::size_t weight = 0;
  std::size_t modes = 0;
  std::size_t dims = 0;
};

template <Real T>
SpectralLayer make_spectral(ParamStore<T>& store, const std::string& name, std::size_t in,
                            std::size_t out, std::size_t dims, std::size_t modes, Rng& rng) {
  Shape shape{in, out};
  for (std::size_t a = 0; a < dims; ++a) shape.push_back(a + 1 < dims ? 2 * modes : modes);
  shape.push_back(2);
  const double scale = 1.0 / static_cast<double>(in * out);
  SpectralLayer l;
  l.modes = modes;
  l.dims = dims;
  l.weight = store.add(name + ".weight", init::uniform<T>(shape, 0.0, scale, rng));
  return l;
}

/// Applies a spectral layer to a grid of any size: when an axis is too
/// small for the configured modes, only the lowest representable modes of
/// the weight block are used.
template <Real T>
Tensor<T> apply_spectral(const Tensor<T>& x, const SpectralLayer& l, const ParamView<T>& p) {
  Tensor<T> w = p[l.weight];
  const std::size_t d = l.dims;
  if (x.ndim() != d + 2) throw ShapeError("spectral layer: wrong spatial rank");
  for (std::size_t a = 0; a < d; ++a) {
    const std::size_t n = x.dim(2 + a);
    if (a + 1 < d) {
      const std::size_t m = std::min(l.modes, n / 2);
      if (m < l.modes) w = index_select(w, 2 + a, detail::two_sided_modes(2 * l.modes, m));
    } else {
      const std::size_t m = std::min(l.modes, n / 2 + 1);
      if (m < l.modes) w = slice(w, 2 + a, 0, m);
    }
  }
  return spectral_conv(x, w);
}

/// activation(spectral_conv(x) + pointwise skip(x)).
struct FourierBlock {
  SpectralLayer spectral;
  LinearLayer skip;
  Activation act = Activation::gelu;
};

template <Real T>
FourierBlock make_fourier_block(ParamStore<T>& store, const std::string& name, std::size_t width,
                                std::size_t dims, std::size_t modes, Activation act, Rng& rng) {
  FourierBlock b;
  b.spectral = make_spectral(store, name + ".spectral", width, width, dims, modes, rng);
  b.skip = make_pointwise_linear(store, name + ".skip", width, width, rng);
  b.act = act;
  return b;
}

template <Real T>
GridField<T> fourier_block(const GridField<T>& x, const FourierBlock& b, const ParamView<T>& p) {
  const auto& v = x.values();
  return x.with_values(activate(add(apply_spectral(v, b.spectral, p), apply_pointwise(v, b.skip, p)), b.act));
}

// ---------------------------------------------------------------------------
// Resampling

/// Block-mean pooling; extents are preserved so spacing is recomputed.
template <Real T>
GridField<T> downsample_avg(const GridField<T>& x, const std::vector<std::size_t>& factors) {
  return x.regridded(avg_pool(x.values(), factors));
}

struct UpsampleLayer {
  std::size_t weight = 0, bias = 0;
  std::vector<std::size_t> factors;
  std::vector<std::size_t> kernel;
};

/// Transposed convolution with stride f and kernel 2f per upsampled axis
/// (kernel 1 where f == 1). With `span_kernel`, the kernel equals f so a
/// length-1 axis is restored to length f in one step.
template <Real T>
UpsampleLayer make_upsample(ParamStore<T>& store, const std::string& name, std::size_t in,
                            std::size_t out, const std::vector<std::size_t>& factors, Rng& rng,
                            bool span_kernel = false) {
  UpsampleLayer l;
  l.factors = factors;
  Shape shape{in, out};
  std::size_t receptive = 1;
  for (auto f : factors) {
    const std::size_t k = (f == 1 || span_kernel) ? f : 2 * f;
    l.kernel.push_back(k);
    shape.push_back(k);
    receptive *= k;
  }
  // PyTorch's transposed-conv fan-in convention: dim 1 times receptive field.
  const double bound = 1.0 / std::sqrt(static_cast<double>(out * receptive));
  l.weight = store.add(name + ".weight", init::symmetric<T>(shape, bound, rng));
  l.bias = store.add(name + ".bias", init::symmetric<T>({out}, bound, rng));
  return l;
}

/// Upsamples every axis by its factor, hitting exactly n * f.
template <Real T>
GridField<T> upsample_tconv(const GridField<T>& x, const UpsampleLayer& l, const ParamView<T>& p) {
  const std::size_t d = x.spatial_dims();
  if (l.factors.size() != d) throw ShapeError("upsample: factor rank differs from field rank");
  ConvGeometry g;
  for (std::size_t a = 0; a < d; ++a) {
    const std::size_t f = l.factors[a], k = l.kernel[a], n = x.size(a);
    const std::size_t pad = k == 2 * f ? f / 2 : 0;
    const std::size_t natural = (n - 1) * f + k - 2 * pad;
    const std::size_t target = n * f;
    if (natural > target || target - natural >= f) {
      throw ShapeError("upsample: cannot reach size " + std::to_string(target));
    }
    g.stride.push_back(f);
    g.padding.push_back(pad);
    g.output_padding.push_back(target - natural);
  }
  return x.regridded(conv_transpose(x.values(), p[l.weight], &p[l.bias], g));
}

// ---------------------------------------------------------------------------
// Plain convolutions (baseline autoencoder)

struct ConvLayer {
  std::size_t weight = 0, bias = 0;
  ConvGeometry geom;
  bool transposed = false;
};

template <Real T>
ConvLayer make_conv(ParamStore<T>& store, const std::string& name, std::size_t in,
                    std::size_t out, std::size_t dims, std::size_t k, ConvGeometry geom,
                    bool transposed, Rng& rng) {
  ConvLayer l;
  l.geom = std::move(geom);
  l.transposed = transposed;
  Shape shape = transposed ? Shape{in, out} : Shape{out, in};
  std::size_t receptive = 1;
  for (std::size_t a = 0; a < dims; ++a) {
    shape.push_back(k);
    receptive *= k;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape[1] * receptive));
  l.weight = store.add(name + ".weight", init::symmetric<T>(shape, bound, rng));
  l.bias = store.add(name + ".bias", init::symmetric<T>({out}, bound, rng));
  return l;
}

template <Real T>
Tensor<T> apply_conv(const Tensor<T>& x, const ConvLayer& l, const ParamView<T>& p) {
  return l.transposed ? conv_transpose(x, p[l.weight], &p[l.bias], l.geom)
                      : conv(x, p[l.weight], &p[l.bias], l.geom);
}

}  // namespace diano
