#pragma once

/// @file conv.hpp
/// @brief Convolution, transposed convolution and average pooling on
/// [B, C, n1[, n2[, n3]]] tensors.

#include <array>

#include "diano/ops.hpp"

namespace diano {

/// Per-axis convolution settings; vectors are indexed by spatial axis.
struct ConvGeometry {
  std::vector<std::size_t> stride;
  std::vector<std::size_t> padding;
  std::vector<std::size_t> output_padding;  // transposed convolution only
};

namespace detail {

/// Index map between a "source" grid walked densely and a "target" grid hit
/// at t = r * s - p + k along each axis. Spatial dims are right-aligned into
/// three slots so 1-d and 2-d fields reuse the 3-d kernel.
struct TapMap {
  std::array<std::size_t, 3> src{1, 1, 1}, tgt{1, 1, 1}, kernel{1, 1, 1},
      stride{1, 1, 1}, pad{0, 0, 0};

  std::size_t src_size() const { return src[0] * src[1] * src[2]; }
  std::size_t tgt_size() const { return tgt[0] * tgt[1] * tgt[2]; }
  std::size_t taps() const { return kernel[0] * kernel[1] * kernel[2]; }

  /// Valid r in [0, n_src) with r*s - p + k in [0, n_tgt).
  static std::pair<std::size_t, std::size_t> range(std::size_t n_src,
                                                   std::size_t n_tgt,
                                                   std::size_t s, std::size_t p,
                                                   std::size_t k) {
    const auto ss = static_cast<std::ptrdiff_t>(s);
    const auto off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(p);
    // r*s + off >= 0  ->  r >= ceil(-off / s)
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + ss - 1) / ss;
    // r*s + off <= n_tgt - 1
    const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(n_tgt) - 1 - off;
    std::ptrdiff_t hi = top < 0 ? -1 : top / ss;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(n_src) - 1);
    if (hi < lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi + 1)};
  }

  /// Calls fn(src_offset, tgt_offset, count, tgt_step) for each contiguous run
  /// of source points along the last axis for tap (kz, ky, kx).
  template <class Fn>
  void runs(std::size_t kz, std::size_t ky, std::size_t kx, Fn&& fn) const {
    const auto rz = range(src[0], tgt[0], stride[0], pad[0], kz);
    const auto ry = range(src[1], tgt[1], stride[1], pad[1], ky);
    const auto rx = range(src[2], tgt[2], stride[2], pad[2], kx);
    if (rx.first >= rx.second) return;
    const std::size_t count = rx.second - rx.first;
    const std::size_t tx0 = rx.first * stride[2] + kx - pad[2];
    for (std::size_t z = rz.first; z < rz.second; ++z) {
      const std::size_t tz = z * stride[0] + kz - pad[0];
      for (std::size_t y = ry.first; y < ry.second; ++y) {
        const std::size_t ty = y * stride[1] + ky - pad[1];
        fn((z * src[1] + y) * src[2] + rx.first,
           (tz * tgt[1] + ty) * tgt[2] + tx0, count, stride[2]);
      }
    }
  }
};

template <class V>
std::array<std::size_t, 3> right_align(const V& v, std::size_t d,
                                       std::size_t fill) {
  std::array<std::size_t, 3> a{fill, fill, fill};
  for (std::size_t i = 0; i < d; ++i) a[3 - d + i] = v[i];
  return a;
}

inline void check_rank(const Shape& s, const char* op) {
  if (s.size() < 3 || s.size() > 5) {
    throw ShapeError(std::string(op) + ": expects [B, C, n1[, n2[, n3]]], got " +
                     shape_string(s));
  }
}

inline std::vector<std::size_t> per_axis(const std::vector<std::size_t>& v,
                                         std::size_t d, std::size_t dflt,
                                         const char* what) {
  if (v.empty()) return std::vector<std::size_t>(d, dflt);
  if (v.size() == 1) return std::vector<std::size_t>(d, v[0]);
  if (v.size() != d) throw ShapeError(std::string("conv: bad ") + what + " rank");
  return v;
}

}  // namespace detail

/// Block-mean pooling with kernel = stride = factor per spatial axis.
template <Real T>
Tensor<T> avg_pool(const Tensor<T>& x, const std::vector<std::size_t>& factors) {
  detail::check_rank(x.shape(), "avg_pool");
  const std::size_t d = x.ndim() - 2;
  const auto f = detail::per_axis(factors, d, 1, "factor");
  Shape out_shape = x.shape();
  for (std::size_t a = 0; a < d; ++a) {
    if (f[a] == 0 || x.dim(2 + a) % f[a] != 0) {
      throw ShapeError("avg_pool: factor " + std::to_string(f[a]) +
                       " does not divide axis of size " +
                       std::to_string(x.dim(2 + a)));
    }
    out_shape[2 + a] = x.dim(2 + a) / f[a];
  }
  const auto in3 = detail::right_align(std::vector<std::size_t>(x.shape().begin() + 2, x.shape().end()), d, 1);
  const auto f3 = detail::right_align(f, d, 1);
  const auto o3 = std::array<std::size_t, 3>{in3[0] / f3[0], in3[1] / f3[1], in3[2] / f3[2]};
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t in_sz = in3[0] * in3[1] * in3[2];
  const std::size_t out_sz = o3[0] * o3[1] * o3[2];
  const T inv = T(1) / static_cast<T>(f3[0] * f3[1] * f3[2]);
  std::vector<T> out(planes * out_sz, T(0));
  const T* px = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t z = 0; z < in3[0]; ++z)
      for (std::size_t y = 0; y < in3[1]; ++y) {
        const T* row = px + p * in_sz + (z * in3[1] + y) * in3[2];
        T* orow = out.data() + p * out_sz + ((z / f3[0]) * o3[1] + y / f3[1]) * o3[2];
        for (std::size_t xx = 0; xx < in3[2]; ++xx) orow[xx / f3[2]] += row[xx] * inv;
      }
  return record<T>("avg_pool", out_shape, std::move(out), {&x},
                   [planes, in3, o3, f3, in_sz, out_sz, inv](BackwardContext<T>& ctx) {
                     const auto g = ctx.grad_out();
                     auto& gx = ctx.grad(0);
                     for (std::size_t p = 0; p < planes; ++p)
                       for (std::size_t z = 0; z < in3[0]; ++z)
                         for (std::size_t y = 0; y < in3[1]; ++y) {
                           T* row = gx.data() + p * in_sz + (z * in3[1] + y) * in3[2];
                           const T* orow = g.data() + p * out_sz +
                                           ((z / f3[0]) * o3[1] + y / f3[1]) * o3[2];
                           for (std::size_t xx = 0; xx < in3[2]; ++xx)
                             row[xx] += orow[xx / f3[2]] * inv;
                         }
                   });
}

/// Cross-correlation with weight [Cout, Cin, k...] (PyTorch Conv semantics).
template <Real T>
Tensor<T> conv(const Tensor<T>& x, const Tensor<T>& weight,
               const std::type_identity_t<Tensor<T>>* bias, const ConvGeometry& geom) {
  detail::check_rank(x.shape(), "conv");
  const std::size_t d = x.ndim() - 2;
  if (weight.ndim() != d + 2 || weight.dim(1) != x.dim(1)) {
    throw ShapeError("conv: weight " + shape_string(weight.shape()) +
                     " incompatible with input " + shape_string(x.shape()));
  }
  const std::size_t nb = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
  if (bias && (bias->ndim() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("conv: bias must have shape [Cout]");
  }
  const auto s = detail::per_axis(geom.stride, d, 1, "stride");
  const auto p = detail::per_axis(geom.padding, d, 0, "padding");
  Shape out_shape{nb, cout};
  std::vector<std::size_t> in_sp(x.shape().begin() + 2, x.shape().end());
  std::vector<std::size_t> k(weight.shape().begin() + 2, weight.shape().end());
  std::vector<std::size_t> out_sp(d);
  for (std::size_t a = 0; a < d; ++a) {
    if (in_sp[a] + 2 * p[a] < k[a]) throw ShapeError("conv: kernel larger than input");
    out_sp[a] = (in_sp[a] + 2 * p[a] - k[a]) / s[a] + 1;
    out_shape.push_back(out_sp[a]);
  }
  detail::TapMap map;
  map.src = detail::right_align(out_sp, d, 1);
  map.tgt = detail::right_align(in_sp, d, 1);
  map.kernel = detail::right_align(k, d, 1);
  map.stride = detail::right_align(s, d, 1);
  map.pad = detail::right_align(p, d, 0);
  const std::size_t ns = map.src_size(), nt = map.tgt_size(), taps = map.taps();
  std::vector<T> out(nb * cout * ns, T(0));
  const T* px = x.data();
  const T* pw = weight.data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t co = 0; co < cout; ++co) {
      T* o = out.data() + (b * cout + co) * ns;
      if (bias) std::fill(o, o + ns, (*bias)[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xi = px + (b * cin + ci) * nt;
        const T* w = pw + (co * cin + ci) * taps;
        std::size_t t = 0;
        for (std::size_t kz = 0; kz < map.kernel[0]; ++kz)
          for (std::size_t ky = 0; ky < map.kernel[1]; ++ky)
            for (std::size_t kx = 0; kx < map.kernel[2]; ++kx, ++t) {
              const T wt = w[t];
              map.runs(kz, ky, kx, [&](std::size_t so, std::size_t to, std::size_t cnt, std::size_t st) {
                for (std::size_t j = 0; j < cnt; ++j) o[so + j] += wt * xi[to + j * st];
              });
            }
      }
    }
  Tensor<T> xv = x.detached(), wv = weight.detached();
  Tensor<T> none;
  return record<T>(
      "conv", out_shape, std::move(out), {&x, &weight, bias ? bias : &none},
      [xv, wv, map, nb, cin, cout, ns, nt, taps](BackwardContext<T>& ctx) {
        const T* g = ctx.grad_out().data();
        const bool nx = ctx.needs(0), nw = ctx.needs(1);
        T* gx = nx ? ctx.grad(0).data() : nullptr;
        T* gw = nw ? ctx.grad(1).data() : nullptr;
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t co = 0; co < cout; ++co) {
            const T* go = g + (b * cout + co) * ns;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T* xi = xv.data() + (b * cin + ci) * nt;
              const T* w = wv.data() + (co * cin + ci) * taps;
              std::size_t t = 0;
              for (std::size_t kz = 0; kz < map.kernel[0]; ++kz)
                for (std::size_t ky = 0; ky < map.kernel[1]; ++ky)
                  for (std::size_t kx = 0; kx < map.kernel[2]; ++kx, ++t) {
                    const T wt = w[t];
                    T acc = T(0);
                    map.runs(kz, ky, kx, [&](std::size_t so, std::size_t to, std::size_t cnt, std::size_t st) {
                      if (nx) {
                        T* gxi = gx + (b * cin + ci) * nt;
                        for (std::size_t j = 0; j < cnt; ++j) gxi[to + j * st] += wt * go[so + j];
                      }
                      if (nw) {
                        for (std::size_t j = 0; j < cnt; ++j) acc += go[so + j] * xi[to + j * st];
                      }
                    });
                    if (nw) gw[(co * cin + ci) * taps + t] += acc;
                  }
            }
          }
        if (ctx.needs(2)) {
          auto& gb = ctx.grad(2);
          for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t co = 0; co < cout; ++co) {
              T acc = T(0);
              for (std::size_t i = 0; i < ns; ++i) acc += g[(b * cout + co) * ns + i];
              gb[co] += acc;
            }
        }
      });
}

/// Transposed convolution with weight [Cin, Cout, k...]. Output size per
/// axis is (n - 1) * stride - 2 * padding + k + output_padding.
template <Real T>
Tensor<T> conv_transpose(const Tensor<T>& x, const Tensor<T>& weight,
                         const std::type_identity_t<Tensor<T>>* bias, const ConvGeometry& geom) {
  detail::check_rank(x.shape(), "conv_transpose");
  const std::size_t d = x.ndim() - 2;
  if (weight.ndim() != d + 2 || weight.dim(0) != x.dim(1)) {
    throw ShapeError("conv_transpose: weight " + shape_string(weight.shape()) +
                     " incompatible with input " + shape_string(x.shape()));
  }
  const std::size_t nb = x.dim(0), cin = x.dim(1), cout = weight.dim(1);
  if (bias && (bias->ndim() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("conv_transpose: bias must have shape [Cout]");
  }
  const auto s = detail::per_axis(geom.stride, d, 1, "stride");
  const auto p = detail::per_axis(geom.padding, d, 0, "padding");
  const auto op = detail::per_axis(geom.output_padding, d, 0, "output_padding");
  Shape out_shape{nb, cout};
  std::vector<std::size_t> in_sp(x.shape().begin() + 2, x.shape().end());
  std::vector<std::size_t> k(weight.shape().begin() + 2, weight.shape().end());
  std::vector<std::size_t> out_sp(d);
  for (std::size_t a = 0; a < d; ++a) {
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>((in_sp[a] - 1) * s[a] + k[a] + op[a]) -
                             2 * static_cast<std::ptrdiff_t>(p[a]);
    if (n <= 0) throw ShapeError("conv_transpose: non-positive output size");
    out_sp[a] = static_cast<std::size_t>(n);
    out_shape.push_back(out_sp[a]);
  }
  detail::TapMap map;
  map.src = detail::right_align(in_sp, d, 1);
  map.tgt = detail::right_align(out_sp, d, 1);
  map.kernel = detail::right_align(k, d, 1);
  map.stride = detail::right_align(s, d, 1);
  map.pad = detail::right_align(p, d, 0);
  const std::size_t ns = map.src_size(), nt = map.tgt_size(), taps = map.taps();
  std::vector<T> out(nb * cout * nt, T(0));
  const T* px = x.data();
  const T* pw = weight.data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t co = 0; co < cout; ++co) {
      T* o = out.data() + (b * cout + co) * nt;
      if (bias) std::fill(o, o + nt, (*bias)[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xi = px + (b * cin + ci) * ns;
        const T* w = pw + (ci * cout + co) * taps;
        std::size_t t = 0;
        for (std::size_t kz = 0; kz < map.kernel[0]; ++kz)
          for (std::size_t ky = 0; ky < map.kernel[1]; ++ky)
            for (std::size_t kx = 0; kx < map.kernel[2]; ++kx, ++t) {
              const T wt = w[t];
              map.runs(kz, ky, kx, [&](std::size_t so, std::size_t to, std::size_t cnt, std::size_t st) {
                for (std::size_t j = 0; j < cnt; ++j) o[to + j * st] += wt * xi[so + j];
              });
            }
      }
    }
  Tensor<T> xv = x.detached(), wv = weight.detached();
  Tensor<T> none;
  return record<T>(
      "conv_transpose", out_shape, std::move(out), {&x, &weight, bias ? bias : &none},
      [xv, wv, map, nb, cin, cout, ns, nt, taps](BackwardContext<T>& ctx) {
        const T* g = ctx.grad_out().data();
        const bool nx = ctx.needs(0), nw = ctx.needs(1);
        T* gx = nx ? ctx.grad(0).data() : nullptr;
        T* gw = nw ? ctx.grad(1).data() : nullptr;
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t co = 0; co < cout; ++co) {
            const T* go = g + (b * cout + co) * nt;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T* xi = xv.data() + (b * cin + ci) * ns;
              const T* w = wv.data() + (ci * cout + co) * taps;
              std::size_t t = 0;
              for (std::size_t kz = 0; kz < map.kernel[0]; ++kz)
                for (std::size_t ky = 0; ky < map.kernel[1]; ++ky)
                  for (std::size_t kx = 0; kx < map.kernel[2]; ++kx, ++t) {
                    const T wt = w[t];
                    T acc = T(0);
                    map.runs(kz, ky, kx, [&](std::size_t so, std::size_t to, std::size_t cnt, std::size_t st) {
                      if (nx) {
                        T* gxi = gx + (b * cin + ci) * ns;
                        for (std::size_t j = 0; j < cnt; ++j) gxi[so + j] += wt * go[to + j * st];
                      }
                      if (nw) {
                        for (std::size_t j = 0; j < cnt; ++j) acc += xi[so + j] * go[to + j * st];
                      }
                    });
                    if (nw) gw[(ci * cout + co) * taps + t] += acc;
                  }
            }
          }
        if (ctx.needs(2)) {
          auto& gb = ctx.grad(2);
          for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t co = 0; co < cout; ++co) {
              T acc = T(0);
              for (std::size_t i = 0; i < nt; ++i) acc += g[(b * cout + co) * nt + i];
              gb[co] += acc;
            }
        }
      });
}

}  // namespace diano
