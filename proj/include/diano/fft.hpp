#pragma once

/// @file fft.hpp
/// @brief Discrete Fourier transforms and complex-valued tensor ops.
///
/// Complex tensors are stored as real tensors with a trailing axis of size 2
/// holding (re, im). Transforms follow the usual numpy conventions: forward
/// transforms are unnormalized, inverse transforms carry the 1/n factor, and
/// the inverse real transform ignores the imaginary parts of the DC and
/// Nyquist bins along the last axis.
///
/// Gradients of real-valued losses with respect to a complex quantity z are
/// carried as dL/dRe(z) + i dL/dIm(z). Under that convention the adjoint of a
/// complex-linear map is its conjugate transpose.

#include <complex>
#include <map>
#include <memory>
#include <numbers>

#include "diano/ops.hpp"

namespace diano {

namespace fft {

/// Precomputed unnormalized 1-D complex DFT of fixed length. Powers of two
/// use an iterative radix-2 kernel; other lengths use Bluestein's chirp-z
/// method on a power-of-two convolution.
template <Real T>
class Plan {
 public:
  using C = std::complex<T>;

  explicit Plan(std::size_t n) : n_(n) {
    if (n == 0) throw ShapeError("fft: zero length");
    pow2_ = (n & (n - 1)) == 0;
    if (pow2_) {
      init_radix2(n, twiddle_, bitrev_);
    } else {
      m_ = 1;
      while (m_ < 2 * n - 1) m_ <<= 1;
      init_radix2(m_, twiddle_, bitrev_);
      chirp_.resize(n);
      for (std::size_t j = 0; j < n; ++j) {
        // j^2 mod 2n keeps the phase argument small.
        const std::size_t q = (j * j) % (2 * n);
        const double ang = std::numbers::pi * static_cast<double>(q) /
                           static_cast<double>(n);
        chirp_[j] = C(static_cast<T>(std::cos(ang)),
                      static_cast<T>(std::sin(ang)));
      }
      std::vector<C> b(m_, C(0));
      b[0] = chirp_[0];
      for (std::size_t j = 1; j < n; ++j) b[j] = b[m_ - j] = chirp_[j];
      radix2(b.data(), m_, false);
      chirp_spectrum_ = std::move(b);
    }
  }

  std::size_t size() const { return n_; }

  /// In place; inverse uses the +i sign and is NOT scaled by 1/n.
  void execute(C* data, bool inverse) const {
    if (pow2_) {
      radix2(data, n_, inverse);
      return;
    }
    if (inverse) {
      for (std::size_t i = 0; i < n_; ++i) data[i] = std::conj(data[i]);
    }
    std::vector<C> a(m_, C(0));
    for (std::size_t j = 0; j < n_; ++j) a[j] = data[j] * std::conj(chirp_[j]);
    radix2(a.data(), m_, false);
    for (std::size_t k = 0; k < m_; ++k) a[k] *= chirp_spectrum_[k];
    radix2(a.data(), m_, true);
    const T inv_m = T(1) / static_cast<T>(m_);
    for (std::size_t k = 0; k < n_; ++k) {
      data[k] = std::conj(chirp_[k]) * a[k] * inv_m;
    }
    if (inverse) {
      for (std::size_t i = 0; i < n_; ++i) data[i] = std::conj(data[i]);
    }
  }

 private:
  static void init_radix2(std::size_t n, std::vector<C>& tw,
                          std::vector<std::size_t>& rev) {
    tw.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(n);
      tw[k] = C(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
    }
    rev.resize(n);
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      rev[i] = r;
    }
  }

  void radix2(C* a, std::size_t n, bool inverse) const {
    for (std::size_t i = 0; i < n; ++i) {
      if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n / len;
      for (std::size_t i = 0; i < n; i += len) {
        for (std::size_t j = 0; j < half; ++j) {
          C w = twiddle_[j * step];
          if (inverse) w = std::conj(w);
          const C u = a[i + j];
          const C v = a[i + j + half] * w;
          a[i + j] = u + v;
          a[i + j + half] = u - v;
        }
      }
    }
  }

  std::size_t n_ = 0;
  bool pow2_ = true;
  std::size_t m_ = 0;
  std::vector<C> twiddle_;
  std::vector<std::size_t> bitrev_;
  std::vector<C> chirp_;
  std::vector<C> chirp_spectrum_;
};

/// Per-thread plan cache.
template <Real T>
const Plan<T>& plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<Plan<T>>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<Plan<T>>(n);
  return *slot;
}

/// Transforms a complex buffer of logical shape `dims` along `axis`.
template <Real T>
void transform_axis(std::vector<std::complex<T>>& buf, const Shape& dims,
                    std::size_t axis, bool inverse, T scale = T(1)) {
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
  const std::size_t n = dims[axis];
  const auto& p = plan<T>(n);
  std::vector<std::complex<T>> line(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      std::complex<T>* base = buf.data() + o * n * inner + in;
      for (std::size_t k = 0; k < n; ++k) line[k] = base[k * inner];
      p.execute(line.data(), inverse);
      for (std::size_t k = 0; k < n; ++k) base[k * inner] = line[k] * scale;
    }
  }
}

template <Real T>
std::vector<std::complex<T>> to_complex(std::span<const T> interleaved) {
  std::vector<std::complex<T>> c(interleaved.size() / 2);
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = {interleaved[2 * i], interleaved[2 * i + 1]};
  }
  return c;
}

template <Real T>
std::vector<T> to_interleaved(const std::vector<std::complex<T>>& c) {
  std::vector<T> v(2 * c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    v[2 * i] = c[i].real();
    v[2 * i + 1] = c[i].imag();
  }
  return v;
}

/// Real-to-half-complex transform over the last `k` axes of a plain buffer.
/// Returns complex values of logical shape [..., n1, ..., nk/2+1].
template <Real T>
std::vector<std::complex<T>> rfftn_values(std::span<const T> x,
                                          const Shape& shape, std::size_t k) {
  const std::size_t nd = shape.size();
  const std::size_t n = shape[nd - 1];
  const std::size_t h = n / 2 + 1;
  const std::size_t rows = x.size() / n;
  std::vector<std::complex<T>> out(rows * h);
  const auto& p = plan<T>(n);
  std::vector<std::complex<T>> line(n);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) line[j] = {x[r * n + j], T(0)};
    p.execute(line.data(), false);
    std::copy_n(line.begin(), h, out.begin() + static_cast<std::ptrdiff_t>(r * h));
  }
  Shape cdims = shape;
  cdims.back() = h;
  for (std::size_t a = nd - k; a + 1 < nd; ++a) transform_axis(out, cdims, a, false);
  return out;
}

/// Inverse of rfftn_values; `cdims` is the half-complex logical shape and
/// `n` the real length of the last axis.
template <Real T>
std::vector<T> irfftn_values(std::vector<std::complex<T>> spec,
                             const Shape& cdims, std::size_t k, std::size_t n) {
  const std::size_t nd = cdims.size();
  for (std::size_t a = nd - k; a + 1 < nd; ++a) {
    transform_axis(spec, cdims, a, true, T(1) / static_cast<T>(cdims[a]));
  }
  const std::size_t h = cdims[nd - 1];
  const std::size_t rows = spec.size() / h;
  std::vector<T> out(rows * n);
  const auto& p = plan<T>(n);
  std::vector<std::complex<T>> line(n);
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::complex<T>* s = spec.data() + r * h;
    line[0] = {s[0].real(), T(0)};
    for (std::size_t j = 1; j < n; ++j) {
      if (2 * j < n) {
        line[j] = s[j];
      } else if (2 * j == n) {
        line[j] = {s[j].real(), T(0)};
      } else {
        line[j] = std::conj(s[n - j]);
      }
    }
    p.execute(line.data(), true);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = line[j].real() * inv_n;
  }
  return out;
}

}  // namespace fft

/// Real FFT over the last `k` axes: [..., n1..nk] -> [..., n1, ..., nk/2+1, 2].
template <Real T>
Tensor<T> rfftn(const Tensor<T>& x, std::size_t k) {
  if (k == 0 || k > x.ndim()) throw ShapeError("rfftn: invalid axis count");
  const Shape shape = x.shape();
  auto spec = fft::rfftn_values<T>(x.values(), shape, k);
  Shape out_shape = shape;
  const std::size_t n = shape.back();
  out_shape.back() = n / 2 + 1;
  Shape cdims = out_shape;
  out_shape.push_back(2);
  return record<T>(
      "rfftn", out_shape, fft::to_interleaved(spec), {&x},
      [cdims, k, n](BackwardContext<T>& ctx) {
        // Adjoint of the complex transforms: unscaled inverse transforms.
        auto g = fft::to_complex<T>(ctx.grad_out());
        const std::size_t nd = cdims.size();
        for (std::size_t a = nd - k; a + 1 < nd; ++a) {
          fft::transform_axis(g, cdims, a, true);
        }
        // Adjoint of the half-spectrum real transform along the last axis.
        const std::size_t h = cdims.back();
        const std::size_t rows = g.size() / h;
        const auto& p = fft::plan<T>(n);
        std::vector<std::complex<T>> line(n);
        auto& gx = ctx.grad(0);
        for (std::size_t r = 0; r < rows; ++r) {
          std::fill(line.begin(), line.end(), std::complex<T>(0));
          std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(r * h), h, line.begin());
          p.execute(line.data(), true);
          for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += line[j].real();
        }
      });
}

/// Inverse of rfftn: [..., n1, ..., h, 2] -> [..., n1, ..., n] with
/// h == n/2 + 1.
template <Real T>
Tensor<T> irfftn(const Tensor<T>& spectrum, std::size_t k, std::size_t n) {
  if (spectrum.ndim() < k + 1 || spectrum.shape().back() != 2) {
    throw ShapeError("irfftn: expects a complex tensor with trailing axis 2");
  }
  Shape cdims(spectrum.shape().begin(), spectrum.shape().end() - 1);
  if (cdims.back() != n / 2 + 1) {
    throw ShapeError("irfftn: last axis " + std::to_string(cdims.back()) +
                     " does not match n/2+1 for n=" + std::to_string(n));
  }
  auto out = fft::irfftn_values<T>(fft::to_complex<T>(spectrum.values()), cdims, k, n);
  Shape out_shape = cdims;
  out_shape.back() = n;
  return record<T>(
      "irfftn", out_shape, std::move(out), {&spectrum},
      [cdims, k, n](BackwardContext<T>& ctx) {
        const auto h_grad = ctx.grad_out();
        const std::size_t h = cdims.back();
        const std::size_t rows = h_grad.size() / n;
        std::vector<std::complex<T>> g(rows * h);
        const auto& p = fft::plan<T>(n);
        std::vector<std::complex<T>> line(n);
        const T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) line[j] = {h_grad[r * n + j], T(0)};
          p.execute(line.data(), false);
          for (std::size_t j = 0; j < h; ++j) {
            const bool edge = j == 0 || 2 * j == n;
            g[r * h + j] = line[j] * (edge ? inv_n : T(2) * inv_n);
          }
        }
        const std::size_t nd = cdims.size();
        for (std::size_t a = nd - k; a + 1 < nd; ++a) {
          fft::transform_axis(g, cdims, a, false, T(1) / static_cast<T>(cdims[a]));
        }
        ctx.accumulate(0, fft::to_interleaved(g));
      });
}

/// Elementwise complex product of equally shaped complex tensors.
template <Real T>
Tensor<T> complex_mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.shape().empty() || a.shape().back() != 2) {
    throw ShapeError("complex_mul: expects equal complex shapes");
  }
  const std::size_t n = a.numel() / 2;
  std::vector<T> out(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const T ar = a[2 * i], ai = a[2 * i + 1], br = b[2 * i], bi = b[2 * i + 1];
    out[2 * i] = ar * br - ai * bi;
    out[2 * i + 1] = ar * bi + ai * br;
  }
  Tensor<T> av = a.detached(), bv = b.detached();
  return record<T>("complex_mul", a.shape(), std::move(out), {&a, &b},
                   [av, bv, n](BackwardContext<T>& ctx) {
                     const auto g = ctx.grad_out();
                     for (int which = 0; which < 2; ++which) {
                       if (!ctx.needs(which)) continue;
                       const Tensor<T>& other = which == 0 ? bv : av;
                       auto& gx = ctx.grad(which);
                       for (std::size_t i = 0; i < n; ++i) {
                         // g * conj(other)
                         const T gr = g[2 * i], gi = g[2 * i + 1];
                         const T orr = other[2 * i], oi = other[2 * i + 1];
                         gx[2 * i] += gr * orr + gi * oi;
                         gx[2 * i + 1] += gi * orr - gr * oi;
                       }
                     }
                   });
}

/// Mode-wise complex channel mixing:
/// out[b, o, m] = sum_i x[b, i, m] * w[i, o, m], with x [B, Cin, M..., 2] and
/// w [Cin, Cout, M..., 2].
template <Real T>
Tensor<T> complex_channel_mix(const Tensor<T>& x, const Tensor<T>& w) {
  if (x.ndim() < 3 || w.ndim() != x.ndim() || x.dim(1) != w.dim(0) ||
      !std::equal(x.shape().begin() + 2, x.shape().end(), w.shape().begin() + 2)) {
    throw ShapeError("complex_channel_mix: input " + shape_string(x.shape()) +
                     " incompatible with weights " + shape_string(w.shape()));
  }
  const std::size_t nb = x.dim(0), cin = x.dim(1), cout = w.dim(1);
  const std::size_t m = x.numel() / (nb * cin * 2);
  std::vector<T> out(nb * cout * m * 2, T(0));
  const T* px = x.data();
  const T* pw = w.data();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < cin; ++i) {
      const T* xi = px + (b * cin + i) * m * 2;
      for (std::size_t o = 0; o < cout; ++o) {
        const T* wio = pw + (i * cout + o) * m * 2;
        T* ob = out.data() + (b * cout + o) * m * 2;
        for (std::size_t k = 0; k < m; ++k) {
          const T xr = xi[2 * k], xim = xi[2 * k + 1];
          const T wr = wio[2 * k], wim = wio[2 * k + 1];
          ob[2 * k] += xr * wr - xim * wim;
          ob[2 * k + 1] += xr * wim + xim * wr;
        }
      }
    }
  Shape shape = x.shape();
  shape[1] = cout;
  Tensor<T> xv = x.detached(), wv = w.detached();
  return record<T>(
      "complex_channel_mix", shape, std::move(out), {&x, &w},
      [xv, wv, nb, cin, cout, m](BackwardContext<T>& ctx) {
        const T* g = ctx.grad_out().data();
        const bool need_x = ctx.needs(0), need_w = ctx.needs(1);
        T* gx = need_x ? ctx.grad(0).data() : nullptr;
        T* gw = need_w ? ctx.grad(1).data() : nullptr;
        for (std::size_t b = 0; b < nb; ++b)
          for (std::size_t i = 0; i < cin; ++i) {
            const T* xi = xv.data() + (b * cin + i) * m * 2;
            for (std::size_t o = 0; o < cout; ++o) {
              const T* wio = wv.data() + (i * cout + o) * m * 2;
              const T* go = g + (b * cout + o) * m * 2;
              if (need_x) {
                T* gxi = gx + (b * cin + i) * m * 2;
                for (std::size_t k = 0; k < m; ++k) {
                  // g * conj(w)
                  gxi[2 * k] += go[2 * k] * wio[2 * k] + go[2 * k + 1] * wio[2 * k + 1];
                  gxi[2 * k + 1] += go[2 * k + 1] * wio[2 * k] - go[2 * k] * wio[2 * k + 1];
                }
              }
              if (need_w) {
                T* gwio = gw + (i * cout + o) * m * 2;
                for (std::size_t k = 0; k < m; ++k) {
                  // conj(x) * g
                  gwio[2 * k] += xi[2 * k] * go[2 * k] + xi[2 * k + 1] * go[2 * k + 1];
                  gwio[2 * k + 1] += xi[2 * k] * go[2 * k + 1] - xi[2 * k + 1] * go[2 * k];
                }
              }
            }
          }
      });
}

}  // namespace diano
