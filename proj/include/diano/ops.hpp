#pragma once

/// @file ops.hpp
/// @brief Differentiable elementwise, reduction, linear-algebra and layout ops.

#include <cmath>
#include <numbers>
#include <optional>

#include "diano/tensor.hpp"

namespace diano {

namespace detail {

/// Result shape under trailing-axis broadcasting.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    const std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    const std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " +
                       shape_string(a) + " with " + shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// Maps each flat index of `out` to the flat index of an operand of shape
/// `in` broadcast against it.
inline std::vector<std::size_t> broadcast_index(const Shape& in,
                                                const Shape& out) {
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(n);
  const std::size_t offset = out.size() - in.size();
  const auto in_strides = strides_of(in);
  std::vector<std::size_t> coord(out.size(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t flat = 0;
    for (std::size_t d = offset; d < out.size(); ++d) {
      const std::size_t dim = in[d - offset];
      if (dim != 1) flat += coord[d] * in_strides[d - offset];
    }
    idx[k] = flat;
    for (std::size_t d = out.size(); d-- > 0;) {
      if (++coord[d] < out[d]) break;
      coord[d] = 0;
    }
  }
  return idx;
}

enum class BinaryKind { add, sub, mul, div };

template <Real T>
Tensor<T> binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  static constexpr const char* names[] = {"add", "sub", "mul", "div"};
  const char* name = names[static_cast<int>(kind)];
  auto apply = [kind](T x, T y) -> T {
    switch (kind) {
      case BinaryKind::add: return x + y;
      case BinaryKind::sub: return x - y;
      case BinaryKind::mul: return x * y;
      case BinaryKind::div: return x / y;
    }
    return T(0);
  };
  const Shape shape = broadcast_shape(a.shape(), b.shape(), name);
  const std::size_t n = shape_numel(shape);
  std::vector<T> out(n);
  const bool same = a.shape() == shape && b.shape() == shape;
  std::vector<std::size_t> ia, ib;
  if (same) {
    const T* pa = a.data();
    const T* pb = b.data();
    switch (kind) {
      case BinaryKind::add: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i]; break;
      case BinaryKind::sub: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i]; break;
      case BinaryKind::mul: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i]; break;
      case BinaryKind::div: for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] / pb[i]; break;
    }
  } else {
    ia = broadcast_index(a.shape(), shape);
    ib = broadcast_index(b.shape(), shape);
    for (std::size_t i = 0; i < n; ++i) out[i] = apply(a[ia[i]], b[ib[i]]);
  }
  Tensor<T> av = a.detached(), bv = b.detached();
  return record<T>(
      name, shape, std::move(out), {&a, &b},
      [kind, av, bv, ia = std::move(ia), ib = std::move(ib),
       same](BackwardContext<T>& ctx) {
        const auto g = ctx.grad_out();
        const std::size_t n = g.size();
        auto idx_a = [&](std::size_t i) { return same ? i : ia[i]; };
        auto idx_b = [&](std::size_t i) { return same ? i : ib[i]; };
        if (ctx.needs(0)) {
          auto& ga = ctx.grad(0);
          for (std::size_t i = 0; i < n; ++i) {
            T d = g[i];
            if (kind == BinaryKind::mul) d *= bv[idx_b(i)];
            if (kind == BinaryKind::div) d /= bv[idx_b(i)];
            ga[idx_a(i)] += d;
          }
        }
        if (ctx.needs(1)) {
          auto& gb = ctx.grad(1);
          for (std::size_t i = 0; i < n; ++i) {
            T d = g[i];
            switch (kind) {
              case BinaryKind::add: break;
              case BinaryKind::sub: d = -d; break;
              case BinaryKind::mul: d *= av[idx_a(i)]; break;
              case BinaryKind::div: {
                const T y = bv[idx_b(i)];
                d *= -av[idx_a(i)] / (y * y);
                break;
              }
            }
            gb[idx_b(i)] += d;
          }
        }
      });
}

/// Elementwise unary op given value and derivative functors.
template <Real T, class F, class DF>
Tensor<T> unary(const char* name, const Tensor<T>& x, F f, DF df) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const T* px = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(px[i]);
  Tensor<T> xv = x.detached();
  return record<T>(name, x.shape(), std::move(out), {&x},
                   [xv, df](BackwardContext<T>& ctx) {
                     const auto g = ctx.grad_out();
                     auto& gx = ctx.grad(0);
                     const T* px = xv.data();
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       gx[i] += g[i] * df(px[i]);
                     }
                   });
}

}  // namespace detail

template <Real T>
using BackwardContext = detail::BackwardContext<T>;

// ---------------------------------------------------------------------------
// Elementwise arithmetic (trailing-axis broadcasting)

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinaryKind::add, a, b);
}
template <Real T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinaryKind::sub, a, b);
}
template <Real T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinaryKind::mul, a, b);
}
template <Real T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(detail::BinaryKind::div, a, b);
}

template <Real T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <Real T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <Real T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

/// x * s + c for constants s and c.
template <Real T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift = T(0)) {
  const std::size_t n = x.numel();
  std::vector<T> out(n);
  const T* px = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = px[i] * scale + shift;
  return record<T>("affine", x.shape(), std::move(out), {&x},
                   [scale](BackwardContext<T>& ctx) {
                     const auto g = ctx.grad_out();
                     auto& gx = ctx.grad(0);
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       gx[i] += g[i] * scale;
                     }
                   });
}

template <Real T>
Tensor<T> scale(const Tensor<T>& x, T s) { return affine(x, s); }
template <Real T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) { return affine(x, T(1), c); }
template <Real T>
Tensor<T> neg(const Tensor<T>& x) { return affine(x, T(-1)); }
template <Real T>
Tensor<T> operator-(const Tensor<T>& x) { return neg(x); }
template <Real T>
Tensor<T> operator*(T s, const Tensor<T>& x) { return affine(x, s); }

template <Real T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary<T>("square", x, [](T v) { return v * v; },
                          [](T v) { return T(2) * v; });
}
template <Real T>
Tensor<T> sin(const Tensor<T>& x) {
  return detail::unary<T>("sin", x, [](T v) { return std::sin(v); },
                          [](T v) { return std::cos(v); });
}
template <Real T>
Tensor<T> cos(const Tensor<T>& x) {
  return detail::unary<T>("cos", x, [](T v) { return std::cos(v); },
                          [](T v) { return -std::sin(v); });
}
template <Real T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>("exp", x, [](T v) { return std::exp(v); },
                          [](T v) { return std::exp(v); });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { identity, relu, silu, gelu };

template <Real T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                          [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <Real T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary<T>(
      "silu", x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

/// Exact (erf) GELU.
template <Real T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return detail::unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

template <Real T>
Tensor<T> activate(const Tensor<T>& x, Activation a) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return relu(x);
    case Activation::silu: return silu(x);
    case Activation::gelu: return gelu(x);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Reductions

template <Real T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  const std::size_t n = x.numel();
  return record<T>("sum", Shape{}, {s}, {&x}, [n](BackwardContext<T>& ctx) {
    const T g = ctx.grad_out()[0];
    auto& gx = ctx.grad(0);
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

template <Real T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sum over one axis, removing it.
template <Real T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.ndim()) throw ShapeError("sum_axis: axis out of range");
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  std::vector<T> out(outer * inner, T(0));
  const T* px = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i)
        out[o * inner + i] += px[(o * n + k) * inner + i];
  Shape os = s;
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  return record<T>("sum_axis", os, std::move(out), {&x},
                   [outer, n, inner](BackwardContext<T>& ctx) {
                     const auto g = ctx.grad_out();
                     auto& gx = ctx.grad(0);
                     for (std::size_t o = 0; o < outer; ++o)
                       for (std::size_t k = 0; k < n; ++k)
                         for (std::size_t i = 0; i < inner; ++i)
                           gx[(o * n + k) * inner + i] += g[o * inner + i];
                   });
}

/// Mean squared difference over all elements.
template <Real T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse: shape " + shape_string(pred.shape()) + " vs " +
                     shape_string(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {

/// C[m,n] += A[m,k] * B[k,n], all row-major.
template <Real T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      if (aip == T(0)) continue;
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

/// C[k,n] += A[m,k]^T * B[m,n].
template <Real T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      if (aip == T(0)) continue;
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

template <Real T>
std::vector<T> transpose_copy(std::size_t rows, std::size_t cols, const T* a) {
  std::vector<T> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

}  // namespace detail

/// [m,k] x [k,n] -> [m,n], or batched [b,m,k] x [b,k,n] -> [b,m,n].
template <Real T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.ndim() == 3;
  if (!((a.ndim() == 2 && b.ndim() == 2) || (a.ndim() == 3 && b.ndim() == 3))) {
    throw ShapeError("matmul: expects two 2-d or two 3-d tensors");
  }
  const std::size_t nb = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.ndim() - 2), k = a.dim(a.ndim() - 1);
  const std::size_t k2 = b.dim(b.ndim() - 2), n = b.dim(b.ndim() - 1);
  if (k != k2 || (batched && b.dim(0) != nb)) {
    throw ShapeError("matmul: incompatible " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()));
  }
  std::vector<T> out(nb * m * n, T(0));
  for (std::size_t q = 0; q < nb; ++q) {
    detail::gemm_nn(m, k, n, a.data() + q * m * k, b.data() + q * k * n,
                    out.data() + q * m * n);
  }
  Shape shape = batched ? Shape{nb, m, n} : Shape{m, n};
  Tensor<T> av = a.detached(), bv = b.detached();
  return record<T>("matmul", shape, std::move(out), {&a, &b},
                   [av, bv, nb, m, k, n](BackwardContext<T>& ctx) {
                     const T* g = ctx.grad_out().data();
                     for (std::size_t q = 0; q < nb; ++q) {
                       const T* gq = g + q * m * n;
                       if (ctx.needs(0)) {
                         // dA = G B^T
                         auto bt = detail::transpose_copy(k, n, bv.data() + q * k * n);
                         detail::gemm_nn(m, n, k, gq, bt.data(),
                                         ctx.grad(0).data() + q * m * k);
                       }
                       if (ctx.needs(1)) {
                         // dB = A^T G
                         detail::gemm_tn(m, k, n, av.data() + q * m * k, gq,
                                         ctx.grad(1).data() + q * k * n);
                       }
                     }
                   });
}

template <Real T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.ndim() != 2) throw ShapeError("transpose: expects a 2-d tensor");
  const std::size_t r = x.dim(0), c = x.dim(1);
  return record<T>("transpose", Shape{c, r},
                   detail::transpose_copy(r, c, x.data()), {&x},
                   [r, c](BackwardContext<T>& ctx) {
                     auto back = detail::transpose_copy(c, r, ctx.grad_out().data());
                     ctx.accumulate(0, back);
                   });
}

/// Fully connected layer on the last axis: y = x W^T + b with W [out, in].
template <Real T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight,
                const std::type_identity_t<Tensor<T>>* bias = nullptr) {
  if (weight.ndim() != 2 || x.ndim() < 1 || x.shape().back() != weight.dim(1)) {
    throw ShapeError("dense: input " + shape_string(x.shape()) +
                     " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
  if (bias && (bias->ndim() != 1 || bias->dim(0) != out_f)) {
    throw ShapeError("dense: bias must have shape [out]");
  }
  const std::size_t rows = x.numel() / in_f;
  auto wt = detail::transpose_copy(out_f, in_f, weight.data());
  std::vector<T> out(rows * out_f, T(0));
  if (bias) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(bias->data(), bias->data() + out_f, out.data() + r * out_f);
  }
  detail::gemm_nn(rows, in_f, out_f, x.data(), wt.data(), out.data());
  Shape shape = x.shape();
  shape.back() = out_f;
  Tensor<T> xv = x.detached(), wv = weight.detached();
  Tensor<T> none;
  return record<T>(
      "dense", shape, std::move(out), {&x, &weight, bias ? bias : &none},
      [xv, wv, rows, in_f, out_f](BackwardContext<T>& ctx) {
        const T* g = ctx.grad_out().data();
        if (ctx.needs(0)) {
          detail::gemm_nn(rows, out_f, in_f, g, wv.data(), ctx.grad(0).data());
        }
        if (ctx.needs(1)) {
          detail::gemm_tn(rows, out_f, in_f, g, xv.data(), ctx.grad(1).data());
        }
        if (ctx.needs(2)) {
          auto& gb = ctx.grad(2);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[r * out_f + o];
        }
      });
}

/// Pointwise channel mixing on [B, Cin, ...] with W [Cout, Cin], bias [Cout].
template <Real T>
Tensor<T> channel_linear(const Tensor<T>& x, const Tensor<T>& weight,
                         const std::type_identity_t<Tensor<T>>* bias = nullptr) {
  if (x.ndim() < 2 || weight.ndim() != 2 || weight.dim(1) != x.dim(1)) {
    throw ShapeError("channel_linear: input " + shape_string(x.shape()) +
                     " incompatible with weight " +
                     shape_string(weight.shape()));
  }
  const std::size_t nb = x.dim(0), cin = x.dim(1), cout = weight.dim(0);
  if (bias && (bias->ndim() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("channel_linear: bias must have shape [Cout]");
  }
  const std::size_t s = x.numel() / (nb * cin);
  std::vector<T> out(nb * cout * s, T(0));
  for (std::size_t b = 0; b < nb; ++b) {
    T* ob = out.data() + b * cout * s;
    if (bias) {
      for (std::size_t o = 0; o < cout; ++o)
        std::fill(ob + o * s, ob + (o + 1) * s, (*bias)[o]);
    }
    detail::gemm_nn(cout, cin, s, weight.data(), x.data() + b * cin * s, ob);
  }
  Shape shape = x.shape();
  shape[1] = cout;
  Tensor<T> xv = x.detached(), wv = weight.detached();
  Tensor<T> none;
  return record<T>(
      "channel_linear", shape, std::move(out),
      {&x, &weight, bias ? bias : &none},
      [xv, wv, nb, cin, cout, s](BackwardContext<T>& ctx) {
        const T* g = ctx.grad_out().data();
        for (std::size_t b = 0; b < nb; ++b) {
          const T* gb = g + b * cout * s;
          if (ctx.needs(0)) {
            detail::gemm_tn(cout, cin, s, wv.data(), gb,
                            ctx.grad(0).data() + b * cin * s);
          }
          if (ctx.needs(1)) {
            // dW[o,i] += sum_s g[o,s] x[i,s]
            auto& gw = ctx.grad(1);
            const T* xb = xv.data() + b * cin * s;
            for (std::size_t o = 0; o < cout; ++o)
              for (std::size_t i = 0; i < cin; ++i) {
                T acc = T(0);
                const T* go = gb + o * s;
                const T* xi = xb + i * s;
                for (std::size_t k = 0; k < s; ++k) acc += go[k] * xi[k];
                gw[o * cin + i] += acc;
              }
          }
          if (ctx.needs(2)) {
            auto& gbias = ctx.grad(2);
            for (std::size_t o = 0; o < cout; ++o) {
              T acc = T(0);
              for (std::size_t k = 0; k < s; ++k) acc += gb[o * s + k];
              gbias[o] += acc;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Layout

template <Real T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " +
                     shape_string(shape));
  }
  return record<T>("reshape", std::move(shape), x.to_vector(), {&x},
                   [](BackwardContext<T>& ctx) {
                     ctx.accumulate(0, ctx.grad_out());
                   });
}

namespace detail {
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};
inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}
}  // namespace detail

/// Gathers positions `index` along `axis`; backward scatters (adds) back.
template <Real T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis,
                       std::vector<std::size_t> index) {
  if (axis >= x.ndim()) throw ShapeError("index_select: axis out of range");
  const auto sp = detail::split_at(x.shape(), axis);
  for (auto i : index) {
    if (i >= sp.n) throw ShapeError("index_select: index out of range");
  }
  const std::size_t m = index.size();
  std::vector<T> out(sp.outer * m * sp.inner);
  const T* px = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < m; ++k)
      std::copy_n(px + (o * sp.n + index[k]) * sp.inner, sp.inner,
                  out.data() + (o * m + k) * sp.inner);
  Shape shape = x.shape();
  shape[axis] = m;
  return record<T>("index_select", shape, std::move(out), {&x},
                   [sp, index = std::move(index)](BackwardContext<T>& ctx) {
                     const auto g = ctx.grad_out();
                     auto& gx = ctx.grad(0);
                     const std::size_t m = index.size();
                     for (std::size_t o = 0; o < sp.outer; ++o)
                       for (std::size_t k = 0; k < m; ++k)
                         for (std::size_t i = 0; i < sp.inner; ++i)
                           gx[(o * sp.n + index[k]) * sp.inner + i] +=
                               g[(o * m + k) * sp.inner + i];
                   });
}

/// Places x's entries along `axis` at `index` in a zero tensor of length
/// `size`; the adjoint of index_select for distinct indices.
template <Real T>
Tensor<T> index_scatter(const Tensor<T>& x, std::size_t axis,
                        std::vector<std::size_t> index, std::size_t size) {
  if (axis >= x.ndim() || x.dim(axis) != index.size()) {
    throw ShapeError("index_scatter: index length must match axis size");
  }
  for (auto i : index) {
    if (i >= size) throw ShapeError("index_scatter: index out of range");
  }
  const auto sp = detail::split_at(x.shape(), axis);
  const std::size_t m = index.size();
  std::vector<T> out(sp.outer * size * sp.inner, T(0));
  const T* px = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[(o * size + index[k]) * sp.inner + i] +=
            px[(o * m + k) * sp.inner + i];
  Shape shape = x.shape();
  shape[axis] = size;
  return record<T>("index_scatter", shape, std::move(out), {&x},
                   [sp, size, index = std::move(index)](BackwardContext<T>& ctx) {
                     const auto g = ctx.grad_out();
                     auto& gx = ctx.grad(0);
                     const std::size_t m = index.size();
                     for (std::size_t o = 0; o < sp.outer; ++o)
                       for (std::size_t k = 0; k < m; ++k)
                         for (std::size_t i = 0; i < sp.inner; ++i)
                           gx[(o * m + k) * sp.inner + i] +=
                               g[(o * size + index[k]) * sp.inner + i];
                   });
}

/// Contiguous range [begin, end) along `axis`.
template <Real T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end) {
  if (axis >= x.ndim() || begin > end || end > x.dim(axis)) {
    throw ShapeError("slice: invalid range on " + shape_string(x.shape()));
  }
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return index_select(x, axis, std::move(idx));
}

/// Zero padding along `axis`.
template <Real T>
Tensor<T> pad(const Tensor<T>& x, std::size_t axis, std::size_t before,
              std::size_t after) {
  if (axis >= x.ndim()) throw ShapeError("pad: axis out of range");
  std::vector<std::size_t> idx(x.dim(axis));
  std::iota(idx.begin(), idx.end(), before);
  return index_scatter(x, axis, std::move(idx), x.dim(axis) + before + after);
}

template <Real T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::size_t total = 0;
  std::vector<std::size_t> lengths;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = ref;
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat: shape mismatch off the concat axis");
    lengths.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  const auto sp = detail::split_at(ref, axis);
  std::vector<T> out(sp.outer * total * sp.inner);
  std::size_t off = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const std::size_t len = lengths[q];
    const T* pp = parts[q].data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(pp + o * len * sp.inner, len * sp.inner,
                  out.data() + (o * total + off) * sp.inner);
    off += len;
  }
  Shape shape = ref;
  shape[axis] = total;
  std::vector<const Tensor<T>*> ins;
  for (const auto& p : parts) ins.push_back(&p);
  return record_many<T>(
      "concat", shape, std::move(out), ins,
      [sp, total, lengths](BackwardContext<T>& ctx) {
        const auto g = ctx.grad_out();
        std::size_t off = 0;
        for (std::size_t q = 0; q < lengths.size(); ++q) {
          const std::size_t len = lengths[q];
          if (ctx.needs(q)) {
            auto& gq = ctx.grad(q);
            for (std::size_t o = 0; o < sp.outer; ++o)
              for (std::size_t k = 0; k < len * sp.inner; ++k)
                gq[o * len * sp.inner + k] += g[(o * total + off) * sp.inner + k];
          }
          off += len;
        }
      });
}

// ---------------------------------------------------------------------------
// Helpers without tape semantics

template <Real T>
T max_abs(const Tensor<T>& x) {
  T m = T(0);
  for (T v : x.values()) m = std::max(m, std::abs(v));
  return m;
}

template <Real T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: shape mismatch");
  T m = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Stacks equally shaped tensors along a new leading axis (no tape record).
template <Real T>
Tensor<T> stack_values(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack_values: no inputs");
  Shape shape = parts.front().shape();
  std::vector<T> out;
  out.reserve(parts.size() * parts.front().numel());
  for (const auto& p : parts) {
    if (p.shape() != shape) throw ShapeError("stack_values: shape mismatch");
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  shape.insert(shape.begin(), parts.size());
  return Tensor<T>(shape, std::move(out));
}

template <Real To, Real From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<To>(x[i]);
  return Tensor<To>(x.shape(), std::move(v));
}

}  // namespace diano
