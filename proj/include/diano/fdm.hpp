#pragma once

/// @file fdm.hpp
/// @brief Finite-difference operators on uniform grids, the Thomas solver,
/// a classical RK4 step and one Point-Jacobi sweep.
///
/// Every operator here acts along one axis of a tensor and is linear in its
/// input, so its backward rule is the transpose of the same stencil.

#include <functional>

#include "diano/ops.hpp"

namespace diano {

enum class Scheme { upwind3, central2, central4, compact };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::upwind3: return "upwind3";
    case Scheme::central2: return "central2";
    case Scheme::central4: return "central4";
    case Scheme::compact: return "compact";
  }
  return "?";
}

inline Scheme scheme_from_name(const std::string& s) {
  if (s == "upwind3") return Scheme::upwind3;
  if (s == "central2") return Scheme::central2;
  if (s == "central4") return Scheme::central4;
  if (s == "compact") return Scheme::compact;
  throw Error("unknown finite-difference scheme '" + s + "'");
}

/// Formal interior order of accuracy.
inline int scheme_order(Scheme s) {
  switch (s) {
    case Scheme::upwind3: return 3;
    case Scheme::central2: return 2;
    case Scheme::central4: return 4;
    case Scheme::compact: return 4;
  }
  return 0;
}

/// Interior relation of the compact first derivative:
///   alpha f'_{i-1} + f'_i + alpha f'_{i+1} = a (f_{i+1} - f_{i-1}) / (2 dx).
/// The defaults give the fourth-order Pade scheme.
struct CompactCoefficients {
  double alpha = 0.25;
  double a = 1.5;
};

/// Solves a tridiagonal system. sub[0] and sup[n-1] are ignored.
template <Real T>
std::vector<T> thomas_solve(std::span<const T> sub, std::span<const T> diag,
                            std::span<const T> sup, std::span<const T> rhs) {
  const std::size_t n = diag.size();
  if (sub.size() != n || sup.size() != n || rhs.size() != n) {
    throw ShapeError("thomas_solve: band and rhs lengths differ");
  }
  std::vector<T> c(n), d(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T m = diag[i] - (i ? sub[i] * c[i - 1] : T(0));
    if (m == T(0)) throw NumericError("thomas_solve: zero pivot");
    c[i] = i + 1 < n ? sup[i] / m : T(0);
    d[i] = (rhs[i] - (i ? sub[i] * d[i - 1] : T(0))) / m;
  }
  for (std::size_t i = n - 1; i-- > 0;) d[i] -= c[i] * d[i + 1];
  return d;
}

namespace detail {

/// A linear map on lines of length n: out = A^{-1} B in, with B sparse and
/// A tridiagonal (identity when `sub` is empty).
struct LineOperator {
  std::size_t n = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> rows;
  std::vector<double> sub, diag, sup;

  template <Real T>
  void apply(std::vector<T>& line, std::vector<T>& scratch, bool transpose) const {
    scratch.assign(n, T(0));
    if (!transpose) {
      for (std::size_t i = 0; i < n; ++i) {
        T acc = T(0);
        for (auto [j, w] : rows[i]) acc += static_cast<T>(w) * line[j];
        scratch[i] = acc;
      }
      if (!sub.empty()) scratch = solve<T>(scratch, false);
      line.swap(scratch);
    } else {
      if (!sub.empty()) line = solve<T>(line, true);
      for (std::size_t i = 0; i < n; ++i)
        for (auto [j, w] : rows[i]) scratch[j] += static_cast<T>(w) * line[i];
      line.swap(scratch);
    }
  }

  template <Real T>
  std::vector<T> solve(const std::vector<T>& rhs, bool transpose) const {
    std::vector<T> a(n), b(n), c(n);
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = static_cast<T>(diag[i]);
      if (!transpose) {
        a[i] = static_cast<T>(sub[i]);
        c[i] = static_cast<T>(sup[i]);
      } else {
        a[i] = i ? static_cast<T>(sup[i - 1]) : T(0);
        c[i] = i + 1 < n ? static_cast<T>(sub[i + 1]) : T(0);
      }
    }
    return thomas_solve<T>(a, b, c, rhs);
  }
};

/// Second-order one-sided first derivative at the line ends.
inline void one_sided_ends(LineOperator& op, double h) {
  const std::size_t n = op.n;
  op.rows[0] = {{0, -1.5 / h}, {1, 2.0 / h}, {2, -0.5 / h}};
  op.rows[n - 1] = {{n - 1, 1.5 / h}, {n - 2, -2.0 / h}, {n - 3, 0.5 / h}};
}

inline void central2_row(LineOperator& op, std::size_t i, double h) {
  op.rows[i] = {{i - 1, -0.5 / h}, {i + 1, 0.5 / h}};
}

inline LineOperator first_derivative_operator(std::size_t n, double h, Scheme scheme,
                                              int bias, const CompactCoefficients& cc) {
  LineOperator op;
  op.n = n;
  op.rows.resize(n);
  if (n < 3) throw ShapeError("ddx: need at least 3 points along the axis");
  one_sided_ends(op, h);
  for (std::size_t i = 1; i + 1 < n; ++i) central2_row(op, i, h);
  switch (scheme) {
    case Scheme::central2:
      break;
    case Scheme::central4:
      for (std::size_t i = 2; i + 2 < n; ++i) {
        op.rows[i] = {{i - 2, 1.0 / (12 * h)}, {i - 1, -8.0 / (12 * h)},
                      {i + 1, 8.0 / (12 * h)}, {i + 2, -1.0 / (12 * h)}};
      }
      break;
    case Scheme::upwind3:
      if (bias >= 0) {
        // (2 f_{i+1} + 3 f_i - 6 f_{i-1} + f_{i-2}) / (6 h)
        for (std::size_t i = 2; i + 1 < n; ++i) {
          op.rows[i] = {{i - 2, 1.0 / (6 * h)}, {i - 1, -6.0 / (6 * h)},
                        {i, 3.0 / (6 * h)}, {i + 1, 2.0 / (6 * h)}};
        }
      } else {
        for (std::size_t i = 1; i + 2 < n; ++i) {
          op.rows[i] = {{i + 2, -1.0 / (6 * h)}, {i + 1, 6.0 / (6 * h)},
                        {i, -3.0 / (6 * h)}, {i - 1, -2.0 / (6 * h)}};
        }
      }
      break;
    case Scheme::compact:
      op.sub.assign(n, 0.0);
      op.diag.assign(n, 1.0);
      op.sup.assign(n, 0.0);
      for (std::size_t i = 1; i + 1 < n; ++i) {
        op.sub[i] = op.sup[i] = cc.alpha;
        op.rows[i] = {{i - 1, -cc.a / (2 * h)}, {i + 1, cc.a / (2 * h)}};
      }
      break;
  }
  return op;
}

inline LineOperator second_derivative_operator(std::size_t n, double h) {
  LineOperator op;
  op.n = n;
  op.rows.resize(n);
  const double s = 1.0 / (h * h);
  if (n < 3) throw ShapeError("d2dx: need at least 3 points along the axis");
  if (n == 3) {
    for (auto& r : op.rows) r = {{0, s}, {1, -2 * s}, {2, s}};
    return op;
  }
  for (std::size_t i = 1; i + 1 < n; ++i) op.rows[i] = {{i - 1, s}, {i, -2 * s}, {i + 1, s}};
  op.rows[0] = {{0, 2 * s}, {1, -5 * s}, {2, 4 * s}, {3, -s}};
  op.rows[n - 1] = {{n - 1, 2 * s}, {n - 2, -5 * s}, {n - 3, 4 * s}, {n - 4, -s}};
  return op;
}

template <Real T>
std::vector<T> apply_along_axis(std::span<const T> x, const AxisSplit& sp,
                                const LineOperator& op, bool transpose) {
  std::vector<T> out(x.size());
  std::vector<T> line(sp.n), scratch(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      line.resize(sp.n);
      for (std::size_t k = 0; k < sp.n; ++k) line[k] = x[base + k * sp.inner];
      op.apply(line, scratch, transpose);
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] = line[k];
    }
  return out;
}

template <Real T>
Tensor<T> apply_line_operator(const char* name, const Tensor<T>& x, std::size_t axis,
                              LineOperator op) {
  if (axis >= x.ndim()) throw ShapeError(std::string(name) + ": axis out of range");
  const auto sp = split_at(x.shape(), axis);
  auto out = apply_along_axis<T>(x.values(), sp, op, false);
  return record<T>(name, x.shape(), std::move(out), {&x},
                   [sp, op = std::move(op)](BackwardContext<T>& ctx) {
                     ctx.accumulate(0, apply_along_axis<T>(ctx.grad_out(), sp, op, true));
                   });
}

}  // namespace detail

/// First derivative along `axis` with grid spacing h. `bias` selects the
/// upwind direction for Scheme::upwind3 (+1 uses more points behind, for
/// positive advection speeds); other schemes ignore it.
template <Real T>
Tensor<T> ddx(const Tensor<T>& x, std::size_t axis, double h, Scheme scheme,
              int bias = 1, const CompactCoefficients& cc = {}) {
  if (!(h > 0)) throw Error("ddx: spacing must be positive");
  return detail::apply_line_operator(
      "ddx", x, axis, detail::first_derivative_operator(x.dim(axis), h, scheme, bias, cc));
}

/// Second derivative along `axis`: 3-point central interior, 4-point
/// one-sided second-order closures at the ends.
template <Real T>
Tensor<T> d2dx(const Tensor<T>& x, std::size_t axis, double h) {
  if (!(h > 0)) throw Error("d2dx: spacing must be positive");
  return detail::apply_line_operator("d2dx", x, axis,
                                     detail::second_derivative_operator(x.dim(axis), h));
}

/// One classical fourth-order Runge-Kutta step of y' = f(y).
template <Real T>
Tensor<T> rk4_step(const std::function<Tensor<T>(const Tensor<T>&)>& f,
                   const Tensor<T>& y, T dt) {
  const Tensor<T> k1 = f(y);
  const Tensor<T> k2 = f(add(y, scale(k1, dt / 2)));
  const Tensor<T> k3 = f(add(y, scale(k2, dt / 2)));
  const Tensor<T> k4 = f(add(y, scale(k3, dt)));
  const Tensor<T> incr = add(add(k1, scale(k2, T(2))), add(scale(k3, T(2)), k4));
  return add(y, scale(incr, dt / 6));
}

namespace detail {

/// Sum over the 2d axis neighbours (i +- 1 along each trailing spatial axis)
/// weighted by 1/h_a^2; neighbours outside the grid count as zero. The map is
/// symmetric, so it is also its own transpose.
template <Real T>
std::vector<T> neighbour_sum(std::span<const T> p, const Shape& shape,
                             const std::vector<double>& h) {
  const std::size_t d = h.size();
  const std::size_t nd = shape.size();
  std::vector<T> out(p.size(), T(0));
  for (std::size_t a = 0; a < d; ++a) {
    const std::size_t axis = nd - d + a;
    const auto sp = split_at(shape, axis);
    const T w = static_cast<T>(1.0 / (h[a] * h[a]));
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k) {
        const std::size_t row = (o * sp.n + k) * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) {
          T acc = T(0);
          if (k > 0) acc += p[row - sp.inner + i];
          if (k + 1 < sp.n) acc += p[row + sp.inner + i];
          out[row + i] += w * acc;
        }
      }
  }
  return out;
}

inline double jacobi_diagonal(const std::vector<double>& h) {
  double d = 0;
  for (double v : h) d += 2.0 / (v * v);
  return d;
}

}  // namespace detail

/// One Point-Jacobi sweep for lap(p) = rhs with homogeneous Dirichlet data
/// outside the grid and p forced to zero where mask == 0:
///   p_new = mask * (sum_a (p[i+1] + p[i-1]) / h_a^2 - rhs) / sum_a 2 / h_a^2.
/// The trailing h.size() axes of p are spatial; mask broadcasts over the rest.
template <Real T>
Tensor<T> jacobi_sweep(const Tensor<T>& p, const Tensor<T>& rhs, const Tensor<T>& mask,
                       const std::vector<double>& h) {
  if (p.shape() != rhs.shape()) throw ShapeError("jacobi_sweep: p and rhs shapes differ");
  if (h.empty() || h.size() > p.ndim()) throw ShapeError("jacobi_sweep: bad spacing rank");
  const std::size_t inner = shape_numel(Shape(p.shape().end() - h.size(), p.shape().end()));
  if (mask.numel() != inner) throw ShapeError("jacobi_sweep: mask must cover the spatial grid");
  bool any = false;
  for (T m : mask.values()) {
    if (m != T(0) && m != T(1)) throw Error("jacobi_sweep: mask must be 0/1 valued");
    any = any || m == T(1);
  }
  if (!any) throw Error("jacobi_sweep: mask has no fluid points");
  const T inv_d = static_cast<T>(1.0 / detail::jacobi_diagonal(h));
  auto nb = detail::neighbour_sum<T>(p.values(), p.shape(), h);
  std::vector<T> out(p.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mask[i % inner] * (nb[i] - rhs[i]) * inv_d;
  }
  Tensor<T> mv = mask.detached();
  const Shape shape = p.shape();
  return record<T>("jacobi_sweep", shape, std::move(out), {&p, &rhs},
                   [mv, shape, h, inv_d, inner](BackwardContext<T>& ctx) {
                     const auto g = ctx.grad_out();
                     std::vector<T> mg(g.size());
                     for (std::size_t i = 0; i < g.size(); ++i) mg[i] = mv[i % inner] * g[i];
                     if (ctx.needs(1)) {
                       auto& gr = ctx.grad(1);
                       for (std::size_t i = 0; i < g.size(); ++i) gr[i] -= mg[i] * inv_d;
                     }
                     if (ctx.needs(0)) {
                       auto nb = detail::neighbour_sum<T>(mg, shape, h);
                       auto& gp = ctx.grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) gp[i] += nb[i] * inv_d;
                     }
                   });
}

/// L-infinity norm of mask * (lap(p) - rhs), using the same discrete
/// Laplacian as jacobi_sweep. Not recorded.
template <Real T>
double laplace_residual(const Tensor<T>& p, const Tensor<T>& rhs, const Tensor<T>& mask,
                        const std::vector<double>& h) {
  const std::size_t inner = mask.numel();
  const double diag = detail::jacobi_diagonal(h);
  auto nb = detail::neighbour_sum<T>(p.values(), p.shape(), h);
  double r = 0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    if (mask[i % inner] == T(0)) continue;
    const double lap = static_cast<double>(nb[i]) - diag * static_cast<double>(p[i]);
    r = std::max(r, std::abs(lap - static_cast<double>(rhs[i])));
  }
  return r;
}

}  // namespace diano
