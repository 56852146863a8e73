#pragma once

/// @file pde.hpp
/// @brief Differentiable PDE models solved on latent grids: vorticity
/// transport variants advanced with RK4, and the 3-D pressure Poisson
/// equation iterated with Point-Jacobi.

#include "diano/conv.hpp"
#include "diano/fdm.hpp"
#include "diano/grid_field.hpp"

namespace diano {

enum class PdeModel {
  vte_nonlinear,
  vte_linear_2d,
  vte_stokes_2d,
  vte_inviscid_2d,
  vte_linear_1d_x,
  vte_linear_1d_y,
  ppe_3d,
};

inline const char* pde_model_name(PdeModel m) {
  switch (m) {
    case PdeModel::vte_nonlinear: return "vte_nonlinear";
    case PdeModel::vte_linear_2d: return "vte_linear_2d";
    case PdeModel::vte_stokes_2d: return "vte_stokes_2d";
    case PdeModel::vte_inviscid_2d: return "vte_inviscid_2d";
    case PdeModel::vte_linear_1d_x: return "vte_linear_1d_x";
    case PdeModel::vte_linear_1d_y: return "vte_linear_1d_y";
    case PdeModel::ppe_3d: return "ppe_3d";
  }
  return "?";
}

inline PdeModel pde_model_from_name(const std::string& s) {
  for (auto m : {PdeModel::vte_nonlinear, PdeModel::vte_linear_2d, PdeModel::vte_stokes_2d,
                 PdeModel::vte_inviscid_2d, PdeModel::vte_linear_1d_x,
                 PdeModel::vte_linear_1d_y, PdeModel::ppe_3d}) {
    if (s == pde_model_name(m)) return m;
  }
  throw Error("unknown PDE model '" + s + "'");
}

inline bool is_vte(PdeModel m) { return m != PdeModel::ppe_3d; }

struct PdeConfig {
  PdeModel model = PdeModel::vte_linear_2d;
  double nu = 0.01;
  double V = 1.0;
  double rho = 1.06;
  /// Physical time covered by one latent advance.
  double dt = 0.01;
  /// RK4 substeps per advance, each of length dt / n_steps.
  std::size_t n_steps = 1;
  double jacobi_tol = 1e-6;
  std::size_t jacobi_max_iter = 150;
  /// Scheme for first derivatives (advection terms and PPE velocity
  /// gradients).
  Scheme scheme = Scheme::upwind3;
  CompactCoefficients compact{};
  /// Upwind direction used for the PPE velocity gradients.
  int ppe_bias = 1;
  /// Growth of max|omega| over one advance beyond this factor is treated
  /// as a blow-up.
  double instability_factor = 1e3;
  /// Expose nu, V and rho as trainable parameters.
  bool learnable = false;

  void validate() const {
    if (!(nu >= 0)) throw Error("PdeConfig: nu must be >= 0");
    if (is_vte(model)) {
      if (!(dt > 0)) throw Error("PdeConfig: dt must be > 0");
      if (n_steps < 1) throw Error("PdeConfig: n_steps must be >= 1");
    } else {
      if (!(jacobi_tol > 0)) throw Error("PdeConfig: jacobi_tol must be > 0");
      if (jacobi_max_iter < 1) throw Error("PdeConfig: jacobi_max_iter must be >= 1");
    }
    if (!(instability_factor > 1)) throw Error("PdeConfig: instability_factor must be > 1");
  }
};

/// Physical coefficients as scalar tensors so they can sit on a tape.
template <Real T>
struct PdeParameters {
  Tensor<T> nu, V, rho;

  static PdeParameters from(const PdeConfig& cfg) {
    return {Tensor<T>::scalar(static_cast<T>(cfg.nu)), Tensor<T>::scalar(static_cast<T>(cfg.V)),
            Tensor<T>::scalar(static_cast<T>(cfg.rho))};
  }
};

/// Raised when a latent advance blows up.
class InstabilityError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// Binary fluid (1) / wall-or-ghost (0) indicator over a spatial grid.
template <Real T>
class GeometryMask {
 public:
  GeometryMask() = default;
  explicit GeometryMask(Tensor<T> values) : values_(std::move(values)) {
    bool any = false;
    for (T v : values_.values()) {
      if (v != T(0) && v != T(1)) throw Error("GeometryMask: values must be 0 or 1");
      any = any || v == T(1);
    }
    fluid_ = any;
  }
  static GeometryMask all_fluid(Shape sizes) { return GeometryMask(Tensor<T>::ones(std::move(sizes))); }

  const Tensor<T>& values() const { return values_; }
  const Shape& sizes() const { return values_.shape(); }
  bool has_fluid() const { return fluid_; }

 private:
  Tensor<T> values_;
  bool fluid_ = false;
};

/// Block-averages the mask by `factor` and thresholds at 0.5.
template <Real T>
GeometryMask<T> downsample_mask(const GeometryMask<T>& mask, std::size_t factor) {
  const Shape sizes = mask.sizes();
  if (sizes.empty() || sizes.size() > 3) throw ShapeError("downsample_mask: 1-3 spatial axes");
  Shape wrapped{1, 1};
  wrapped.insert(wrapped.end(), sizes.begin(), sizes.end());
  const auto pooled = avg_pool(mask.values().with_shape(wrapped), {factor});
  std::vector<T> v(pooled.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = pooled[i] >= T(0.5) ? T(1) : T(0);
  return GeometryMask<T>(Tensor<T>(Shape(pooled.shape().begin() + 2, pooled.shape().end()), v));
}

namespace detail {

inline void check_vte_field(PdeModel m, std::size_t dims) {
  const bool one_d = m == PdeModel::vte_linear_1d_x || m == PdeModel::vte_linear_1d_y;
  if (dims == 2) return;
  if (dims == 1 && one_d) return;
  throw ShapeError(std::string(pde_model_name(m)) + ": cannot act on a " +
                   std::to_string(dims) + "-d field");
}

/// -V * d/dx along `axis`, upwinded by sign(V); V == 0 uses central2.
template <Real T>
Tensor<T> linear_advection(const Tensor<T>& w, std::size_t axis, double h,
                           const PdeConfig& cfg, const Tensor<T>& V) {
  const T v = V.item();
  const Scheme s = v == T(0) ? Scheme::central2 : cfg.scheme;
  const int bias = v >= T(0) ? 1 : -1;
  return neg(mul(V, ddx(w, axis, h, s, bias, cfg.compact)));
}

/// -u * d/dx with a pointwise upwind choice.
template <Real T>
Tensor<T> pointwise_advection(const Tensor<T>& w, const Tensor<T>& u, std::size_t axis,
                              double h, const PdeConfig& cfg) {
  const auto up = relu(u);
  const auto um = neg(relu(neg(u)));
  const auto dp = ddx(w, axis, h, cfg.scheme, 1, cfg.compact);
  const auto dm = ddx(w, axis, h, cfg.scheme, -1, cfg.compact);
  return neg(add(mul(up, dp), mul(um, dm)));
}

}  // namespace detail

/// d(omega)/dt for the selected vorticity-transport model. Spatial axis 0 is
/// x (streamwise) and axis 1 is y. `vel` (u, v) is required for the
/// nonlinear model and must have omega's shape.
template <Real T>
GridField<T> vte_rhs(const GridField<T>& omega, const PdeConfig& cfg,
                     const PdeParameters<T>& par,
                     const std::pair<GridField<T>, GridField<T>>* vel = nullptr) {
  const PdeModel m = cfg.model;
  if (!is_vte(m)) throw Error("vte_rhs: model is not a vorticity-transport model");
  detail::check_vte_field(m, omega.spatial_dims());
  const auto& w = omega.values();
  const std::size_t ax = 2, ay = 3;
  auto diffusion_2d = [&] {
    return mul(par.nu, add(d2dx(w, ax, omega.spacing(0)), d2dx(w, ay, omega.spacing(1))));
  };
  switch (m) {
    case PdeModel::vte_nonlinear: {
      if (!vel) throw Error("vte_rhs: nonlinear model needs a velocity field");
      const auto& [u, v] = *vel;
      if (u.values().shape() != w.shape() || v.values().shape() != w.shape()) {
        throw ShapeError("vte_rhs: velocity shape differs from vorticity");
      }
      auto adv = add(detail::pointwise_advection(w, u.values(), ax, omega.spacing(0), cfg),
                     detail::pointwise_advection(w, v.values(), ay, omega.spacing(1), cfg));
      return omega.with_values(add(adv, diffusion_2d()));
    }
    case PdeModel::vte_linear_2d: {
      auto adv = add(detail::linear_advection(w, ax, omega.spacing(0), cfg, par.V),
                     detail::linear_advection(w, ay, omega.spacing(1), cfg, par.V));
      return omega.with_values(add(adv, diffusion_2d()));
    }
    case PdeModel::vte_stokes_2d:
      return omega.with_values(diffusion_2d());
    case PdeModel::vte_inviscid_2d:
      return omega.with_values(add(detail::linear_advection(w, ax, omega.spacing(0), cfg, par.V),
                                   detail::linear_advection(w, ay, omega.spacing(1), cfg, par.V)));
    case PdeModel::vte_linear_1d_x:
    case PdeModel::vte_linear_1d_y: {
      const std::size_t a =
          (m == PdeModel::vte_linear_1d_y && omega.spatial_dims() == 2) ? 1 : 0;
      const double h = omega.spacing(a);
      auto rhs = add(detail::linear_advection(w, 2 + a, h, cfg, par.V),
                     mul(par.nu, d2dx(w, 2 + a, h)));
      return omega.with_values(rhs);
    }
    case PdeModel::ppe_3d:
      break;
  }
  throw Error("vte_rhs: unreachable");
}

/// Advances omega by cfg.dt with cfg.n_steps RK4 substeps, on tape.
template <Real T>
GridField<T> advance_vte(const GridField<T>& omega, const PdeConfig& cfg,
                         const PdeParameters<T>& par,
                         const std::pair<GridField<T>, GridField<T>>* vel = nullptr) {
  cfg.validate();
  if (!is_vte(cfg.model)) throw Error("advance_vte: model is not a vorticity-transport model");
  const T h = static_cast<T>(cfg.dt / static_cast<double>(cfg.n_steps));
  std::function<Tensor<T>(const Tensor<T>&)> f = [&](const Tensor<T>& w) {
    return vte_rhs(omega.with_values(w), cfg, par, vel).values();
  };
  Tensor<T> w = omega.values();
  for (std::size_t s = 0; s < cfg.n_steps; ++s) w = rk4_step(f, w, h);
  const T before = max_abs(omega.values());
  const T after = max_abs(w);
  if (after > static_cast<T>(cfg.instability_factor) * before) {
    throw InstabilityError("advance_vte: max|omega| grew from " + std::to_string(before) +
                           " to " + std::to_string(after));
  }
  return omega.with_values(w);
}

namespace detail {

template <Real T>
void check_ppe_inputs(const GridField<T>& u, const GridField<T>& v, const GridField<T>& w,
                      const GeometryMask<T>& mask) {
  if (u.spatial_dims() != 3) throw ShapeError("pressure Poisson: velocity must be 3-d");
  check_same_grid(u, v, "pressure Poisson");
  check_same_grid(u, w, "pressure Poisson");
  if (u.values().shape() != v.values().shape() || u.values().shape() != w.values().shape()) {
    throw ShapeError("pressure Poisson: velocity components differ in shape");
  }
  if (mask.sizes() != u.sizes()) throw ShapeError("pressure Poisson: mask grid differs");
  if (!mask.has_fluid()) throw Error("pressure Poisson: mask has no fluid points");
}

template <Real T>
Tensor<T> broadcast_mask(const GeometryMask<T>& mask) {
  Shape s{1, 1};
  s.insert(s.end(), mask.sizes().begin(), mask.sizes().end());
  return mask.values().with_shape(s);
}

}  // namespace detail

/// mask * -rho [(u_x)^2 + (v_y)^2 + (w_z)^2 + 2 (u_y v_x + u_z w_x + v_z w_y)].
template <Real T>
GridField<T> ppe_rhs_only(const GridField<T>& u, const GridField<T>& v, const GridField<T>& w,
                          const GeometryMask<T>& mask, const PdeConfig& cfg,
                          const PdeParameters<T>& par) {
  detail::check_ppe_inputs(u, v, w, mask);
  auto d = [&](const GridField<T>& f, std::size_t axis) {
    return ddx(f.values(), 2 + axis, f.spacing(axis), cfg.scheme, cfg.ppe_bias, cfg.compact);
  };
  const auto ux = d(u, 0), uy = d(u, 1), uz = d(u, 2);
  const auto vx = d(v, 0), vy = d(v, 1), vz = d(v, 2);
  const auto wx = d(w, 0), wy = d(w, 1), wz = d(w, 2);
  auto normal = add(add(square(ux), square(vy)), square(wz));
  auto cross = add(add(mul(uy, vx), mul(uz, wx)), mul(vz, wy));
  auto bracket = add(normal, scale(cross, T(2)));
  auto rhs = mul(detail::broadcast_mask(mask), neg(mul(par.rho, bracket)));
  return u.with_values(rhs);
}

template <Real T>
struct PpeSolution {
  GridField<T> pressure;
  GridField<T> rhs;
  /// L-infinity residual after each sweep.
  std::vector<double> residuals;
  bool converged = false;
};

/// Solves lap(p) = RHS by Point-Jacobi from p = 0 until the residual drops
/// below cfg.jacobi_tol or cfg.jacobi_max_iter sweeps ran. Every sweep is
/// recorded, so gradients flow through the full iteration.
template <Real T>
PpeSolution<T> solve_ppe(const GridField<T>& u, const GridField<T>& v, const GridField<T>& w,
                         const GeometryMask<T>& mask, const PdeConfig& cfg,
                         const PdeParameters<T>& par) {
  if (!(cfg.jacobi_tol > 0) || cfg.jacobi_max_iter < 1) {
    throw Error("solve_ppe: need jacobi_tol > 0 and jacobi_max_iter >= 1");
  }
  PpeSolution<T> sol;
  sol.rhs = ppe_rhs_only(u, v, w, mask, cfg, par);
  const std::vector<double> h{u.spacing(0), u.spacing(1), u.spacing(2)};
  const auto& rhs = sol.rhs.values();
  Tensor<T> p = Tensor<T>::zeros(rhs.shape());
  for (std::size_t it = 0; it < cfg.jacobi_max_iter; ++it) {
    p = jacobi_sweep(p, rhs, mask.values(), h);
    const double r = laplace_residual(p, rhs, mask.values(), h);
    sol.residuals.push_back(r);
    if (r < cfg.jacobi_tol) {
      sol.converged = true;
      break;
    }
  }
  sol.pressure = u.with_values(p);
  return sol;
}

}  // namespace diano
