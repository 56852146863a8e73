#pragma once

/// @file datagen.hpp
/// @brief Synthetic flow datasets: a shed vortex street integrated with the
/// nonlinear vorticity-transport solver, a pulsatile two-lobe vorticity
/// field, and a 3-d obstructed channel with Poisson-solved pressure.

#include <cstdio>
#include <numbers>

#include "diano/io.hpp"

namespace diano {

/// Fields produced by a generator, already normalized, in float64.
struct GeneratedDataset {
  std::string name;
  std::map<std::string, std::vector<GridField<double>>> fields;
  std::map<std::string, Normalization> normalization;
  std::optional<GridField<double>> mask;
  double dt = 0.0;
  std::vector<double> waveform;
  std::size_t period = 0;
  Json generator = Json::object();
};

/// Writes snapshots, sidecars and manifest.json into `dir`.
inline DatasetManifest save_dataset(const std::string& dir, const GeneratedDataset& ds,
                                    DType dtype = DType::float32, std::uint64_t split_seed = 0) {
  fs::create_directories(dir);
  DatasetManifest m;
  m.name = ds.name;
  m.dt = ds.dt;
  m.waveform = ds.waveform;
  m.period = ds.period;
  m.dtype = dtype;
  m.split_seed = split_seed;
  m.generator = ds.generator;
  auto write = [&](const std::string& file, const GridField<double>& f) {
    const auto path = (fs::path(dir) / file).string();
    if (dtype == DType::float32) {
      save_snapshot(path, GridField<float>(cast<float>(f.values()), f.extents()));
    } else {
      save_snapshot(path, f);
    }
  };
  for (const auto& [role, list] : ds.fields) {
    auto& names = m.files[role];
    const auto norm = ds.normalization.count(role) ? ds.normalization.at(role) : Normalization{};
    m.normalization[role] = norm;
    for (std::size_t i = 0; i < list.size(); ++i) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s_%04zu.diaf", role.c_str(), i);
      write(buf, list[i]);
      save_sidecar((fs::path(dir) / buf).string(), SnapshotMeta{norm, ds.dt, ds.generator});
      names.push_back(buf);
    }
  }
  if (ds.mask) {
    write("mask.diaf", *ds.mask);
    m.files["mask"] = {"mask.diaf"};
  }
  write_json_file((fs::path(dir) / kManifestName).string(), to_json(m));
  return m;
}

namespace detail {

inline GridField<double> field_from(const std::vector<std::size_t>& sizes,
                                    const std::vector<Extent>& extents, std::vector<double> v) {
  Shape s{1, 1};
  s.insert(s.end(), sizes.begin(), sizes.end());
  return GridField<double>(Tensor<double>(s, std::move(v)), extents);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Vortex street

struct VortexStreetOptions {
  std::size_t grid = 64;
  /// Streamwise (axis 0) and cross-stream (axis 1) extents.
  Extent x{0.0, 2.0};
  Extent y{-1.0, 1.0};
  double reynolds = 100.0;
  std::size_t n_snapshots = 50;
  /// Time between snapshots.
  double dt = 0.02;
  double V = 1.0;
  /// Streamwise distance between vortices of one row.
  double spacing = 0.5;
  /// Cross-stream offset of each row from the centerline.
  double row_offset = 0.15;
  double core = 0.07;
  /// Peak cross-stream velocity of the wake perturbation, relative to V.
  double wake_amplitude = 0.1;
  std::uint64_t seed = 0;
};

/// Staggered counter-rotating Gaussian vortex train advected at V and
/// spreading viscously. Closed form used for the initial state and the
/// inflow strip.
inline double vortex_train(double x, double y, double t, const VortexStreetOptions& o, double phase) {
  const double nu = 1.0 / o.reynolds;
  const double s2 = o.core * o.core + 2.0 * nu * t;
  const double amp = o.core * o.core / s2;
  // Images far enough upstream and downstream to cover the domain.
  const double x0 = o.x.min - 2 * o.spacing, x1 = o.x.max + 2 * o.spacing;
  double w = 0.0;
  for (int row = 0; row < 2; ++row) {
    const double yc = row == 0 ? o.row_offset : -o.row_offset;
    const double sign = row == 0 ? 1.0 : -1.0;
    const double shift = phase + (row == 0 ? 0.0 : 0.5 * o.spacing) + o.V * t;
    const double kmin = std::floor((x0 - shift) / o.spacing), kmax = std::ceil((x1 - shift) / o.spacing);
    for (double k = kmin; k <= kmax; k += 1.0) {
      const double dx = x - (shift + k * o.spacing), dy = y - yc;
      w += sign * amp * std::exp(-(dx * dx + dy * dy) / (2 * s2));
    }
  }
  return w;
}

/// Integrates the nonlinear vorticity transport with a prescribed steady
/// divergence-free velocity (uniform V plus a spatially periodic wake
/// undulation), holding the inflow strip at the closed-form train.
/// Snapshots are normalized to [-1, 1] by the global max |omega|.
inline GeneratedDataset gen_vortex_street(const VortexStreetOptions& o) {
  if (o.grid < 8) throw Error("gen_vortex_street: grid must be >= 8");
  if (!(o.reynolds > 0) || !(o.dt > 0) || !(o.V > 0)) {
    throw Error("gen_vortex_street: Re, dt and V must be positive");
  }
  const std::size_t n = o.grid;
  const std::vector<Extent> ext{o.x, o.y};
  const double hx = (o.x.max - o.x.min) / double(n - 1), hy = (o.y.max - o.y.min) / double(n - 1);
  const double cfl = o.dt * o.V / hx;
  if (cfl > 0.8) {
    throw Error("gen_vortex_street: CFL " + std::to_string(cfl) + " exceeds 0.8 (dt*V/dx)");
  }
  const double nu = 1.0 / o.reynolds;
  Rng rng(o.seed);
  const double phase = std::uniform_real_distribution<double>(0.0, o.spacing)(rng);

  // psi = V y + A sin(k x) exp(-y^2 / (2 d^2)); u = psi_y, v = -psi_x.
  const double kx = 2 * std::numbers::pi / o.spacing, delta = 3 * o.row_offset;
  const double A = o.wake_amplitude * o.V / kx;
  std::vector<double> u(n * n), v(n * n), w0(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = o.x.min + hx * double(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double y = o.y.min + hy * double(j);
      const double g = std::exp(-y * y / (2 * delta * delta));
      u[i * n + j] = o.V + A * std::sin(kx * x) * g * (-y / (delta * delta));
      v[i * n + j] = -A * kx * std::cos(kx * x) * g;
      w0[i * n + j] = vortex_train(x, y, 0.0, o, phase);
    }
  }
  const std::pair<GridField<double>, GridField<double>> vel{detail::field_from({n, n}, ext, u),
                                                            detail::field_from({n, n}, ext, v)};
  PdeConfig cfg;
  cfg.model = PdeModel::vte_nonlinear;
  cfg.nu = nu;
  // Substeps keep advective CFL <= 0.4 and the diffusion number small.
  const double h_min = std::min(hx, hy);
  const std::size_t n_sub = std::max<std::size_t>(
      {1, static_cast<std::size_t>(std::ceil(o.dt * 1.2 * o.V / (0.4 * h_min))),
       static_cast<std::size_t>(std::ceil(o.dt * nu / (0.2 * h_min * h_min)))});
  cfg.dt = o.dt / double(n_sub);
  const auto par = PdeParameters<double>::from(cfg);
  constexpr std::size_t inflow_cols = 3;

  GeneratedDataset ds;
  ds.name = "vortex_street";
  ds.dt = o.dt;
  std::vector<GridField<double>> raw;
  GridField<double> w = detail::field_from({n, n}, ext, w0);
  double t = 0.0;
  for (std::size_t s = 0; s < o.n_snapshots; ++s) {
    if (s > 0) {
      for (std::size_t k = 0; k < n_sub; ++k) {
        w = advance_vte(w, cfg, par, &vel);
        t += cfg.dt;
        auto vals = w.values().to_vector();
        for (std::size_t i = 0; i < inflow_cols; ++i)
          for (std::size_t j = 0; j < n; ++j)
            vals[i * n + j] = vortex_train(o.x.min + hx * double(i), o.y.min + hy * double(j), t, o, phase);
        w = w.with_values(Tensor<double>(w.values().shape(), std::move(vals)));
      }
    }
    raw.push_back(w);
  }
  auto [normed, norm] = normalize(raw, NormKind::maxabs);
  ds.fields["vorticity"] = std::move(normed);
  ds.normalization["vorticity"] = norm;
  ds.generator = Json{{"case", "vortex"},
                      {"grid", n},
                      {"reynolds", o.reynolds},
                      {"dt", o.dt},
                      {"V", o.V},
                      {"substeps", n_sub},
                      {"seed", o.seed}};
  return ds;
}

// ---------------------------------------------------------------------------
// Waveforms

/// One period of an inflow signal sampled once per snapshot.
struct Waveform {
  std::vector<double> cycle;

  double at(std::size_t frame) const { return cycle.at(frame % cycle.size()); }
  std::size_t period() const { return cycle.size(); }

  /// mean + a1 sin(2 pi f) + a2 sin(4 pi f + phase2), f = frame / period.
  static Waveform two_harmonic(std::size_t period, double mean = 1.0, double a1 = 0.5,
                               double a2 = 0.25, double phase2 = 0.6) {
    if (period < 2) throw Error("waveform: period must be >= 2 frames");
    Waveform w;
    for (std::size_t k = 0; k < period; ++k) {
      const double f = double(k) / double(period);
      w.cycle.push_back(mean + a1 * std::sin(2 * std::numbers::pi * f) +
                        a2 * std::sin(4 * std::numbers::pi * f + phase2));
    }
    return w;
  }

  static Waveform constant(double value, std::size_t period = 1) {
    return Waveform{std::vector<double>(period, value)};
  }

  /// False when wrapping from the last sample to the first jumps by more
  /// than three times the largest step inside the cycle.
  bool wraps_smoothly() const {
    if (cycle.size() < 2) return true;
    double step = 0.0;
    for (std::size_t k = 1; k < cycle.size(); ++k) step = std::max(step, std::abs(cycle[k] - cycle[k - 1]));
    return std::abs(cycle.front() - cycle.back()) <= 3.0 * step + 1e-12;
  }
};

// ---------------------------------------------------------------------------
// Pulsatile two-lobe field

struct StenosisOptions {
  std::size_t grid = 64;
  Extent x{0.0, 4.0};
  Extent y{-1.0, 1.0};
  std::size_t n_snapshots = 100;
  Waveform waveform = Waveform::two_harmonic(100);
  /// Lobe centres (x, +-y) downstream of the throat, and core size.
  double lobe_x = 1.5;
  double lobe_y = 0.35;
  double core = 0.25;
  /// Streamwise stretch of the lobes per unit of normalized inflow.
  double stretch = 0.6;
};

/// Two counter-rotating vorticity lobes whose strength follows the inflow
/// waveform and which elongate streamwise as the flow rate rises. Values
/// at the lobe centres are exactly proportional to the waveform.
inline GeneratedDataset gen_stenosis_like(const StenosisOptions& o) {
  if (o.grid < 8) throw Error("gen_stenosis_like: grid must be >= 8");
  if (o.waveform.cycle.empty()) throw Error("gen_stenosis_like: empty waveform");
  if (!o.waveform.wraps_smoothly()) warn("stenosis waveform is not periodic: the cycle does not wrap smoothly");
  const std::size_t n = o.grid;
  const std::vector<Extent> ext{o.x, o.y};
  const double hx = (o.x.max - o.x.min) / double(n - 1), hy = (o.y.max - o.y.min) / double(n - 1);
  double qmax = 0.0;
  for (double q : o.waveform.cycle) qmax = std::max(qmax, std::abs(q));
  GeneratedDataset ds;
  ds.name = "stenosis_like";
  ds.dt = 1.0 / double(o.waveform.period());
  ds.period = o.waveform.period();
  std::vector<GridField<double>> raw;
  for (std::size_t s = 0; s < o.n_snapshots; ++s) {
    const double q = o.waveform.at(s);
    ds.waveform.push_back(q);
    const double rel = qmax > 0 ? std::abs(q) / qmax : 0.0;
    const double sx = o.core * (1.0 + o.stretch * rel), sy = o.core;
    // Lobes stretch downstream only, so the centre stays fixed.
    std::vector<double> w(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = o.x.min + hx * double(i);
      const double dx = x - o.lobe_x;
      const double ex = dx > 0 ? dx / sx : dx / o.core;
      for (std::size_t j = 0; j < n; ++j) {
        const double y = o.y.min + hy * double(j);
        const double up = (y - o.lobe_y) / sy, dn = (y + o.lobe_y) / sy;
        w[i * n + j] = q * (std::exp(-0.5 * (ex * ex + up * up)) - std::exp(-0.5 * (ex * ex + dn * dn)));
      }
    }
    raw.push_back(detail::field_from({n, n}, ext, std::move(w)));
  }
  auto [normed, norm] = normalize(raw, NormKind::maxabs);
  ds.fields["vorticity"] = std::move(normed);
  ds.normalization["vorticity"] = norm;
  ds.generator = Json{{"case", "stenosis"}, {"grid", n}, {"period", o.waveform.period()}};
  return ds;
}

// ---------------------------------------------------------------------------
// Obstructed 3-d channel

struct Channel3dOptions {
  std::size_t grid = 32;
  std::size_t n_snapshots = 50;
  Waveform waveform = Waveform::two_harmonic(25);
  /// Channel along axis 0 of the unit cube, circular section centred in
  /// (y, z), and a spherical obstruction on the axis.
  double channel_radius = 0.4;
  double obstruction_radius = 0.15;
  double obstruction_x = 0.5;
  /// Peak radial deflection speed around the obstruction, relative to the
  /// centreline speed.
  double deflection = 0.6;
  double rho = 1.06;
  double jacobi_tol = 1e-9;
  std::size_t jacobi_max_iter = 100000;
};

/// Raw (unnormalized) fields of the channel at unit flow rate.
struct ChannelFields {
  GridField<double> u, v, w, p;
  GeometryMask<double> mask;
  PpeSolution<double> ppe;
};

/// Poiseuille-like profile slowed and deflected around the obstruction;
/// ghost points (outside the wall or inside the obstruction) are zero.
/// Pressure comes from solve_ppe on the same grid and mask.
inline ChannelFields channel3d_unit_fields(const Channel3dOptions& o) {
  if (o.grid < 8) throw Error("gen_channel3d: grid must be >= 8");
  if (!(o.obstruction_radius < o.channel_radius)) {
    throw Error("gen_channel3d: obstruction radius must be smaller than the channel radius");
  }
  if (!(o.channel_radius > 0 && o.channel_radius <= 0.5)) {
    throw Error("gen_channel3d: channel radius must be in (0, 0.5]");
  }
  const std::size_t n = o.grid;
  const double h = 1.0 / double(n - 1);
  const std::vector<Extent> ext(3, Extent{0.0, 1.0});
  const std::size_t N = n * n * n;
  std::vector<double> u(N), v(N), w(N), m(N);
  const double R = o.channel_radius, rs = o.obstruction_radius, ell = 2 * rs;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = h * double(i), dx = x - o.obstruction_x;
    for (std::size_t j = 0; j < n; ++j) {
      const double y = h * double(j) - 0.5;
      for (std::size_t k = 0; k < n; ++k) {
        const double z = h * double(k) - 0.5;
        const std::size_t id = (i * n + j) * n + k;
        const double r2 = y * y + z * z, d2 = dx * dx + r2;
        const bool fluid = r2 < R * R && d2 > rs * rs;
        if (!fluid) continue;
        m[id] = 1.0;
        const double profile = 1.0 - r2 / (R * R);
        const double blocked = std::exp(-(d2 - rs * rs) / (ell * ell));
        const double bump = -dx / ell * std::exp(-dx * dx / (2 * ell * ell));
        u[id] = profile * (1.0 - blocked);
        v[id] = o.deflection * profile * bump * y / R;
        w[id] = o.deflection * profile * bump * z / R;
      }
    }
  }
  ChannelFields c{detail::field_from({n, n, n}, ext, u), detail::field_from({n, n, n}, ext, v),
                  detail::field_from({n, n, n}, ext, w), {},
                  GeometryMask<double>(Tensor<double>({n, n, n}, m)), {}};
  PdeConfig cfg;
  cfg.model = PdeModel::ppe_3d;
  cfg.rho = o.rho;
  cfg.jacobi_tol = o.jacobi_tol;
  cfg.jacobi_max_iter = o.jacobi_max_iter;
  c.ppe = solve_ppe(c.u, c.v, c.w, c.mask, cfg, PdeParameters<double>::from(cfg));
  if (!c.ppe.converged) {
    throw NumericError("gen_channel3d: pressure solve did not reach tolerance " +
                       std::to_string(o.jacobi_tol));
  }
  c.p = c.ppe.pressure;
  return c;
}

/// Velocities scale with the waveform q(t) and pressure with q(t)^2, which
/// keeps every snapshot an exact solution of the same discrete pressure
/// equation. Fields are normalized to [0, 1] per role and ghost points are
/// zeroed after normalization.
inline GeneratedDataset gen_channel3d(const Channel3dOptions& o) {
  if (o.waveform.cycle.empty()) throw Error("gen_channel3d: empty waveform");
  if (!o.waveform.wraps_smoothly()) warn("channel waveform is not periodic: the cycle does not wrap smoothly");
  const auto unit = channel3d_unit_fields(o);
  GeneratedDataset ds;
  ds.name = "channel3d";
  ds.dt = 1.0 / double(o.waveform.period());
  ds.period = o.waveform.period();
  std::map<std::string, std::vector<GridField<double>>> raw;
  for (std::size_t s = 0; s < o.n_snapshots; ++s) {
    const double q = o.waveform.at(s);
    ds.waveform.push_back(q);
    raw["u"].push_back(q * unit.u);
    raw["v"].push_back(q * unit.v);
    raw["w"].push_back(q * unit.w);
    raw["pressure"].push_back((q * q) * unit.p);
  }
  const Tensor<double> mask = unit.mask.values().with_shape(unit.u.values().shape());
  for (auto& [role, list] : raw) {
    auto [normed, norm] = normalize(list, NormKind::minmax);
    for (auto& f : normed) f = f.with_values(Tensor<double>(f.values().shape(), [&] {
      auto v = f.values().to_vector();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
      return v;
    }()));
    ds.fields[role] = std::move(normed);
    ds.normalization[role] = norm;
  }
  ds.mask = unit.u.with_values(mask);
  ds.generator = Json{{"case", "channel3d"},
                      {"grid", o.grid},
                      {"channel_radius", o.channel_radius},
                      {"obstruction_radius", o.obstruction_radius},
                      {"rho", o.rho},
                      {"ppe_sweeps", unit.ppe.residuals.size()},
                      {"ppe_residual", unit.ppe.residuals.back()}};
  return ds;
}

}  // namespace diano
