#include <gtest/gtest.h>

#include <random>

#include "diano/datagen.hpp"

using namespace diano;
using GF = GridField<double>;

namespace {

double max_abs(const GF& f) {
  double m = 0;
  for (double v : f.values().values()) m = std::max(m, std::abs(v));
  return m;
}

/// Streamwise shift (pixels along axis 0) maximizing the normalized
/// correlation of b against a over the overlap, searched in [0, max_shift].
/// Columns next to the inflow are skipped.
int best_shift(const GF& a, const GF& b, int max_shift, std::size_t skip) {
  const std::size_t nx = a.size(0), ny = a.size(1);
  const auto va = a.values().values(), vb = b.values().values();
  int best = 0;
  double best_c = -2;
  for (int s = 0; s <= max_shift; ++s) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = skip; i + s < nx; ++i)
      for (std::size_t j = 0; j < ny; ++j) {
        const double x = va[i * ny + j], y = vb[(i + s) * ny + j];
        ab += x * y;
        aa += x * x;
        bb += y * y;
      }
    const double c = ab / std::sqrt(aa * bb);
    if (c > best_c) {
      best_c = c;
      best = s;
    }
  }
  return best;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  return ab / std::sqrt(aa * bb);
}

GF masked(const GF& f, const GF& mask) { return f.with_values(mul(f.values(), mask.values())); }

}  // namespace

TEST(VortexStreet, ZeroSnapshotsGivesEmptyDataset) {
  VortexStreetOptions o;
  o.n_snapshots = 0;
  const auto ds = gen_vortex_street(o);
  EXPECT_TRUE(ds.fields.at("vorticity").empty());
}

TEST(VortexStreet, NormalizedToUnitMaxAbs) {
  VortexStreetOptions o;
  o.n_snapshots = 20;
  const auto ds = gen_vortex_street(o);
  const auto& w = ds.fields.at("vorticity");
  ASSERT_EQ(w.size(), 20u);
  double m = 0;
  for (const auto& f : w) {
    EXPECT_LE(max_abs(f), 1.0);
    m = std::max(m, max_abs(f));
    EXPECT_EQ(f.sizes(), (std::vector<std::size_t>{64, 64}));
  }
  EXPECT_DOUBLE_EQ(m, 1.0);
}

TEST(VortexStreet, AdvectsAtFreeStreamSpeed) {
  VortexStreetOptions o;
  o.n_snapshots = 12;
  const auto ds = gen_vortex_street(o);
  const auto& w = ds.fields.at("vorticity");
  const double hx = (o.x.max - o.x.min) / double(o.grid - 1);
  const double per_step = o.V * o.dt / hx;
  for (std::size_t s = 0; s + 1 < w.size(); ++s) {
    EXPECT_NEAR(best_shift(w[s], w[s + 1], 6, 4), std::lround(per_step), 1) << s;
  }
  // Over several snapshots the shift is large enough to resolve the speed.
  for (std::size_t lag : {5u, 10u}) {
    EXPECT_NEAR(best_shift(w[0], w[lag], 16, 4), std::lround(per_step * double(lag)), 1) << lag;
  }
}

TEST(VortexStreet, RejectsCflViolation) {
  VortexStreetOptions o;
  o.dt = 0.03;  // 0.03 * 1 / (2 / 63) = 0.945
  EXPECT_THROW(gen_vortex_street(o), Error);
}

TEST(VortexStreet, SeedDeterministic) {
  VortexStreetOptions o;
  o.grid = 32;
  o.n_snapshots = 4;
  o.dt = 0.01;
  const auto a = gen_vortex_street(o), b = gen_vortex_street(o);
  o.seed = 9;
  const auto c = gen_vortex_street(o);
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(a.fields.at("vorticity")[s].values().to_vector(), b.fields.at("vorticity")[s].values().to_vector());
  }
  EXPECT_NE(a.fields.at("vorticity")[0].values().to_vector(), c.fields.at("vorticity")[0].values().to_vector());
}

TEST(Stenosis, HundredSnapshotsPerCycle) {
  const auto ds = gen_stenosis_like(StenosisOptions{});
  EXPECT_EQ(ds.fields.at("vorticity").size(), 100u);
  EXPECT_EQ(ds.period, 100u);
  EXPECT_EQ(ds.waveform.size(), 100u);
  for (const auto& f : ds.fields.at("vorticity")) EXPECT_LE(max_abs(f), 1.0);
}

TEST(Stenosis, ConstantWaveformGivesIdenticalSnapshots) {
  StenosisOptions o;
  o.n_snapshots = 6;
  o.waveform = Waveform::constant(2.0, 10);
  const auto ds = gen_stenosis_like(o);
  const auto& w = ds.fields.at("vorticity");
  for (std::size_t s = 1; s < w.size(); ++s) EXPECT_EQ(w[s].values().to_vector(), w[0].values().to_vector());
}

TEST(Stenosis, LobeAmplitudeFollowsWaveform) {
  StenosisOptions o;
  const auto ds = gen_stenosis_like(o);
  const auto& w = ds.fields.at("vorticity");
  const std::size_t n = o.grid;
  std::vector<double> lobe_peak;
  for (const auto& f : w) {
    double m = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = n / 2; j < n; ++j) m = std::max(m, f.values()[i * n + j]);
    lobe_peak.push_back(m);
  }
  EXPECT_GT(pearson(lobe_peak, ds.waveform), 0.99);
}

TEST(Stenosis, NonPeriodicWaveformWarns) {
  StenosisOptions o;
  o.n_snapshots = 3;
  o.waveform.cycle.clear();
  for (int k = 0; k < 20; ++k) o.waveform.cycle.push_back(double(k));
  std::vector<std::string> seen;
  ScopedWarningSink sink([&](const std::string& m) { seen.push_back(m); });
  gen_stenosis_like(o);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_NE(seen[0].find("not periodic"), std::string::npos);
}

TEST(Channel, ZeroWaveformGivesZeroFields) {
  Channel3dOptions o;
  o.grid = 12;
  o.n_snapshots = 3;
  o.waveform = Waveform::constant(0.0, 5);
  const auto ds = gen_channel3d(o);
  for (const auto& role : {"u", "v", "w", "pressure"}) {
    ASSERT_EQ(ds.fields.at(role).size(), 3u);
    for (const auto& f : ds.fields.at(role)) EXPECT_EQ(max_abs(f), 0.0) << role;
  }
}

TEST(Channel, MaskMarksFluidAndGhostsAreZero) {
  Channel3dOptions o;
  o.grid = 16;
  o.n_snapshots = 4;
  const auto ds = gen_channel3d(o);
  ASSERT_TRUE(ds.mask.has_value());
  const auto m = ds.mask->values().to_vector();
  double fluid = 0;
  for (double x : m) {
    EXPECT_TRUE(x == 0.0 || x == 1.0);
    fluid += x;
  }
  const double frac = fluid / double(m.size());
  EXPECT_GT(frac, 0.0);
  EXPECT_LT(frac, 1.0);
  // Corner of the cube lies outside the channel; the centre lies in the obstruction.
  EXPECT_EQ(m.front(), 0.0);
  for (const auto& [role, list] : ds.fields) {
    for (const auto& f : list) {
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] == 0.0) {
          EXPECT_EQ(f.values()[i], 0.0);
        }
        EXPECT_GE(f.values()[i], 0.0);
        EXPECT_LE(f.values()[i], 1.0);
      }
    }
  }
}

TEST(Channel, PressureSatisfiesDiscretePoissonEquation) {
  Channel3dOptions o;
  o.grid = 16;
  o.n_snapshots = 6;
  const auto ds = gen_channel3d(o);
  const GeometryMask<double> mask(ds.mask->values().with_shape({16, 16, 16}));
  PdeConfig cfg;
  cfg.model = PdeModel::ppe_3d;
  cfg.rho = o.rho;
  const auto par = PdeParameters<double>::from(cfg);
  const std::vector<double> h(3, ds.mask->spacing(0));
  for (std::size_t s = 0; s < 6; ++s) {
    auto raw = [&](const std::string& role) {
      return masked(denormalize(ds.fields.at(role)[s], ds.normalization.at(role)), *ds.mask);
    };
    const auto u = raw("u"), v = raw("v"), w = raw("w"), p = raw("pressure");
    const auto rhs = ppe_rhs_only(u, v, w, mask, cfg, par);
    EXPECT_LT(laplace_residual(p.values(), rhs.values(), mask.values(), h), 1e-6) << s;
  }
}

TEST(Channel, ObstructionLargerThanChannelRejected) {
  Channel3dOptions o;
  o.grid = 8;
  o.obstruction_radius = 0.45;
  EXPECT_THROW(gen_channel3d(o), Error);
}

TEST(Dataset, SaveWritesManifestSidecarsAndMask) {
  const auto dir = fs::temp_directory_path() / ("diano_test_ds_" + std::to_string(std::random_device{}()));
  Channel3dOptions o;
  o.grid = 8;
  o.n_snapshots = 3;
  const auto ds = gen_channel3d(o);
  const auto m = save_dataset(dir.string(), ds, DType::float64, 4);
  const auto back = load_manifest(dir.string());
  EXPECT_EQ(back.files, m.files);
  EXPECT_EQ(back.size(), 3u);
  EXPECT_EQ(back.split_seed, 4u);
  EXPECT_EQ(back.period, 25u);
  EXPECT_TRUE(back.has("mask"));
  const auto p = load_role<double>(dir.string(), back, "pressure");
  EXPECT_EQ(p[2].values().to_vector(), ds.fields.at("pressure")[2].values().to_vector());
  const auto meta = load_sidecar((dir / back.files.at("u")[0]).string());
  EXPECT_EQ(meta.normalization.scale, ds.normalization.at("u").scale);
  EXPECT_EQ(meta.generator.at("case"), "channel3d");
  fs::remove_all(dir);
}
