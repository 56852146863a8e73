#include <gtest/gtest.h>

#include <random>

#include "diano/grad_check.hpp"
#include "diano/models.hpp"

using namespace diano;
using TD = Tensor<double>;
using GF = GridField<double>;
using MD = Model<double>;

namespace {

TD random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return TD(std::move(shape), std::move(v));
}

void expect_grad_ok(const GradCheckReport& r) {
  EXPECT_TRUE(r.passed) << "max rel err " << r.max_rel_error << " over " << r.checked;
  for (std::size_t i = 0; i < std::min<std::size_t>(r.failures.size(), 6); ++i) {
    const auto& f = r.failures[i];
    ADD_FAILURE() << "input " << f.input << "[" << f.index << "] analytic " << f.analytic
                  << " numeric " << f.numeric;
  }
}

ModelSpec small_spec(Variant v, std::vector<std::size_t> grid, std::size_t cr = 4) {
  ModelSpec s;
  s.variant = v;
  s.grid = std::move(grid);
  s.compression_ratio = cr;
  s.width = 4;
  s.fourier_modes = 3;
  s.seed = 11;
  return s;
}

/// Zeroes every bias so zero input maps to zero.
void zero_biases(ParamStore<double>& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.names()[i].ends_with(".bias")) s.values()[i] = TD::zeros(s.values()[i].shape());
  }
}

/// Mean squared error of `model` against a target, differentiable in the
/// parameters.
TD objective(const MD& model, const std::vector<GF>& in, const TD& target,
             const std::vector<TD>& params) {
  const auto y = model.forward(in, params);
  const auto d = sub(y.values(), target);
  return mean(mul(d, d));
}

/// Deep models have parameters whose gradients are many orders below the
/// loss, so probe with a wider step to keep rounding noise under tol.
GradCheckOptions model_check_options() {
  GradCheckOptions opt;
  opt.eps = 1e-3;
  opt.max_entries_per_input = 16;
  return opt;
}

}  // namespace

TEST(ModelSpec, Validation) {
  auto s = small_spec(Variant::static_ae, {16, 16}, 3);
  EXPECT_THROW(s.validate(), Error);
  s = small_spec(Variant::static_ae, {18, 16}, 4);
  EXPECT_THROW(s.validate(), ShapeError);
  s = small_spec(Variant::geometric, {16, 16});
  s.collapse_axis = 1;
  s.pde.model = PdeModel::vte_linear_1d_y;
  EXPECT_THROW(s.validate(), Error);
  s.pde.model = PdeModel::vte_linear_1d_x;
  EXPECT_NO_THROW(s.validate());
  s = small_spec(Variant::fusion, {16, 16, 16});
  EXPECT_THROW(s.validate(), Error);  // pde model still the 2-d default
  s.pde.model = PdeModel::ppe_3d;
  EXPECT_NO_THROW(s.validate());
  s = small_spec(Variant::cnn_ae, {20, 20});
  EXPECT_THROW(s.validate(), ShapeError);
  EXPECT_EQ(variant_from_name("fusion"), Variant::fusion);
  EXPECT_THROW(variant_from_name("nope"), Error);
}

TEST(Encode, LatentSizeFollowsCompressionRatio) {
  for (auto [cr, expect] : {std::pair<std::size_t, std::size_t>{4, 64}, {16, 16}}) {
    auto s = small_spec(Variant::static_ae, {256, 256}, cr);
    s.width = 2;
    s.fourier_modes = 2;
    MD m(s);
    const GF x = GF::unit(random_tensor({1, 1, 256, 256}, 1));
    const auto z = m.encode(x, m.params().values());
    EXPECT_EQ(z.values().shape(), (Shape{1, 1, expect, expect}));
    const auto y = m.decode(z, m.params().values(), x.extents());
    EXPECT_EQ(y.values().shape(), x.values().shape());
  }
}

TEST(Encode, IndivisibleInputRejected) {
  MD m(small_spec(Variant::static_ae, {}, 4));
  EXPECT_THROW(m.encode(GF::unit(TD::zeros({1, 1, 18, 16})), m.params().values()), ShapeError);
  EXPECT_THROW(m.encode(GF::unit(TD::zeros({1, 2, 16, 16})), m.params().values()), ShapeError);
}

TEST(StaticModel, ZeroInputZeroBiasesGiveZero) {
  MD m(small_spec(Variant::static_ae, {16, 16}));
  zero_biases(m.params());
  const GF x = GF::unit(TD::zeros({2, 1, 16, 16}));
  const auto z = m.encode(x, m.params().values());
  EXPECT_EQ(max_abs(z.values()), 0.0);
  const auto y = m.forward({x});
  EXPECT_EQ(max_abs(y.values()), 0.0);
}

TEST(StaticModel, ExtentsAndShapePreserved) {
  MD m(small_spec(Variant::static_ae, {}));
  const GF x(random_tensor({2, 1, 32, 16}, 3), {{0.0, 2.0}, {-1.0, 1.0}});
  const auto y = m.forward({x});
  EXPECT_EQ(y.values().shape(), x.values().shape());
  EXPECT_EQ(y.extents(), x.extents());
}

TEST(StaticModel, ParameterCountNearReference) {
  ModelSpec s;
  s.fourier_modes = 8;
  s.compression_ratio = 4;
  s.width = 32;
  s.grid = {256, 256};
  MD m(s);
  const double n = static_cast<double>(m.parameter_count());
  EXPECT_GT(n, 0.8 * 1.2e6);
  EXPECT_LT(n, 1.2 * 1.2e6);
}

TEST(StaticModel, DeterministicInitialisation) {
  MD a(small_spec(Variant::static_ae, {16, 16}));
  MD b(small_spec(Variant::static_ae, {16, 16}));
  ASSERT_EQ(a.params().size(), b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].to_vector(), b.params()[i].to_vector());
  }
  auto s = small_spec(Variant::static_ae, {16, 16});
  s.seed = 12;
  MD c(s);
  EXPECT_NE(a.params()[0].to_vector(), c.params()[0].to_vector());
}

TEST(TemporalModel, ZeroStepEqualsStaticExactly) {
  auto s = small_spec(Variant::temporal, {16, 16});
  s.pde.model = PdeModel::vte_linear_2d;
  MD m(s);
  const auto& p = m.params().values();
  const GF x = GF::unit(random_tensor({1, 1, 16, 16}, 5));
  const auto z = m.encode(x, p);
  // PdeConfig rejects dt = 0, so take the zero-length RK4 step directly.
  const auto par = m.pde_parameters(p);
  std::function<TD(const TD&)> f = [&](const TD& w) {
    return vte_rhs(z.with_values(w), s.pde, par).values();
  };
  const auto y = m.decode(z.with_values(rk4_step(f, z.values(), 0.0)), p, x.extents());
  EXPECT_EQ(y.values().to_vector(), m.forward_static(x, p).values().to_vector());
}

TEST(TemporalModel, TinyStepMatchesStatic) {
  for (auto model : {PdeModel::vte_linear_2d, PdeModel::vte_stokes_2d, PdeModel::vte_inviscid_2d,
                     PdeModel::vte_linear_1d_x, PdeModel::vte_linear_1d_y}) {
    auto s = small_spec(Variant::temporal, {16, 16});
    s.pde.model = model;
    MD m(s);
    m.pde_config().dt = 1e-12;
    const GF x = GF::unit(random_tensor({1, 1, 16, 16}, 6));
    const auto a = m.forward({x});
    const auto b = m.forward_static(x, m.params().values());
    EXPECT_LT(max_abs_diff(a.values(), b.values()), 1e-6) << pde_model_name(model);
  }
}

TEST(TemporalModel, LearnablePdeParametersReceiveGradient) {
  auto s = small_spec(Variant::temporal, {16, 16});
  s.pde.model = PdeModel::vte_linear_2d;
  s.pde.learnable = true;
  s.pde.dt = 0.05;
  MD m(s);
  const auto i_nu = m.params().index_of("pde.nu");
  const auto i_V = m.params().index_of("pde.V");
  EXPECT_EQ(m.params()[i_nu][0], s.pde.nu);
  Tape<double> tape;
  std::vector<TD> p;
  for (const auto& v : m.params().values()) p.push_back(tape.watch(v));
  const GF x = GF::unit(random_tensor({1, 1, 16, 16}, 7));
  const TD target = random_tensor({1, 1, 16, 16}, 8);
  const auto g = tape.backward(objective(m, {x}, target, p));
  EXPECT_NE(g.of(p[i_nu])[0], 0.0);
  EXPECT_NE(g.of(p[i_V])[0], 0.0);
  EXPECT_NE(g.of(p[0])[0], 0.0);
}

TEST(GeometricModel, CollapsesOneAxis) {
  auto s = small_spec(Variant::geometric, {32, 16});
  s.collapse_axis = 1;
  s.pde.model = PdeModel::vte_linear_1d_x;
  MD m(s);
  const GF x = GF::unit(random_tensor({2, 1, 32, 16}, 9));
  const auto z = m.encode(x, m.params().values());
  EXPECT_EQ(z.values().shape(), (Shape{2, 1, 32}));
  EXPECT_EQ(m.forward({x}).values().shape(), x.values().shape());

  s.collapse_axis = 0;
  s.pde.model = PdeModel::vte_linear_1d_y;
  MD m2(s);
  EXPECT_EQ(m2.encode(x, m2.params().values()).values().shape(), (Shape{2, 1, 16}));
  EXPECT_EQ(m2.forward({x}).values().shape(), x.values().shape());
}

TEST(GeometricModel, FullSizeLatentLength) {
  auto s = small_spec(Variant::geometric, {256, 256});
  s.width = 2;
  s.fourier_modes = 2;
  s.pde.model = PdeModel::vte_linear_1d_x;
  MD m(s);
  const GF x = GF::unit(random_tensor({1, 1, 256, 256}, 10));
  EXPECT_EQ(m.encode(x, m.params().values()).values().shape(), (Shape{1, 1, 256}));
}

TEST(GeometricModel, ZeroInputZeroBiasesGiveZero) {
  auto s = small_spec(Variant::geometric, {16, 16});
  s.pde.model = PdeModel::vte_linear_1d_x;
  MD m(s);
  zero_biases(m.params());
  const GF x = GF::unit(TD::zeros({1, 1, 16, 16}));
  EXPECT_EQ(max_abs(m.encode(x, m.params().values()).values()), 0.0);
  EXPECT_EQ(max_abs(m.forward({x}).values()), 0.0);
}

TEST(FusionModel, ShapesAndMaskRequirement) {
  auto s = small_spec(Variant::fusion, {32, 32, 32}, 2);
  s.pde.model = PdeModel::ppe_3d;
  s.width = 2;
  s.fourier_modes = 2;
  s.pde.jacobi_max_iter = 5;
  MD m(s);
  std::vector<GF> in;
  for (int k = 0; k < 3; ++k) in.push_back(GF::unit(random_tensor({1, 1, 32, 32, 32}, 20 + k)));
  EXPECT_THROW(m.forward(in), Error);
  m.set_mask(GeometryMask<double>::all_fluid({32, 32, 32}));
  EXPECT_EQ(m.encode(in[1], m.params().values(), 1).values().shape(), (Shape{1, 1, 16, 16, 16}));
  EXPECT_EQ(m.forward(in).values().shape(), (Shape{1, 1, 32, 32, 32}));
  in[2] = GF::unit(TD::zeros({1, 1, 16, 32, 32}));
  EXPECT_THROW(m.forward(in), ShapeError);
  EXPECT_THROW(m.forward({in[0]}), ShapeError);
}

TEST(FusionModel, EncodersAreIndependent) {
  auto s = small_spec(Variant::fusion, {8, 8, 8}, 2);
  s.pde.model = PdeModel::ppe_3d;
  MD m(s);
  const auto& names = m.params().names();
  const auto a = m.params()[m.params().index_of("enc0.collapse.weight")].to_vector();
  const auto b = m.params()[m.params().index_of("enc1.collapse.weight")].to_vector();
  EXPECT_NE(a, b);
  EXPECT_EQ(std::count_if(names.begin(), names.end(),
                          [](const auto& n) { return n.ends_with(".lift.0.weight"); }),
            3);
}

TEST(FusionModel, ZeroVelocitiesDecodeZeroLatent) {
  for (bool lap : {true, false}) {
    auto s = small_spec(Variant::fusion, {8, 8, 8}, 2);
    s.pde.model = PdeModel::ppe_3d;
    s.ppe_laplacian = lap;
    MD m(s);
    m.set_mask(GeometryMask<double>::all_fluid({8, 8, 8}));
    const GF zero = GF::unit(TD::zeros({1, 1, 8, 8, 8}));
    zero_biases(m.params());
    const auto y = m.forward({zero, zero, zero});
    const auto d0 = m.decode(GF::unit(TD::zeros({1, 1, 4, 4, 4})), m.params().values(),
                             zero.extents());
    EXPECT_EQ(y.values().to_vector(), d0.values().to_vector());
  }
}

TEST(NnAutoencoder, BottleneckAndZeroMap) {
  auto s = small_spec(Variant::nn_ae, {8, 8});
  s.latent_dim = 8;
  s.nn_hidden = {32, 16, 12};
  MD m(s);
  zero_biases(m.params());
  const GF x = GF::unit(TD::zeros({3, 1, 8, 8}));
  EXPECT_EQ(m.encode(x, m.params().values()).values().shape(), (Shape{3, 1, 8}));
  const auto y = m.forward({x});
  EXPECT_EQ(y.values().shape(), x.values().shape());
  EXPECT_EQ(max_abs(y.values()), 0.0);
}

TEST(NnAutoencoder, UnusualLatentSizeWarns) {
  std::vector<std::string> seen;
  ScopedWarningSink sink([&](const std::string& m) { seen.push_back(m); });
  auto s = small_spec(Variant::nn_ae, {8, 8});
  s.nn_hidden = {16};
  s.latent_dim = 12;
  MD m(s);
  ASSERT_EQ(seen.size(), 1u);
  EXPECT_NE(seen[0].find("12"), std::string::npos);
  s.latent_dim = 16;
  MD m2(s);
  EXPECT_EQ(seen.size(), 1u);
}

TEST(NnAutoencoder, DefaultLadder) {
  auto s = small_spec(Variant::nn_ae, {16, 16});
  MD m(s);
  EXPECT_EQ(m.params()[m.params().index_of("enc.0.weight")].shape(), (Shape{2048, 256}));
  EXPECT_EQ(m.params()[m.params().index_of("enc.3.weight")].shape(), (Shape{16, 128}));
  EXPECT_EQ(m.params()[m.params().index_of("dec.3.weight")].shape(), (Shape{256, 2048}));
}

TEST(CnnAutoencoder, LatentIsOneEighth) {
  auto s = small_spec(Variant::cnn_ae, {64, 64});
  s.cnn_channels = {4, 6, 8};
  MD m(s);
  const GF x = GF::unit(random_tensor({1, 1, 64, 64}, 12));
  EXPECT_EQ(m.encode(x, m.params().values()).values().shape(), (Shape{1, 1, 8, 8}));
  EXPECT_EQ(m.forward({x}).values().shape(), x.values().shape());
}

TEST(CnnAutoencoder, ZeroMap) {
  auto s = small_spec(Variant::cnn_ae, {16, 16});
  s.cnn_channels = {2, 3, 4};
  MD m(s);
  zero_biases(m.params());
  EXPECT_EQ(max_abs(m.forward({GF::unit(TD::zeros({1, 1, 16, 16}))}).values()), 0.0);
}

// Full objectives through the tape.

TEST(ModelGrad, StaticObjective) {
  auto s = small_spec(Variant::static_ae, {16, 16});
  MD m(s);
  const GF x = GF::unit(random_tensor({1, 1, 16, 16}, 30));
  const TD target = x.values();
  expect_grad_ok(grad_check([&](const std::vector<TD>& p) { return objective(m, {x}, target, p); },
                            m.params().values(), model_check_options()));
}

TEST(ModelGrad, TemporalObjectiveWithPdeParameters) {
  for (auto model : {PdeModel::vte_linear_2d, PdeModel::vte_linear_1d_y}) {
    auto s = small_spec(Variant::temporal, {16, 16});
    s.pde.model = model;
    s.pde.learnable = true;
    s.pde.dt = 0.05;
    s.pde.scheme = Scheme::compact;
    MD m(s);
    const GF x = GF::unit(random_tensor({1, 1, 16, 16}, 31));
    const TD target = random_tensor({1, 1, 16, 16}, 32);
    expect_grad_ok(grad_check(
        [&](const std::vector<TD>& p) { return objective(m, {x}, target, p); },
        m.params().values(), model_check_options()));
  }
}

TEST(ModelGrad, GeometricObjective) {
  auto s = small_spec(Variant::geometric, {16, 16});
  s.pde.model = PdeModel::vte_linear_1d_x;
  s.pde.learnable = true;
  MD m(s);
  const GF x = GF::unit(random_tensor({1, 1, 16, 16}, 33));
  const TD target = random_tensor({1, 1, 16, 16}, 34);
  expect_grad_ok(grad_check([&](const std::vector<TD>& p) { return objective(m, {x}, target, p); },
                            m.params().values(), model_check_options()));
}

TEST(ModelGrad, FusionObjective) {
  for (bool lap : {true, false}) {
    auto s = small_spec(Variant::fusion, {9, 9, 9}, 1);
    s.pde.model = PdeModel::ppe_3d;
    s.ppe_laplacian = lap;
    s.pde.jacobi_max_iter = 20;
    s.pde.jacobi_tol = 1e-14;
    s.width = 2;
    MD m(s);
    m.set_mask(GeometryMask<double>::all_fluid({9, 9, 9}));
    std::vector<GF> in;
    for (int k = 0; k < 3; ++k) in.push_back(GF::unit(random_tensor({1, 1, 9, 9, 9}, 40 + k)));
    const TD target = random_tensor({1, 1, 9, 9, 9}, 44);
    auto opt = model_check_options();
    opt.max_entries_per_input = 8;
    expect_grad_ok(grad_check(
        [&](const std::vector<TD>& p) { return objective(m, in, target, p); },
        m.params().values(), opt));
  }
}

TEST(ModelGrad, Baselines) {
  auto s = small_spec(Variant::nn_ae, {4, 4});
  s.nn_hidden = {8, 6};
  s.latent_dim = 8;
  MD nn(s);
  const GF x = GF::unit(random_tensor({2, 1, 4, 4}, 50));
  expect_grad_ok(grad_check(
      [&](const std::vector<TD>& p) { return objective(nn, {x}, x.values(), p); },
      nn.params().values(), model_check_options()));

  auto c = small_spec(Variant::cnn_ae, {16, 16});
  c.cnn_channels = {2, 3, 2};
  MD cnn(c);
  const GF y = GF::unit(random_tensor({1, 1, 16, 16}, 51));
  expect_grad_ok(grad_check(
      [&](const std::vector<TD>& p) { return objective(cnn, {y}, y.values(), p); },
      cnn.params().values(), model_check_options()));
}
