#include <gtest/gtest.h>

#include <random>
#include <set>

#include "diano/grad_check.hpp"
#include "diano/training.hpp"

using namespace diano;
using TD = Tensor<double>;
using GF = GridField<double>;

namespace {

TD random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return TD(std::move(shape), std::move(v));
}

/// Smooth travelling-wave snapshots on an n x n grid.
std::vector<GF> wave_snapshots(std::size_t count, std::size_t n) {
  std::vector<GF> out;
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> v(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double x = double(i) / n, y = double(j) / n, t = 0.05 * double(k);
        v[i * n + j] = 0.8 * std::sin(2 * M_PI * (x - t)) * std::cos(2 * M_PI * y);
      }
    out.push_back(GF::unit(TD({1, 1, n, n}, v)));
  }
  return out;
}

ModelSpec tiny_spec(Variant v = Variant::static_ae) {
  ModelSpec s;
  s.variant = v;
  s.width = 4;
  s.fourier_modes = 3;
  s.compression_ratio = 2;
  s.grid = {8, 8};
  s.seed = 3;
  if (v == Variant::temporal) s.pde.model = PdeModel::vte_linear_2d;
  return s;
}

TrainConfig tiny_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 3;
  c.lr0 = 1e-2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(MseLoss, Examples) {
  const GF a = GF::unit(random_tensor({2, 1, 4, 4}, 1));
  EXPECT_EQ(mse_loss(a, a).item(), 0.0);
  const GF b = a.with_values(add_scalar(a.values(), 2.0));
  EXPECT_NEAR(mse_loss(b, a).item(), 4.0, 1e-14);
  const GF c = GF::unit(random_tensor({2, 1, 4, 4}, 2));
  double naive = 0;
  for (std::size_t i = 0; i < 32; ++i) naive += (a.values()[i] - c.values()[i]) * (a.values()[i] - c.values()[i]);
  EXPECT_NEAR(mse_loss(a, c).item(), naive / 32, 1e-14);
  EXPECT_THROW(mse_loss(a, GF::unit(TD::zeros({1, 1, 4, 4}))), ShapeError);
}

TEST(Adam, ZeroGradientLeavesParamsAndDecaysMoments) {
  ParamView<double> p{TD({2}, {1.0, -2.0})};
  auto s = AdamState<double>::zeros_like(p);
  s.m[0] = {0.5, 0.5};
  s.v[0] = {0.25, 0.25};
  s.step = 3;
  adam_step(p, {TD::zeros({2})}, s, 0.1);
  EXPECT_EQ(s.m[0][0], 0.45);
  EXPECT_DOUBLE_EQ(s.v[0][0], 0.25 * 0.999);
  // Non-zero moments still move the parameters; with fresh state nothing moves.
  ParamView<double> q{TD({2}, {1.0, -2.0})};
  auto fresh = AdamState<double>::zeros_like(q);
  adam_step(q, {TD::zeros({2})}, fresh, 0.1);
  EXPECT_EQ(q[0].to_vector(), (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepMagnitude) {
  ParamView<double> p{TD::scalar(0.0)};
  auto s = AdamState<double>::zeros_like(p);
  adam_step(p, {TD::scalar(1.0)}, s, 0.1);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(p[0].item(), -0.1 / (1 + 1e-8), 1e-15);
}

TEST(Adam, MinimisesQuadratic) {
  ParamView<double> p{TD::scalar(0.0)};
  auto s = AdamState<double>::zeros_like(p);
  int steps = 0;
  for (; steps < 500; ++steps) {
    const double x = p[0].item();
    if (std::abs(x - 3) < 1e-3) break;
    adam_step(p, {TD::scalar(2 * (x - 3))}, s, 0.1);
  }
  EXPECT_LT(std::abs(p[0].item() - 3), 1e-3) << "after " << steps << " steps";
}

TEST(Adam, NonFiniteGradientRejected) {
  ParamView<double> p{TD::scalar(0.0)};
  auto s = AdamState<double>::zeros_like(p);
  EXPECT_THROW(adam_step(p, {TD::scalar(std::nan(""))}, s, 0.1), NumericError);
  EXPECT_EQ(s.step, 0u);
}

TEST(LrSchedule, StepDecay) {
  TrainConfig c;
  c.lr0 = 1e-2;
  c.step_epoch = 5;
  c.decay_rate = 0.75;
  EXPECT_EQ(lr_schedule(0, c), 1e-2);
  EXPECT_NEAR(lr_schedule(5, c), 7.5e-3, 1e-17);
  EXPECT_NEAR(lr_schedule(12, c), 1e-2 * 0.75 * 0.75, 1e-17);
  for (std::size_t e = 1; e < 40; ++e) EXPECT_LE(lr_schedule(e, c), lr_schedule(e - 1, c));
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.decay_rate = 0;
  EXPECT_THROW(c.validate(), Error);
  c.decay_rate = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c.decay_rate = 1;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Split, EightyTwenty) {
  const auto s = split_dataset(10, 1);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.test.size(), 2u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 10u);
  const auto s100 = split_dataset(100, 4);
  EXPECT_EQ(s100.train.size(), 80u);
  EXPECT_EQ(s100.test.size(), 20u);
}

TEST(Split, DeterministicAndSeedDependent) {
  const auto a = split_dataset(50, 9), b = split_dataset(50, 9), c = split_dataset(50, 10);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, TemporalPairsExcludeLastSnapshot) {
  const auto s = split_dataset(11, 2, true);
  EXPECT_EQ(s.train.size() + s.test.size(), 10u);
  for (auto i : s.train) EXPECT_LT(i, 10u);
  for (auto i : s.test) EXPECT_LT(i, 10u);
}

TEST(Split, TooFewSnapshots) { EXPECT_THROW(split_dataset(4, 0), Error); }

TEST(Dataset, PairingAndCollate) {
  const auto snaps = wave_snapshots(5, 8);
  const auto t = make_temporal_dataset(snaps);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[2].inputs[0].values().to_vector(), snaps[2].values().to_vector());
  EXPECT_EQ(t[2].target.values().to_vector(), snaps[3].values().to_vector());
  const auto b = collate(t, {3, 1});
  EXPECT_EQ(b.inputs[0].values().shape(), (Shape{2, 1, 8, 8}));
  EXPECT_EQ(b.target.values()[64], snaps[2].values()[0]);
  EXPECT_EQ(make_dataset(Variant::static_ae, snaps).size(), 5u);
}

TEST(Batches, DropTrailingSingleton) {
  Rng rng(1);
  const auto b = make_batches({0, 1, 2, 3, 4, 5, 6}, 3, rng);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0].size() + b[1].size(), 6u);
  EXPECT_EQ(make_batches({0, 1, 2, 3, 4}, 3, rng).size(), 2u);
  EXPECT_EQ(make_batches({0}, 3, rng).size(), 1u);
}

TEST(Evaluate, MatchesNaiveRecomputation) {
  const auto snaps = wave_snapshots(6, 8);
  const auto data = make_static_dataset(snaps);
  Model<double> m(tiny_spec());
  const std::vector<std::size_t> idx{4, 0, 2};
  const auto met = evaluate(m, m.params().values(), data, idx, 2);
  double total = 0, mx = 0;
  ASSERT_EQ(met.per_example_mse.size(), 3u);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto y = m.forward({snaps[idx[k]]});
    double s = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      const double d = y.values()[i] - snaps[idx[k]].values()[i];
      s += d * d;
      mx = std::max(mx, std::abs(d));
    }
    EXPECT_NEAR(met.per_example_mse[k], s / 64, 1e-14);
    total += s;
  }
  EXPECT_NEAR(met.mse, total / 192, 1e-14);
  EXPECT_NEAR(met.max_abs_error, mx, 1e-14);
  EXPECT_GE(met.mse, 0.0);
}

TEST(Evaluate, IdentityCapableModelHasZeroError) {
  // Compression 1 has no Fourier stages; with width 1, identity activation
  // and unit weights, lift, collapse, expand and project are identities.
  ModelSpec s = tiny_spec();
  s.compression_ratio = 1;
  s.width = 1;
  s.activation = Activation::identity;
  Model<double> m(s);
  auto& ps = m.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& name = ps.names()[i];
    const auto& shape = ps[i].shape();
    ps.values()[i] = name.ends_with(".weight") && !name.ends_with("spectral.weight")
                         ? TD::ones(shape)
                         : TD::zeros(shape);
  }
  const auto data = make_static_dataset(wave_snapshots(5, 8));
  EXPECT_EQ(evaluate(m, ps.values(), data, {0, 1, 2, 3, 4}).mse, 0.0);
}

TEST(Train, ZeroEpochsKeepsInitialisation) {
  const auto data = make_static_dataset(wave_snapshots(10, 8));
  Model<double> m(tiny_spec());
  const auto init = m.params().values();
  auto cfg = tiny_config(0);
  const auto out = train(m, data, split_dataset(10, 1), cfg);
  EXPECT_EQ(out.status, TrainStatus::completed);
  for (std::size_t i = 0; i < init.size(); ++i)
    EXPECT_EQ(m.params()[i].to_vector(), init[i].to_vector());
}

TEST(Train, LossDecreasesAndHistoryHasOneRowPerEpoch) {
  const auto data = make_static_dataset(wave_snapshots(10, 8));
  Model<double> m(tiny_spec());
  auto cfg = tiny_config(30);
  cfg.test_every = 5;
  auto state = TrainState<double>::start(m, cfg);
  const auto out = train(m, data, split_dataset(10, 1), cfg, state);
  ASSERT_EQ(out.status, TrainStatus::completed) << out.message;
  ASSERT_EQ(state.history.size(), 30u);
  EXPECT_LT(state.history.back().train_loss, state.history.front().train_loss);
  EXPECT_TRUE(std::isnan(state.history[3].test_loss));
  EXPECT_FALSE(std::isnan(state.history[4].test_loss));
  EXPECT_EQ(state.history[7].lr, lr_schedule(7, cfg));
  EXPECT_TRUE(std::isfinite(out.final_test_mse));
}

TEST(Train, Reproducible) {
  const auto data = make_temporal_dataset(wave_snapshots(10, 8));
  auto run = [&] {
    Model<double> m(tiny_spec(Variant::temporal));
    auto cfg = tiny_config(4);
    auto state = TrainState<double>::start(m, cfg);
    train(m, data, split_dataset(10, 1, true), cfg, state);
    return state;
  };
  const auto a = run(), b = run();
  for (std::size_t e = 0; e < 4; ++e) EXPECT_EQ(a.history[e].train_loss, b.history[e].train_loss);
  for (std::size_t i = 0; i < a.params.size(); ++i)
    EXPECT_EQ(a.params[i].to_vector(), b.params[i].to_vector());
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto data = make_static_dataset(wave_snapshots(10, 8));
  const auto split = split_dataset(10, 1);
  auto cfg = tiny_config(6);

  Model<double> full(tiny_spec());
  auto s_full = TrainState<double>::start(full, cfg);
  train(full, data, split, cfg, s_full);

  Model<double> part(tiny_spec());
  auto cfg3 = cfg;
  cfg3.epochs = 3;
  auto s_part = TrainState<double>::start(part, cfg3);
  train(part, data, split, cfg3, s_part);
  // Round-trip the generator through its text form as a checkpoint would.
  TrainState<double> resumed = s_part;
  resumed.set_rng_text(s_part.rng_text());
  Model<double> again(tiny_spec());
  train(again, data, split, cfg, resumed);

  ASSERT_EQ(resumed.history.size(), 6u);
  for (std::size_t e = 0; e < 6; ++e)
    EXPECT_EQ(resumed.history[e].train_loss, s_full.history[e].train_loss);
  for (std::size_t i = 0; i < s_full.params.size(); ++i)
    EXPECT_EQ(resumed.params[i].to_vector(), s_full.params[i].to_vector());
}

TEST(Train, DivergenceRollsBackToLastGoodEpoch) {
  auto data = make_static_dataset(wave_snapshots(10, 8));
  Model<double> m(tiny_spec());
  auto cfg = tiny_config(3);
  auto state = TrainState<double>::start(m, cfg);
  ParamView<double> after_first;
  // Poison every target after the first epoch so the next loss overflows.
  const auto out = train(m, data, split_dataset(10, 1), cfg, state,
                         [&](const TrainState<double>& s) {
                           after_first = s.params;
                           for (auto& e : data) e.target = e.target.with_values(TD::full(e.target.values().shape(), 1e200));
                         });
  EXPECT_EQ(out.status, TrainStatus::diverged);
  EXPECT_NE(out.message.find("epoch 1"), std::string::npos) << out.message;
  EXPECT_EQ(state.epoch, 1u);
  EXPECT_EQ(state.history.size(), 1u);
  for (std::size_t i = 0; i < after_first.size(); ++i)
    EXPECT_EQ(m.params()[i].to_vector(), after_first[i].to_vector());
}

TEST(Train, FullObjectiveGradientOnDeskConfiguration) {
  const auto data = make_temporal_dataset(wave_snapshots(3, 16));
  auto spec = tiny_spec(Variant::temporal);
  spec.grid = {16, 16};
  spec.compression_ratio = 4;
  Model<double> m(spec);
  const auto batch = collate(data, {0, 1});
  GradCheckOptions opt;
  opt.eps = 1e-3;
  opt.max_entries_per_input = 8;
  const auto r = grad_check(
      [&](const std::vector<TD>& p) { return mse_loss(m.forward(batch.inputs, p), batch.target); },
      m.params().values(), opt);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}
