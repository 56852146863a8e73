#pragma once

/// @file cli.hpp
/// @brief The `diano` command line: dataset generation, training,
/// evaluation, latent stepping, latent export and gradient checks.
///
/// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <optional>

#include "diano/datagen.hpp"
#include "diano/grad_check.hpp"

namespace diano {

namespace cli {

inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kFailure = 2;

inline constexpr const char* kCheckpointName = "checkpoint.diac";
inline constexpr const char* kHistoryName = "history.csv";
inline constexpr const char* kMetricsName = "metrics.json";

/// Thrown for bad flag combinations found after parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Data loading

template <Real T>
struct LoadedData {
  Dataset<T> data;
  std::optional<GeometryMask<T>> mask;
  std::size_t n_snapshots = 0;
  std::vector<std::size_t> grid;
  std::uint64_t split_seed = 0;
};

/// Role holding the single field of a non-fusion dataset.
inline std::string scalar_role(const DatasetManifest& m) {
  if (m.has("vorticity")) return "vorticity";
  std::vector<std::string> roles;
  for (const auto& [r, l] : m.files)
    if (r != "mask" && !l.empty()) roles.push_back(r);
  if (roles.size() != 1) throw Error("dataset has several field roles and no vorticity; cannot pick one");
  return roles.front();
}

template <Real T>
GeometryMask<T> mask_from_field(const GridField<T>& f) {
  return GeometryMask<T>(f.values().with_shape(Shape(f.sizes().begin(), f.sizes().end())));
}

/// Pairs the snapshots of a dataset directory the way `variant` trains.
template <Real T>
LoadedData<T> load_data(const std::string& dir, Variant variant) {
  const auto m = load_manifest(dir);
  LoadedData<T> out;
  out.split_seed = m.split_seed;
  if (variant == Variant::fusion) {
    for (const char* r : {"u", "v", "w", "pressure", "mask"}) {
      if (!m.has(r)) throw Error(std::string("fusion training needs a '") + r + "' role in the dataset");
    }
    const auto u = load_role<T>(dir, m, "u"), v = load_role<T>(dir, m, "v"), w = load_role<T>(dir, m, "w");
    const auto p = load_role<T>(dir, m, "pressure");
    out.data = make_fusion_dataset(u, v, w, p);
    out.mask = mask_from_field(load_role<T>(dir, m, "mask").front());
    out.n_snapshots = u.size();
    out.grid = u.front().sizes();
  } else {
    const auto snaps = load_role<T>(dir, m, scalar_role(m));
    out.data = make_dataset(variant, snaps);
    out.n_snapshots = snaps.size();
    if (!snaps.empty()) out.grid = snaps.front().sizes();
  }
  if (out.n_snapshots == 0) throw Error("dataset '" + dir + "' has no snapshots");
  return out;
}

template <Real T>
SplitIndex split_for(const LoadedData<T>& d, Variant v) {
  return split_dataset(d.n_snapshots, d.split_seed, is_temporal(v));
}

inline void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "epoch,lr,train_loss,test_loss\n" << std::setprecision(17);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',';
    if (!std::isnan(r.test_loss)) out << r.test_loss;
    out << '\n';
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// gen

struct GenArgs {
  std::string kind;
  std::optional<std::size_t> grid;
  std::optional<std::size_t> snapshots;
  std::optional<std::size_t> period;
  std::optional<double> dt;
  std::optional<double> reynolds;
  std::string out;
  std::string dtype = "float32";
  std::uint64_t seed = 0;
  std::uint64_t split_seed = 0;
};

inline int run_gen(const GenArgs& a, std::ostream& out) {
  GeneratedDataset ds;
  if (a.kind == "vortex") {
    VortexStreetOptions o;
    o.seed = a.seed;
    if (a.grid) o.grid = *a.grid;
    if (a.snapshots) o.n_snapshots = *a.snapshots;
    if (a.dt) o.dt = *a.dt;
    if (a.reynolds) o.reynolds = *a.reynolds;
    if (a.period) throw UsageError("--period applies to the pulsatile cases only");
    ds = gen_vortex_street(o);
  } else if (a.kind == "stenosis") {
    StenosisOptions o;
    if (a.grid) o.grid = *a.grid;
    if (a.period) o.waveform = Waveform::two_harmonic(*a.period);
    o.n_snapshots = a.snapshots.value_or(o.waveform.period());
    if (a.dt || a.reynolds) throw UsageError("--dt and --reynolds apply to the vortex case only");
    ds = gen_stenosis_like(o);
  } else {
    Channel3dOptions o;
    if (a.grid) o.grid = *a.grid;
    if (a.snapshots) o.n_snapshots = *a.snapshots;
    if (a.period) o.waveform = Waveform::two_harmonic(*a.period);
    if (a.dt || a.reynolds) throw UsageError("--dt and --reynolds apply to the vortex case only");
    ds = gen_channel3d(o);
  }
  const auto m = save_dataset(a.out, ds, dtype_from_name(a.dtype), a.split_seed);
  out << "wrote " << m.size() << " snapshots (" << ds.name << ") to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  bool quiet = false;
};

template <Real T>
int run_train_typed(const TrainArgs& a, RunConfig cfg, std::ostream& out, std::ostream& err) {
  const auto d = load_data<T>(a.data, cfg.model.variant);
  if (cfg.model.grid.empty()) {
    cfg.model.grid = d.grid;
  } else if (cfg.model.grid != d.grid) {
    throw Error("run config grid does not match the dataset grid");
  }
  Model<T> model(cfg.model);
  if (d.mask) model.set_mask(*d.mask);
  const auto split = split_for(d, cfg.model.variant);

  Checkpoint<T> ck{cfg, model.params().names(), TrainState<T>::start(model, cfg.train), Json::object()};
  if (!a.resume.empty()) {
    auto prev = load_checkpoint<T>(a.resume);
    if (to_json(prev.config.model) != to_json(cfg.model)) {
      throw Error("resume checkpoint was trained with a different model spec");
    }
    model_from_checkpoint(prev);  // validates names and shapes
    ck.state = std::move(prev.state);
  }
  ck.info = Json{{"dataset", fs::absolute(a.data).string()}, {"split_seed", d.split_seed}};
  fs::create_directories(a.out);
  const auto ck_path = (fs::path(a.out) / kCheckpointName).string();
  const auto hist_path = (fs::path(a.out) / kHistoryName).string();

  if (!a.quiet) {
    out << "model " << variant_name(cfg.model.variant) << ", " << model.parameter_count()
        << " parameters, " << split.train.size() << " train / " << split.test.size() << " test examples\n";
  }
  const auto outcome = train(model, d.data, split, cfg.train, ck.state, [&](const TrainState<T>& s) {
    const auto& r = s.history.back();
    if (!a.quiet) {
      out << "epoch " << r.epoch << " lr " << r.lr << " train " << r.train_loss;
      if (!std::isnan(r.test_loss)) out << " test " << r.test_loss;
      out << '\n';
    }
    Checkpoint<T> snap{cfg, ck.names, s, ck.info};
    save_checkpoint(ck_path, snap);
  });

  ck.info["status"] = outcome.status == TrainStatus::completed ? "completed" : "diverged";
  ck.info["message"] = outcome.message;
  ck.info["final_train_mse"] = std::isnan(outcome.final_train_mse) ? Json(nullptr) : Json(outcome.final_train_mse);
  ck.info["final_test_mse"] = std::isnan(outcome.final_test_mse) ? Json(nullptr) : Json(outcome.final_test_mse);
  save_checkpoint(ck_path, ck);
  write_history_csv(hist_path, ck.state.history);
  write_json_file((fs::path(a.out) / kMetricsName).string(), ck.info);

  if (outcome.status == TrainStatus::diverged) {
    err << "training diverged (" << outcome.message << "); last good state saved to " << ck_path << '\n';
    return kFailure;
  }
  out << "final train mse " << fmt(outcome.final_train_mse) << '\n';
  if (!split.test.empty()) out << "final test mse " << fmt(outcome.final_test_mse) << '\n';
  out << "checkpoint " << ck_path << '\n';
  return kOk;
}

inline int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const auto cfg = load_run_config(a.config);
  return cfg.dtype == DType::float32 ? run_train_typed<float>(a, cfg, out, err)
                                     : run_train_typed<double>(a, cfg, out, err);
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  bool json = false;
};

template <Real T>
int run_eval_typed(const EvalArgs& a, std::ostream& out) {
  const auto ck = load_checkpoint<T>(a.checkpoint);
  auto model = model_from_checkpoint(ck);
  const auto v = ck.config.model.variant;
  const auto d = load_data<T>(a.data, v);
  if (d.mask) model.set_mask(*d.mask);
  const auto split = split_for(d, v);
  std::vector<std::size_t> idx;
  if (a.split == "train") {
    idx = split.train;
  } else if (a.split == "test") {
    idx = split.test;
  } else {
    idx.resize(d.data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  if (idx.empty()) throw Error("the " + a.split + " split is empty");
  const auto m = evaluate(model, model.params().values(), d.data, idx, ck.config.train.batch_size);
  if (a.json) {
    out << Json{{"split", a.split},
                {"examples", idx.size()},
                {"mse", m.mse},
                {"max_abs_error", m.max_abs_error},
                {"per_example_mse", m.per_example_mse}}
               .dump(2)
        << '\n';
  } else {
    out << "split " << a.split << " examples " << idx.size() << '\n'
        << "mse " << fmt(m.mse) << '\n'
        << "max abs error " << fmt(m.max_abs_error) << '\n';
  }
  return kOk;
}

inline int run_eval(const EvalArgs& a, std::ostream& out) {
  return checkpoint_dtype(a.checkpoint) == DType::float32 ? run_eval_typed<float>(a, out)
                                                          : run_eval_typed<double>(a, out);
}

// ---------------------------------------------------------------------------
// advance

struct AdvanceArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::size_t steps = 1;
};

template <Real T>
int run_advance_typed(const AdvanceArgs& a, std::ostream& out) {
  const auto ck = load_checkpoint<T>(a.checkpoint);
  const auto model = model_from_checkpoint(ck);
  if (!is_temporal(ck.config.model.variant)) {
    throw Error("advance needs a temporal or geometric model, checkpoint holds '" +
                std::string(variant_name(ck.config.model.variant)) + "'");
  }
  auto z = load_snapshot<T>(a.input);
  for (std::size_t s = 0; s < a.steps; ++s) z = model.advance(z, model.params().values());
  save_snapshot(a.out, z);
  out << "advanced latent " << shape_string(z.values().shape()) << " by " << a.steps << " step(s) to " << a.out
      << '\n';
  return kOk;
}

inline int run_advance(const AdvanceArgs& a, std::ostream& out) {
  return checkpoint_dtype(a.checkpoint) == DType::float32 ? run_advance_typed<float>(a, out)
                                                          : run_advance_typed<double>(a, out);
}

// ---------------------------------------------------------------------------
// export-latent

struct ExportArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::string format = "diaf";
  std::size_t which = 0;
};

template <Real T>
int run_export_typed(const ExportArgs& a, std::ostream& out) {
  const auto ck = load_checkpoint<T>(a.checkpoint);
  const auto model = model_from_checkpoint(ck);
  if (a.which >= model.n_inputs()) throw UsageError("--which must be below " + std::to_string(model.n_inputs()));
  const auto x = load_snapshot<T>(a.input);
  const auto z = model.encode(x, model.params().values(), a.which);
  export_field(z, a.out, export_format_from_name(a.format));
  out << "latent " << shape_string(z.values().shape()) << " written to " << a.out << '\n';
  return kOk;
}

inline int run_export(const ExportArgs& a, std::ostream& out) {
  return checkpoint_dtype(a.checkpoint) == DType::float32 ? run_export_typed<float>(a, out)
                                                          : run_export_typed<double>(a, out);
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
  std::string config;
  std::vector<std::size_t> grid;
  std::size_t entries = 16;
  double eps = 1e-3;
  double tol = 1e-5;
  std::uint64_t seed = 0;
};

/// Checks tape gradients of the full training objective (model, latent PDE
/// and loss) against finite differences in float64 on random data.
inline int run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  auto spec = load_run_config(a.config).model;
  if (!a.grid.empty()) spec.grid = a.grid;
  if (spec.grid.empty()) {
    spec.grid = spec.variant == Variant::fusion ? std::vector<std::size_t>{9, 9, 9}
                                                : std::vector<std::size_t>{16, 16};
  }
  Model<double> model(spec);
  Shape shape{1, spec.in_channels};
  shape.insert(shape.end(), spec.grid.begin(), spec.grid.end());
  Shape target_shape{1, spec.out_channels};
  target_shape.insert(target_shape.end(), spec.grid.begin(), spec.grid.end());

  Rng rng(a.seed);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  auto random = [&](const Shape& s) {
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = unif(rng);
    return Tensor<double>(s, std::move(v));
  };
  std::vector<GridField<double>> inputs;
  for (std::size_t i = 0; i < model.n_inputs(); ++i) inputs.push_back(GridField<double>::unit(random(shape)));
  const auto target = GridField<double>::unit(random(target_shape));
  if (spec.variant == Variant::fusion) model.set_mask(GeometryMask<double>::all_fluid(spec.grid));

  GradCheckOptions opt;
  opt.eps = a.eps;
  opt.tol = a.tol;
  opt.max_entries_per_input = a.entries;
  opt.seed = a.seed;
  const auto report = grad_check(
      [&](const std::vector<Tensor<double>>& p) { return mse_loss(model.forward(inputs, p), target); },
      model.params().values(), opt);
  out << "checked " << report.checked << " entries over " << model.params().size() << " tensors, max rel error "
      << report.max_rel_error << '\n';
  for (std::size_t k = 0; k < std::min<std::size_t>(report.failures.size(), 10); ++k) {
    const auto& f = report.failures[k];
    out << "  FAIL " << model.params().names()[f.input] << "[" << f.index << "] analytic " << f.analytic
        << " numeric " << f.numeric << " rel " << f.rel_error << '\n';
  }
  out << (report.passed ? "gradcheck passed\n" : "gradcheck FAILED\n");
  return report.passed ? kOk : kFailure;
}

}  // namespace cli

/// Entry point shared by the `diano` executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fourier-layer autoencoders with differentiable latent PDE solvers", "diano"};
  app.require_subcommand(1);

  cli::GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
  g->add_option("--case", gen.kind, "dataset case")->required()->check(CLI::IsMember({"vortex", "stenosis", "channel3d"}));
  g->add_option("--grid", gen.grid, "grid points per axis");
  g->add_option("--snapshots", gen.snapshots, "number of snapshots");
  g->add_option("--period", gen.period, "inflow period in snapshots (pulsatile cases)");
  g->add_option("--dt", gen.dt, "time between snapshots (vortex)");
  g->add_option("--reynolds", gen.reynolds, "Reynolds number (vortex)");
  g->add_option("--dtype", gen.dtype, "payload type")->check(CLI::IsMember({"float32", "float64"}));
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--split-seed", gen.split_seed, "seed of the train/test split stored in the manifest");
  g->add_option("--out", gen.out, "output directory")->required();

  cli::TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on a dataset");
  t->add_option("--config", tr.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--data", tr.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "run directory for checkpoint, history and metrics")->required();
  t->add_option("--resume", tr.resume, "continue from this checkpoint")->check(CLI::ExistingFile);
  t->add_flag("--quiet", tr.quiet, "suppress per-epoch output");

  cli::EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--split", ev.split, "split to evaluate")->check(CLI::IsMember({"test", "train", "all"}));
  e->add_flag("--json", ev.json, "print metrics as JSON");

  cli::AdvanceArgs adv;
  auto* a = app.add_subcommand("advance", "advance a stored latent field by the latent PDE");
  a->add_option("--checkpoint", adv.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  a->add_option("--input", adv.input, "latent snapshot file")->required()->check(CLI::ExistingFile);
  a->add_option("--out", adv.out, "output snapshot file")->required();
  a->add_option("--steps", adv.steps, "number of time steps")->check(CLI::PositiveNumber);

  cli::ExportArgs ex;
  auto* x = app.add_subcommand("export-latent", "encode a snapshot and export its latent field");
  x->add_option("--checkpoint", ex.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  x->add_option("--input", ex.input, "snapshot file")->required()->check(CLI::ExistingFile);
  x->add_option("--out", ex.out, "output file")->required();
  x->add_option("--format", ex.format, "output format")->check(CLI::IsMember({"csv", "pgm", "diaf"}));
  x->add_option("--which", ex.which, "encoder index (fusion: 0 u, 1 v, 2 w)");

  cli::GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "finite-difference check of the training objective");
  c->add_option("--config", gc.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  c->add_option("--grid", gc.grid, "grid override, e.g. --grid 16 16");
  c->add_option("--entries", gc.entries, "probed entries per parameter tensor");
  c->add_option("--eps", gc.eps, "finite-difference step");
  c->add_option("--tol", gc.tol, "relative error tolerance");
  c->add_option("--seed", gc.seed, "seed for data and probe selection");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    bool known = false;
    for (const auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) known = known || sub->get_name() == name;
    if (!known) {
      err << "diano: unknown subcommand '" << name << "'\n\n" << app.help();
      return cli::kUsage;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return cli::kOk;
  } catch (const CLI::ParseError& ex_) {
    err << "diano: " << ex_.what() << "\n\n" << app.help();
    return cli::kUsage;
  }

  try {
    if (*g) return cli::run_gen(gen, out);
    if (*t) return cli::run_train(tr, out, err);
    if (*e) return cli::run_eval(ev, out);
    if (*a) return cli::run_advance(adv, out);
    if (*x) return cli::run_export(ex, out);
    if (*c) return cli::run_gradcheck(gc, out);
  } catch (const cli::UsageError& ex_) {
    err << "diano: " << ex_.what() << '\n';
    return cli::kUsage;
  } catch (const std::exception& ex_) {
    err << "diano: error: " << ex_.what() << '\n';
    return cli::kFailure;
  }
  return cli::kUsage;
}

}  // namespace diano
