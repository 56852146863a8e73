#pragma once

/// @file training.hpp
/// @brief Datasets, Adam, step-decay schedule, training loop and metrics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "diano/models.hpp"

namespace diano {

// ---------------------------------------------------------------------------
// Datasets

/// One training example: the model inputs and the field it should output.
/// Every field carries a batch axis of length 1.
template <Real T>
struct Example {
  std::vector<GridField<T>> inputs;
  GridField<T> target;
};

template <Real T>
using Dataset = std::vector<Example<T>>;

/// Reconstruction pairs (x^i, x^i).
template <Real T>
Dataset<T> make_static_dataset(const std::vector<GridField<T>>& snapshots) {
  Dataset<T> d;
  for (const auto& s : snapshots) d.push_back({{s}, s});
  return d;
}

/// One-step prediction pairs (x^i, x^{i+1}); the last snapshot never
/// starts a pair.
template <Real T>
Dataset<T> make_temporal_dataset(const std::vector<GridField<T>>& snapshots) {
  Dataset<T> d;
  for (std::size_t i = 0; i + 1 < snapshots.size(); ++i) d.push_back({{snapshots[i]}, snapshots[i + 1]});
  return d;
}

/// Velocity components to pressure.
template <Real T>
Dataset<T> make_fusion_dataset(const std::vector<GridField<T>>& u, const std::vector<GridField<T>>& v,
                               const std::vector<GridField<T>>& w,
                               const std::vector<GridField<T>>& p) {
  if (u.size() != v.size() || u.size() != w.size() || u.size() != p.size()) {
    throw ShapeError("fusion dataset: component sequences differ in length");
  }
  Dataset<T> d;
  for (std::size_t i = 0; i < u.size(); ++i) d.push_back({{u[i], v[i], w[i]}, p[i]});
  return d;
}

/// Dataset pairing rule of a model variant.
template <Real T>
Dataset<T> make_dataset(Variant v, const std::vector<GridField<T>>& snapshots) {
  if (v == Variant::fusion) throw Error("fusion datasets need make_fusion_dataset");
  return is_temporal(v) ? make_temporal_dataset(snapshots) : make_static_dataset(snapshots);
}

/// Concatenates the selected examples along the batch axis.
template <Real T>
Example<T> collate(const Dataset<T>& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw Error("collate: empty batch");
  const auto& first = data.at(idx[0]);
  auto stack = [&](auto field_of) {
    std::vector<Tensor<T>> parts;
    for (auto i : idx) parts.push_back(field_of(data.at(i)).values());
    return field_of(first).regridded(concat(parts, 0));
  };
  Example<T> b;
  for (std::size_t k = 0; k < first.inputs.size(); ++k) {
    b.inputs.push_back(stack([k](const Example<T>& e) -> const GridField<T>& { return e.inputs.at(k); }));
  }
  b.target = stack([](const Example<T>& e) -> const GridField<T>& { return e.target; });
  return b;
}

struct SplitIndex {
  std::vector<std::size_t> train, test;
};

/// Seeded 80/20 partition of the examples built from `n_snapshots`
/// snapshots. With `temporal`, example i is the pair (i, i + 1), so there
/// are n_snapshots - 1 examples.
inline SplitIndex split_dataset(std::size_t n_snapshots, std::uint64_t seed, bool temporal = false) {
  if (n_snapshots < 5) {
    throw Error("split_dataset: need at least 5 snapshots, got " + std::to_string(n_snapshots));
  }
  const std::size_t n = temporal ? n_snapshots - 1 : n_snapshots;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  SplitIndex s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

// ---------------------------------------------------------------------------
// Loss, schedule, optimizer

template <Real T>
Tensor<T> mse_loss(const GridField<T>& pred, const GridField<T>& target) {
  return mse(pred.values(), target.values());
}

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  double lr0 = 1e-2;
  std::size_t step_epoch = 5;
  double decay_rate = 0.75;
  std::uint64_t seed = 0;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  /// Evaluate the test split every this many epochs (0: only at the end).
  std::size_t test_every = 0;

  void validate() const {
    if (!(decay_rate > 0 && decay_rate <= 1)) throw Error("TrainConfig: decay_rate must be in (0, 1]");
    if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
    if (step_epoch < 1) throw Error("TrainConfig: step_epoch must be >= 1");
    if (!(lr0 > 0)) throw Error("TrainConfig: lr0 must be > 0");
    if (clip_norm < 0) throw Error("TrainConfig: clip_norm must be >= 0");
  }
};

inline double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr0 * std::pow(cfg.decay_rate, static_cast<double>(epoch / cfg.step_epoch));
}

template <Real T>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;

  static AdamState zeros_like(const ParamView<T>& params) {
    AdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p.numel(), T(0));
      s.v.emplace_back(p.numel(), T(0));
    }
    return s;
  }
};

/// One bias-corrected Adam update, in place.
template <Real T>
void adam_step(ParamView<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& s, double lr) {
  if (grads.size() != params.size() || s.m.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].numel() != params[k].numel()) throw ShapeError("adam_step: gradient size mismatch");
    for (T g : grads[k].values()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(k));
      }
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto v = params[k].to_vector();
    auto& m = s.m[k];
    auto& sq = s.v[k];
    const auto g = grads[k].values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = static_cast<T>(s.beta1 * m[i] + (1 - s.beta1) * gi);
      sq[i] = static_cast<T>(s.beta2 * sq[i] + (1 - s.beta2) * gi * gi);
      const double mh = m[i] / c1, vh = sq[i] / c2;
      v[i] = static_cast<T>(v[i] - lr * mh / (std::sqrt(vh) + s.eps));
    }
    params[k] = Tensor<T>(params[k].shape(), std::move(v));
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct Metrics {
  double mse = 0.0;
  std::vector<double> per_example_mse;
  double max_abs_error = 0.0;
};

/// Off-tape forward over the given examples.
template <Real T>
Metrics evaluate(const Model<T>& model, const ParamView<T>& params, const Dataset<T>& data,
                 const std::vector<std::size_t>& idx, std::size_t batch_size = 8) {
  Metrics out;
  if (idx.empty()) return out;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    const std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(b),
                                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + batch_size)));
    const auto batch = collate(data, chunk);
    const auto pred = model.forward(batch.inputs, params);
    const auto p = pred.values().values();
    const auto t = batch.target.values().values();
    if (pred.values().shape() != batch.target.values().shape()) {
      throw ShapeError("evaluate: prediction and target shapes differ");
    }
    const std::size_t per = p.size() / chunk.size();
    for (std::size_t e = 0; e < chunk.size(); ++e) {
      double s = 0.0;
      for (std::size_t i = e * per; i < (e + 1) * per; ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        s += d * d;
        out.max_abs_error = std::max(out.max_abs_error, std::abs(d));
      }
      out.per_example_mse.push_back(s / static_cast<double>(per));
      total += s;
      count += per;
    }
  }
  out.mse = total / static_cast<double>(count);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  /// NaN when the test split was not evaluated this epoch.
  double test_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Everything needed to continue a run exactly where it stopped.
template <Real T>
struct TrainState {
  std::size_t epoch = 0;
  ParamView<T> params;
  AdamState<T> adam;
  Rng rng;
  std::vector<EpochRecord> history;

  static TrainState start(const Model<T>& model, const TrainConfig& cfg) {
    TrainState s;
    s.params = model.params().values();
    s.adam = AdamState<T>::zeros_like(s.params);
    s.rng.seed(cfg.seed);
    return s;
  }

  std::string rng_text() const {
    std::ostringstream os;
    os << rng;
    return os.str();
  }
  void set_rng_text(const std::string& text) {
    std::istringstream is(text);
    is >> rng;
    if (!is) throw Error("TrainState: malformed generator state");
  }
};

enum class TrainStatus { completed, diverged };

struct TrainOutcome {
  TrainStatus status = TrainStatus::completed;
  std::string message;
  double final_train_mse = std::numeric_limits<double>::quiet_NaN();
  double final_test_mse = std::numeric_limits<double>::quiet_NaN();
};

template <Real T>
using EpochCallback = std::function<void(const TrainState<T>&)>;

/// Rescales the gradients so their global L2 norm is at most `max_norm`.
template <Real T>
void clip_gradients(std::vector<Tensor<T>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const T f = static_cast<T>(max_norm / norm);
  for (auto& g : grads) g = scale(g, f);
}

/// Batches of shuffled training indices; a trailing batch of one example
/// is dropped unless it is the only batch.
inline std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> idx,
                                                          std::size_t batch_size, Rng& rng) {
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), b + batch_size)));
  }
  if (out.size() > 1 && out.back().size() == 1) out.pop_back();
  return out;
}

/// Runs epochs state.epoch .. cfg.epochs - 1. On a non-finite loss or a
/// latent blow-up the state is rolled back to the end of the last good
/// epoch and the run stops with status diverged. The model's parameters
/// are set to state.params on return.
template <Real T>
TrainOutcome train(Model<T>& model, const Dataset<T>& data, const SplitIndex& split,
                   const TrainConfig& cfg, TrainState<T>& state,
                   const std::type_identity_t<EpochCallback<T>>& on_epoch = {}) {
  cfg.validate();
  if (split.train.empty()) throw Error("train: empty training split");
  TrainOutcome outcome;
  while (state.epoch < cfg.epochs) {
    const TrainState<T> good = state;
    const double lr = lr_schedule(state.epoch, cfg);
    double loss_sum = 0.0;
    std::size_t n_seen = 0;
    try {
      for (const auto& batch_idx : make_batches(split.train, cfg.batch_size, state.rng)) {
        const auto batch = collate(data, batch_idx);
        Tape<T> tape;
        ParamView<T> watched;
        for (const auto& p : state.params) watched.push_back(tape.watch(p));
        const auto loss = mse_loss(model.forward(batch.inputs, watched), batch.target);
        const double lv = static_cast<double>(loss.item());
        if (!std::isfinite(lv)) throw NumericError("non-finite training loss");
        const auto g = tape.backward(loss);
        std::vector<Tensor<T>> grads;
        for (const auto& w : watched) grads.push_back(g.of(w));
        if (cfg.clip_norm > 0) clip_gradients(grads, cfg.clip_norm);
        adam_step(state.params, grads, state.adam, lr);
        loss_sum += lv * static_cast<double>(batch_idx.size());
        n_seen += batch_idx.size();
      }
    } catch (const NumericError& e) {
      state = good;
      outcome.status = TrainStatus::diverged;
      outcome.message = "epoch " + std::to_string(state.epoch) + ": " + e.what();
      break;
    }
    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(n_seen);
    ++state.epoch;
    if (cfg.test_every > 0 && !split.test.empty() && state.epoch % cfg.test_every == 0) {
      rec.test_loss = evaluate(model, state.params, data, split.test, cfg.batch_size).mse;
    }
    state.history.push_back(rec);
    if (on_epoch) on_epoch(state);
  }
  model.params().values() = state.params;
  if (outcome.status == TrainStatus::completed) {
    outcome.final_train_mse = evaluate(model, state.params, data, split.train, cfg.batch_size).mse;
    if (!split.test.empty()) {
      outcome.final_test_mse = evaluate(model, state.params, data, split.test, cfg.batch_size).mse;
    }
  }
  return outcome;
}

template <Real T>
TrainOutcome train(Model<T>& model, const Dataset<T>& data, const SplitIndex& split,
                   const TrainConfig& cfg) {
  auto state = TrainState<T>::start(model, cfg);
  return train(model, data, split, cfg, state);
}

}  // namespace diano
