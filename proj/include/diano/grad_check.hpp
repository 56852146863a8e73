#pragma once

/// @file grad_check.hpp
/// @brief Central finite-difference verification of tape gradients.

#include <functional>
#include <random>

#include "diano/ops.hpp"

namespace diano {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-5;
  /// Use the fourth-order five-point difference instead of the plain
  /// central difference. Its truncation error allows a larger eps, which
  /// keeps rounding noise in f well below tol on deep models.
  bool fourth_order = true;
  /// Per-input cap on the number of probed entries; larger inputs are
  /// sampled without replacement using `seed`.
  std::size_t max_entries_per_input = 64;
  std::uint64_t seed = 7;
  /// Element denominators are floored at this fraction of the largest
  /// analytic gradient magnitude of the input, so entries that are tiny
  /// relative to the rest are judged on an absolute scale.
  double relative_floor = 1e-3;
  /// Same idea across inputs: entries below this fraction of the largest
  /// analytic gradient over all inputs are judged on an absolute scale.
  double global_floor = 1e-6;
};

struct GradCheckFailure {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::vector<GradCheckFailure> failures;
};

/// Compares tape gradients of a scalar function of several tensors with
/// finite differences of f along each probed coordinate.
inline GradCheckReport grad_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    const std::vector<Tensor<double>>& inputs, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  Tape<double> tape;
  std::vector<Tensor<double>> watched;
  watched.reserve(inputs.size());
  for (const auto& x : inputs) watched.push_back(tape.watch(x));
  const Tensor<double> root = f(watched);
  if (root.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued");
  std::vector<Tensor<double>> analytic;
  if (root.attached()) {
    const auto grads = tape.backward(root);
    for (const auto& w : watched) analytic.push_back(grads.of(w));
  } else {
    for (const auto& x : inputs) analytic.push_back(Tensor<double>::zeros(x.shape()));
  }

  double global_scale = 0.0;
  for (const auto& a : analytic) global_scale = std::max(global_scale, max_abs(a));

  std::mt19937_64 rng(opt.seed);
  for (std::size_t q = 0; q < inputs.size(); ++q) {
    const std::size_t n = inputs[q].numel();
    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (n > opt.max_entries_per_input) {
      std::shuffle(probe.begin(), probe.end(), rng);
      probe.resize(opt.max_entries_per_input);
      std::sort(probe.begin(), probe.end());
    }
    const double scale = max_abs(analytic[q]);
    const double floor =
        std::max({opt.relative_floor * scale, opt.global_floor * global_scale, 1e-300});
    for (std::size_t i : probe) {
      auto eval = [&](double delta) {
        std::vector<Tensor<double>> shifted = inputs;
        auto v = inputs[q].to_vector();
        v[i] += delta;
        shifted[q] = Tensor<double>(inputs[q].shape(), std::move(v));
        return f(shifted).item();
      };
      const double h = opt.eps;
      const double numeric =
          opt.fourth_order
              ? (8.0 * (eval(h) - eval(-h)) - (eval(2 * h) - eval(-2 * h))) / (12.0 * h)
              : (eval(h) - eval(-h)) / (2.0 * h);
      const double a = analytic[q][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) == 0.0 ? 0.0 : std::abs(a - numeric) / denom;
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      if (!(rel < opt.tol)) {
        report.passed = false;
        report.failures.push_back({q, i, a, numeric, rel});
      }
    }
  }
  return report;
}

inline GradCheckReport grad_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& f,
    const Tensor<double>& x, const GradCheckOptions& opt = {}) {
  return grad_check(
      [&](const std::vector<Tensor<double>>& xs) { return f(xs[0]); },
      std::vector<Tensor<double>>{x}, opt);
}

}  // namespace diano
