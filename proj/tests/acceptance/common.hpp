#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <string>

#include "diano/datagen.hpp"
#include "diano/grad_check.hpp"

namespace acceptance {

using namespace diano;
using TD = Tensor<double>;
using GF = GridField<double>;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

/// Progress line under the criterion currently running.
inline void note(const std::string& s) { std::cout << "    " << s << std::endl; }

inline std::string sci(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", digits, v);
  return buf;
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline TD random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return TD(std::move(shape), std::move(v));
}

/// Dense Gaussian elimination with partial pivoting.
inline std::vector<double> dense_solve(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a[i * n + k]) > std::abs(a[piv * n + k])) piv = i;
    for (std::size_t j = 0; j < n; ++j) std::swap(a[k * n + j], a[piv * n + j]);
    std::swap(b[k], b[piv]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a[i * n + k] / a[k * n + k];
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a[i * n + j] -= f * a[k * n + j];
      b[i] -= f * b[k];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i * n + j] * x[j];
    x[i] = s / a[i * n + i];
  }
  return x;
}

template <Real T>
std::vector<GridField<T>> as(const std::vector<GF>& fields) {
  std::vector<GridField<T>> out;
  for (const auto& f : fields) {
    if constexpr (std::is_same_v<T, double>) {
      out.push_back(f);
    } else {
      out.push_back(GridField<T>(cast<T>(f.values()), f.extents()));
    }
  }
  return out;
}

/// Relative difference used for the "ties within 5%" ordering rule.
inline bool not_greater(double a, double b, double tie = 0.05) { return a <= b * (1.0 + tie); }

}  // namespace acceptance
