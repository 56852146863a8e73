#pragma once

/// @file grid_field.hpp
/// @brief Fields sampled on uniform structured grids.

#include "diano/ops.hpp"

namespace diano {

struct Extent {
  double min = 0.0;
  double max = 1.0;
  bool operator==(const Extent&) const = default;
};

/// Values of shape [B, C, n1[, n2[, n3]]] plus the physical extent of each
/// spatial axis. Spacing along an axis is (max - min) / (n - 1).
template <Real T>
class GridField {
 public:
  GridField() = default;

  GridField(Tensor<T> values, std::vector<Extent> extents)
      : values_(std::move(values)), extents_(std::move(extents)) {
    if (values_.ndim() < 3 || values_.ndim() > 5) {
      throw ShapeError("GridField: values must be [B, C, n1[, n2[, n3]]], got " +
                       shape_string(values_.shape()));
    }
    if (extents_.size() != values_.ndim() - 2) {
      throw ShapeError("GridField: need one extent per spatial axis");
    }
    for (const auto& e : extents_) {
      if (!(e.max > e.min)) throw ShapeError("GridField: extent max must exceed min");
    }
  }

  /// Unit-square (or cube) extents.
  static GridField unit(Tensor<T> values) {
    const std::size_t d = values.ndim() - 2;
    return GridField(std::move(values), std::vector<Extent>(d, Extent{0.0, 1.0}));
  }

  const Tensor<T>& values() const { return values_; }
  const std::vector<Extent>& extents() const { return extents_; }
  std::size_t spatial_dims() const { return extents_.size(); }
  std::size_t batch() const { return values_.dim(0); }
  std::size_t channels() const { return values_.dim(1); }
  std::size_t size(std::size_t axis) const { return values_.dim(2 + axis); }
  std::vector<std::size_t> sizes() const {
    return {values_.shape().begin() + 2, values_.shape().end()};
  }

  double spacing(std::size_t axis) const {
    const std::size_t n = size(axis);
    const double len = extents_.at(axis).max - extents_.at(axis).min;
    return n > 1 ? len / static_cast<double>(n - 1) : len;
  }

  double coordinate(std::size_t axis, std::size_t i) const {
    return extents_.at(axis).min + spacing(axis) * static_cast<double>(i);
  }

  /// Same grid, new values (shape may change only in batch/channels).
  GridField with_values(Tensor<T> values) const {
    GridField g = *this;
    if (values.ndim() != values_.ndim() ||
        !std::equal(values.shape().begin() + 2, values.shape().end(),
                    values_.shape().begin() + 2)) {
      throw ShapeError("GridField: new values " + shape_string(values.shape()) +
                       " do not live on grid " + shape_string(values_.shape()));
    }
    g.values_ = std::move(values);
    return g;
  }

  /// Same extents, any spatial sizes (resampling, pooling, upsampling).
  GridField regridded(Tensor<T> values) const {
    return GridField(std::move(values), extents_);
  }

 private:
  Tensor<T> values_;
  std::vector<Extent> extents_;
};

template <Real T>
void check_same_grid(const GridField<T>& a, const GridField<T>& b, const char* op) {
  if (a.sizes() != b.sizes() || a.extents() != b.extents()) {
    throw ShapeError(std::string(op) + ": fields live on different grids");
  }
}

template <Real T>
GridField<T> operator+(const GridField<T>& a, const GridField<T>& b) {
  check_same_grid(a, b, "add");
  return a.with_values(add(a.values(), b.values()));
}
template <Real T>
GridField<T> operator-(const GridField<T>& a, const GridField<T>& b) {
  check_same_grid(a, b, "sub");
  return a.with_values(sub(a.values(), b.values()));
}
template <Real T>
GridField<T> operator*(T s, const GridField<T>& a) {
  return a.with_values(scale(a.values(), s));
}
/// Multiplication by a (possibly tape-attached) scalar tensor.
template <Real T>
GridField<T> operator*(const Tensor<T>& s, const GridField<T>& a) {
  return a.with_values(mul(a.values(), s));
}

}  // namespace diano
