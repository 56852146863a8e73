#pragma once

/// @file tensor.hpp
/// @brief Dense row-major tensors and the reverse-mode recording tape.
///
/// A Tensor owns an immutable, shared value buffer. Operations never mutate
/// their inputs; they produce new tensors. When any input of an operation is
/// attached to a Tape the result is attached as well and a backward rule is
/// appended to the tape. Backward replays the rules in exact reverse order of
/// recording, which is a valid reverse topological order because a node can
/// only consume variables that already existed when it was recorded.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

namespace diano {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when a forward result contains NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

enum class DType : std::uint8_t { float32 = 1, float64 = 2 };

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return DType::float32;
  } else {
    static_assert(std::is_same_v<T, double>, "tensors hold float or double");
    return DType::float64;
  }
}

template <class T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

inline constexpr std::size_t kNoVar = std::numeric_limits<std::size_t>::max();

template <Real T>
class Tensor;
template <Real T>
class Tape;

namespace detail {

template <Real T>
class BackwardContext;

template <Real T>
struct TapeState {
  struct Node {
    std::vector<std::size_t> inputs;  // kNoVar for constant inputs
    std::size_t output = kNoVar;
    std::function<void(BackwardContext<T>&)> backward;
  };

  std::vector<std::size_t> var_sizes;
  std::vector<Node> nodes;
  bool consumed = false;

  std::size_t new_var(std::size_t size) {
    if (consumed) throw TapeError("tape was consumed by backward");
    var_sizes.push_back(size);
    return var_sizes.size() - 1;
  }
};

/// Handed to each backward rule: the adjoint of the node output plus lazily
/// allocated accumulators for each input that needs a gradient.
template <Real T>
class BackwardContext {
 public:
  BackwardContext(const TapeState<T>& state,
                  std::vector<std::vector<T>>& grads,
                  const typename TapeState<T>::Node& node)
      : state_(state), grads_(grads), node_(node) {}

  std::span<const T> grad_out() const { return grads_[node_.output]; }

  bool needs(std::size_t input) const {
    return node_.inputs[input] != kNoVar;
  }

  std::vector<T>& grad(std::size_t input) {
    const std::size_t var = node_.inputs[input];
    auto& g = grads_[var];
    if (g.empty()) g.assign(state_.var_sizes[var], T(0));
    return g;
  }

  void accumulate(std::size_t input, std::span<const T> contribution) {
    if (!needs(input)) return;
    auto& g = grad(input);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += contribution[i];
  }

 private:
  const TapeState<T>& state_;
  std::vector<std::vector<T>>& grads_;
  const typename TapeState<T>::Node& node_;
};

}  // namespace detail

template <Real T>
class Tensor {
 public:
  using value_type = T;

  /// A 0-d tensor holding a single zero.
  Tensor() : Tensor(Shape{}, std::vector<T>{T(0)}) {}

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<T>>(std::move(values))) {
    if (shape_numel(shape_) != data_->size()) {
      throw ShapeError("tensor shape " + shape_string(shape_) + " needs " +
                       std::to_string(shape_numel(shape_)) + " values, got " +
                       std::to_string(data_->size()));
    }
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor full(Shape shape, T value) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }
  static Tensor scalar(T value) { return Tensor(Shape{}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_->size(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<const T> values() const { return *data_; }
  const T* data() const { return data_->data(); }
  T operator[](std::size_t i) const { return (*data_)[i]; }
  std::vector<T> to_vector() const { return *data_; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    }
    return (*data_)[0];
  }

  bool attached() const { return tape_ != nullptr; }
  Tensor detached() const {
    Tensor t = *this;
    t.tape_.reset();
    t.var_ = kNoVar;
    return t;
  }

  /// Same storage viewed under a new shape; no tape record.
  Tensor with_shape(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("cannot view " + shape_string(shape_) + " as " +
                       shape_string(shape));
    }
    Tensor t = detached();
    t.shape_ = std::move(shape);
    return t;
  }

  std::size_t var() const { return var_; }
  const std::shared_ptr<detail::TapeState<T>>& tape_state() const {
    return tape_;
  }

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  friend class Tape<T>;
  template <Real U, class F>
  friend Tensor<U> record(const char*, Shape, std::vector<U>,
                          std::initializer_list<const Tensor<U>*>, F&&);
  template <Real U, class F>
  friend Tensor<U> record_many(const char*, Shape, std::vector<U>,
                               const std::vector<const Tensor<U>*>&, F&&);

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  std::shared_ptr<detail::TapeState<T>> tape_;
  std::size_t var_ = kNoVar;
};

/// Gradients produced by one backward pass, keyed by tape variable.
template <Real T>
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::shared_ptr<const detail::TapeState<T>> state,
            std::vector<std::vector<T>> grads)
      : state_(std::move(state)), grads_(std::move(grads)) {}

  /// d(root)/d(x); zeros when x did not influence the root.
  Tensor<T> of(const Tensor<T>& x) const {
    if (!x.attached() || x.tape_state() != state_) {
      throw TapeError("tensor is not attached to the differentiated tape");
    }
    const auto& g = grads_[x.var()];
    if (g.empty()) return Tensor<T>::zeros(x.shape());
    return Tensor<T>(x.shape(), g);
  }

  bool has(const Tensor<T>& x) const {
    return x.attached() && x.tape_state() == state_ &&
           !grads_[x.var()].empty();
  }

 private:
  std::shared_ptr<const detail::TapeState<T>> state_;
  std::vector<std::vector<T>> grads_;
};

/// Owning handle to one recording. Distinct tapes are independent.
template <Real T>
class Tape {
 public:
  Tape() : state_(std::make_shared<detail::TapeState<T>>()) {}

  /// Returns a leaf variable sharing x's values.
  Tensor<T> watch(const Tensor<T>& x) {
    Tensor<T> t = x.detached();
    t.tape_ = state_;
    t.var_ = state_->new_var(x.numel());
    return t;
  }

  std::size_t size() const { return state_->nodes.size(); }

  /// Reverse sweep from a scalar root. The tape is consumed afterwards.
  Gradients<T> backward(const Tensor<T>& root) {
    if (root.numel() != 1) {
      throw ShapeError("backward root must be scalar, got shape " +
                       shape_string(root.shape()));
    }
    if (!root.attached() || root.tape_state() != state_) {
      throw TapeError("backward root is not attached to this tape");
    }
    if (state_->consumed) throw TapeError("tape already consumed");
    std::vector<std::vector<T>> grads(state_->var_sizes.size());
    grads[root.var()] = {T(1)};
    auto& nodes = state_->nodes;
    for (std::size_t k = nodes.size(); k-- > 0;) {
      auto& node = nodes[k];
      if (node.output > root.var() || grads[node.output].empty()) continue;
      detail::BackwardContext<T> ctx(*state_, grads, node);
      node.backward(ctx);
      if (node.output != root.var()) {
        // Intermediate adjoints are dead once their producer ran.
        std::vector<T>().swap(grads[node.output]);
      }
    }
    state_->consumed = true;
    nodes.clear();
    nodes.shrink_to_fit();
    return Gradients<T>(state_, std::move(grads));
  }

 private:
  std::shared_ptr<detail::TapeState<T>> state_;
};

namespace detail {

template <Real T>
void check_finite(const char* op, std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in result");
    }
  }
}

template <Real T>
std::shared_ptr<TapeState<T>> common_tape(
    const char* op, const std::vector<const Tensor<T>*>& inputs) {
  std::shared_ptr<TapeState<T>> tape;
  for (const auto* in : inputs) {
    if (!in || !in->attached()) continue;
    if (tape && tape != in->tape_state()) {
      throw TapeError(std::string(op) + ": inputs live on different tapes");
    }
    tape = in->tape_state();
  }
  return tape;
}

}  // namespace detail

/// Builds an op result and, if any input is attached, records its backward
/// rule. The rule receives a BackwardContext whose input order matches
/// `inputs`. Rules must capture only detached values.
template <Real T, class F>
Tensor<T> record_many(const char* op, Shape shape, std::vector<T> values,
                      const std::vector<const Tensor<T>*>& inputs,
                      F&& backward) {
  detail::check_finite<T>(op, values);
  Tensor<T> out(std::move(shape), std::move(values));
  auto tape = detail::common_tape<T>(op, inputs);
  if (!tape) return out;
  typename detail::TapeState<T>::Node node;
  node.inputs.reserve(inputs.size());
  for (const auto* in : inputs) {
    node.inputs.push_back(in && in->attached() ? in->var() : kNoVar);
  }
  node.output = tape->new_var(out.numel());
  node.backward = std::forward<F>(backward);
  out.tape_ = tape;
  out.var_ = node.output;
  tape->nodes.push_back(std::move(node));
  return out;
}

template <Real T, class F>
Tensor<T> record(const char* op, Shape shape, std::vector<T> values,
                 std::initializer_list<const Tensor<T>*> inputs,
                 F&& backward) {
  return record_many<T>(op, std::move(shape), std::move(values),
                        std::vector<const Tensor<T>*>(inputs),
                        std::forward<F>(backward));
}

/// Row-major strides for a shape.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace diano
