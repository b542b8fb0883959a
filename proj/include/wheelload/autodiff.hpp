#pragma once

// Operation-level reverse-mode automatic differentiation over dense
// row-major double arrays. A Tape records every operation applied to Vars
// that live on it; backward() walks the tape in reverse.
//
// Elementwise binary ops broadcast numpy-style (trailing dimensions aligned,
// extent 1 stretches). Stochastic quantities (reparameterisation noise,
// dropout masks) enter as constants, so gradients flow only through the
// deterministic transform.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace wheelload::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);
/// Broadcast result shape; throws ShapeMismatch naming both shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

class Array {
 public:
  Array() : shape_{}, data_(1, 0.0) {}
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> values);

  static Array scalar(double value) { return Array(Shape{}, std::vector<double>{value}); }
  static Array matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Array({rows, cols}, std::move(values));
  }
  static Array identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Value of a one-element array.
  double item() const;
  bool all_finite() const;
  Array reshaped(Shape shape) const;

  /// Bit-exact equality of shape and values.
  bool identical(const Array& other) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

using NodeId = std::size_t;

enum class Op {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  MatMul,
  Transpose,
  Reshape,
  Broadcast,
  Concat,
  Slice,
  Sum,
  SumRows,
  Mean,
  Tanh,
  Sigmoid,
  Softplus,
  Exp,
  Log,
  Square,
  Scale,
  AddScalar,
};

std::string_view to_string(Op op);

class Tape;
class Gradients;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  NodeId id() const { return id_; }
  Tape* tape() const { return tape_; }
  const Array& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Accumulates the node's incoming gradient into its parents' gradients.
/// parent_grads[k] is null when parent k does not require a gradient.
using BackwardFn = std::function<void(const Array& grad_out, std::span<Array* const> parent_grads)>;

/// Forward precision of a tape. Extended tapes carry a long double shadow of
/// every value (the double value is its rounding); they exist so finite
/// differences are not swamped by double round-off.
enum class Precision { Double, Extended };

using ExtendedValues = std::vector<long double>;

class Tape {
 public:
  explicit Tape(Precision precision = Precision::Double) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable leaf.
  Var variable(Array value);
  /// Leaf excluded from differentiation.
  Var constant(Array value);
  /// Extended tapes only: leaf whose shadow is given explicitly.
  Var variable(Array value, ExtendedValues shadow);

  Var record(Op op, Array value, std::vector<NodeId> parents, BackwardFn backward, ExtendedValues shadow = {});

  Precision precision() const { return precision_; }
  bool extended() const { return precision_ == Precision::Extended; }
  std::size_t size() const { return nodes_.size(); }
  const Array& value(NodeId id) const { return nodes_[id].value; }
  const ExtendedValues& shadow(NodeId id) const { return nodes_[id].shadow; }
  Op op(NodeId id) const { return nodes_[id].op; }
  const std::vector<NodeId>& parents(NodeId id) const { return nodes_[id].parents; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  void clear() { nodes_.clear(); }

 private:
  friend Gradients backward(const Tape& tape, Var root);

  struct Node {
    Op op;
    Array value;
    std::vector<NodeId> parents;
    BackwardFn backward;
    bool requires_grad;
    ExtendedValues shadow;
  };
  Var push(Node node);

  Precision precision_;
  std::deque<Node> nodes_;  // stable addresses: value() references survive later records
};

class Gradients {
 public:
  /// Gradient of the root w.r.t. v; zeros when v is unreachable.
  Array wrt(Var v) const;
  Array operator[](Var v) const { return wrt(v); }
  bool has(Var v) const { return v.id() < present_.size() && present_[v.id()]; }

 private:
  friend Gradients backward(const Tape& tape, Var root);
  const Tape* tape_ = nullptr;
  std::vector<Array> grads_;
  std::vector<bool> present_;
};

/// Reverse sweep from a one-element root. Throws NonScalarRoot otherwise.
Gradients backward(const Tape& tape, Var root);

// Primitives ---------------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// [m, k] x [k, n] -> [m, n].
Var matmul(Var a, Var b);
/// 2-D transpose.
Var transpose(Var a);
/// Same values, new shape with equal element count.
Var reshape(Var a, const Shape& shape);
Var broadcast_to(Var a, const Shape& shape);
/// Concatenate along `axis`; other extents must agree.
Var concat(const std::vector<Var>& parts, std::size_t axis);
/// Sub-range [begin, begin + count) of `axis`.
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t count);
/// Sum of all elements -> scalar.
Var sum(Var a);
/// [m, n] -> [n], summing over rows.
Var sum_rows(Var a);
Var mean(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
/// log(1 + exp(x)), evaluated without overflow or underflow to NaN.
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

double sigmoid(double x);
double softplus(double x);

/// Central finite differences of f at `point`, compared to backward().
/// Returns max_i |fd_i - g_i| / max(|g_i|, 1e-8). f must be deterministic.
/// The perturbed evaluations run on extended-precision tapes.
double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Array& point, double h = 1e-6);

}  // namespace wheelload::ad
