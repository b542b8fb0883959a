#include "wheelload/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include <Eigen/Core>

#include "wheelload/error.hpp"

namespace wheelload::ad {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

using Ext = ExtendedValues;

[[noreturn]] void shape_error(const std::string& what, const Shape& a, const Shape& b) {
  throw Error(ErrorCode::ShapeMismatch, what + ": " + to_string(a) + " vs " + to_string(b));
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw Error(ErrorCode::ShapeMismatch, "var is not attached to a tape");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw Error(ErrorCode::ShapeMismatch, "vars live on different tapes");
  return tape_of(a);
}

const Ext& shadow_of(Var a) { return a.tape()->shadow(a.id()); }

Array rounded(const Shape& shape, const Ext& ext) {
  Array a(shape);
  for (std::size_t i = 0; i < ext.size(); ++i) a[i] = static_cast<double>(ext[i]);
  return a;
}

// For every element of `out`, the flat index of the broadcast source element in `in`.
std::vector<std::size_t> broadcast_map(const Shape& out, const Shape& in) {
  const std::size_t n = element_count(out);
  std::vector<std::size_t> map(n);
  const std::size_t rank = out.size();
  const std::size_t offset = rank - in.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    in_stride[k + offset] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = src;
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      src += in_stride[k];
      if (idx[k] < out[k]) break;
      src -= in_stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  return map;
}

// Adds `grad` to `target`, summing over the axes along which target was broadcast.
void accumulate_reduced(Array& target, const Array& grad) {
  double* t = target.data();
  const double* g = grad.data();
  if (target.shape() == grad.shape()) {
    for (std::size_t i = 0; i < grad.size(); ++i) t[i] += g[i];
    return;
  }
  const auto map = broadcast_map(grad.shape(), target.shape());
  for (std::size_t i = 0; i < grad.size(); ++i) t[map[i]] += g[i];
}

template <typename V>
V expand(const V& values, const Shape& from, const Shape& to) {
  if (from == to) return values;
  const auto map = broadcast_map(to, from);
  V out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = values[map[i]];
  return out;
}

Array expand(const Array& a, const Shape& to) {
  if (a.shape() == to) return a;
  return Array(to, expand(a.values(), a.shape(), to));
}

template <typename T>
T sigmoid_t(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_t(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

enum class Binary { Add, Sub, Mul };

template <typename V>
V combine(Binary kind, const V& a, const V& b) {
  V out(a.size());
  switch (kind) {
    case Binary::Add:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
      break;
    case Binary::Sub:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
      break;
    case Binary::Mul:
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
      break;
  }
  return out;
}

Var binary(Binary kind, Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  const Shape out = broadcast_shapes(av.shape(), bv.shape());
  Array ae = expand(av, out);
  Array be = expand(bv, out);
  Ext ext;
  Array result;
  if (tape.extended()) {
    ext = combine(kind, expand(shadow_of(a), av.shape(), out), expand(shadow_of(b), bv.shape(), out));
    result = rounded(out, ext);
  } else {
    result = Array(out, combine(kind, ae.values(), be.values()));
  }
  const Op op = kind == Binary::Add ? Op::Add : kind == Binary::Sub ? Op::Sub : Op::Mul;
  if (kind == Binary::Mul) {
    return tape.record(
        op, std::move(result), {a.id(), b.id()},
        [ae = std::move(ae), be = std::move(be)](const Array& g, std::span<Array* const> pg) {
          if (pg[0]) {
            Array ga(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * be[i];
            accumulate_reduced(*pg[0], ga);
          }
          if (pg[1]) {
            Array gb(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * ae[i];
            accumulate_reduced(*pg[1], gb);
          }
        },
        std::move(ext));
  }
  const bool negate_b = kind == Binary::Sub;
  return tape.record(
      op, std::move(result), {a.id(), b.id()},
      [negate_b](const Array& g, std::span<Array* const> pg) {
        if (pg[0]) accumulate_reduced(*pg[0], g);
        if (!pg[1]) return;
        if (!negate_b) {
          accumulate_reduced(*pg[1], g);
          return;
        }
        Array neg(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
        accumulate_reduced(*pg[1], neg);
      },
      std::move(ext));
}

// Elementwise op. `f` is evaluated for double and long double; `dydx` gets
// the input and output in double.
template <typename F, typename D>
Var unary(Op op, Var a, F f, D dydx) {
  Tape& tape = tape_of(a);
  const Array& x = a.value();
  Ext ext;
  Array y(x.shape());
  if (tape.extended()) {
    const Ext& xs = shadow_of(a);
    ext.resize(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) ext[i] = f(xs[i]);
    y = rounded(x.shape(), ext);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  }
  Array slope(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) slope[i] = dydx(x[i], y[i]);
  return tape.record(
      op, std::move(y), {a.id()},
      [slope = std::move(slope)](const Array& g, std::span<Array* const> pg) {
        if (!pg[0]) return;
        double* t = pg[0]->data();
        for (std::size_t i = 0; i < g.size(); ++i) t[i] += g[i] * slope[i];
      },
      std::move(ext));
}

// Shape-only op: out[i] = in[index[i]]; gradient scatters back.
Var gather(Op op, Var a, Shape out, std::vector<std::size_t> index) {
  Tape& tape = tape_of(a);
  const Array& av = a.value();
  Array result(std::move(out));
  for (std::size_t i = 0; i < index.size(); ++i) result[i] = av[index[i]];
  Ext ext;
  if (tape.extended()) {
    const Ext& xs = shadow_of(a);
    ext.resize(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) ext[i] = xs[index[i]];
  }
  return tape.record(
      op, std::move(result), {a.id()},
      [index = std::move(index)](const Array& g, std::span<Array* const> pg) {
        if (!pg[0]) return;
        double* t = pg[0]->data();
        for (std::size_t i = 0; i < index.size(); ++i) t[index[i]] += g[i];
      },
      std::move(ext));
}

void require_matrix(const Array& a, const char* what) {
  if (a.rank() != 2) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " expects a 2-D array, got " + to_string(a.shape()));
  }
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_error("cannot broadcast", a, b);
    out[k] = std::max(da, db);
  }
  return out;
}

Array::Array(Shape shape, double fill) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Array::Array(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != element_count(shape_)) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + to_string(shape_) + " needs " +
                                              std::to_string(element_count(shape_)) + " values, got " +
                                              std::to_string(data_.size()));
  }
}

Array Array::identity(std::size_t n) {
  Array a({n, n});
  for (std::size_t i = 0; i < n; ++i) a.at(i, i) = 1.0;
  return a;
}

double Array::item() const {
  if (data_.size() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on array of shape " + to_string(shape_));
  return data_[0];
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Array Array::reshaped(Shape shape) const { return Array(std::move(shape), data_); }

bool Array::identical(const Array& other) const {
  if (shape_ != other.shape_) return false;
  return std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

std::string_view to_string(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Reshape: return "reshape";
    case Op::Broadcast: return "broadcast";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Sum: return "sum";
    case Op::SumRows: return "sum_rows";
    case Op::Mean: return "mean";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
  }
  return "unknown";
}

const Array& Var::value() const {
  if (tape_ == nullptr) throw Error(ErrorCode::ShapeMismatch, "var is not attached to a tape");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  if (extended() && node.shadow.empty()) node.shadow.assign(node.value.values().begin(), node.value.values().end());
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Array value) { return push(Node{Op::Leaf, std::move(value), {}, nullptr, true, {}}); }

Var Tape::constant(Array value) { return push(Node{Op::Constant, std::move(value), {}, nullptr, false, {}}); }

Var Tape::variable(Array value, ExtendedValues shadow) {
  if (!extended()) throw Error(ErrorCode::ShapeMismatch, "shadow values need an extended-precision tape");
  if (shadow.size() != value.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shadow has " + std::to_string(shadow.size()) + " values for shape " +
                                              to_string(value.shape()));
  }
  return push(Node{Op::Leaf, std::move(value), {}, nullptr, true, std::move(shadow)});
}

Var Tape::record(Op op, Array value, std::vector<NodeId> parents, BackwardFn backward, ExtendedValues shadow) {
  bool needs = false;
  for (auto p : parents) needs = needs || nodes_.at(p).requires_grad;
  return push(
      Node{op, std::move(value), std::move(parents), needs ? std::move(backward) : nullptr, needs, std::move(shadow)});
}

Array Gradients::wrt(Var v) const {
  if (has(v)) return grads_[v.id()];
  return Array(tape_->value(v.id()).shape());
}

Gradients backward(const Tape& tape, Var root) {
  if (root.tape() != &tape) throw Error(ErrorCode::ShapeMismatch, "root does not belong to this tape");
  const Array& rv = tape.value(root.id());
  if (rv.size() != 1) throw Error(ErrorCode::NonScalarRoot, "backward from root of shape " + to_string(rv.shape()));

  Gradients out;
  out.tape_ = &tape;
  const std::size_t n = root.id() + 1;
  out.grads_.resize(n);
  out.present_.assign(n, false);
  out.grads_[root.id()] = Array(rv.shape(), 1.0);
  out.present_[root.id()] = true;

  std::vector<Array*> parent_ptrs;
  for (std::size_t id = n; id-- > 0;) {
    if (!out.present_[id]) continue;
    const auto& node = tape.nodes_[id];
    if (!node.backward) continue;
    parent_ptrs.clear();
    for (auto p : node.parents) {
      if (!tape.nodes_[p].requires_grad) {
        parent_ptrs.push_back(nullptr);
        continue;
      }
      if (!out.present_[p]) {
        out.grads_[p] = Array(tape.nodes_[p].value.shape());
        out.present_[p] = true;
      }
      parent_ptrs.push_back(&out.grads_[p]);
    }
    node.backward(out.grads_[id], parent_ptrs);
  }
  return out;
}

Var add(Var a, Var b) { return binary(Binary::Add, a, b); }
Var sub(Var a, Var b) { return binary(Binary::Sub, a, b); }
Var mul(Var a, Var b) { return binary(Binary::Mul, a, b); }

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.dim(1) != bv.dim(0)) shape_error("matmul inner dimensions", av.shape(), bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Array result({m, n});
  Ext ext;
  if (tape.extended()) {
    ext.resize(m * n);
    MapMatrix<long double>(ext.data(), m, n).noalias() =
        ConstMapMatrix<long double>(shadow_of(a).data(), m, k) * ConstMapMatrix<long double>(shadow_of(b).data(), k, n);
    result = rounded({m, n}, ext);
  } else {
    MapMatrix<double>(result.data(), m, n).noalias() =
        ConstMapMatrix<double>(av.data(), m, k) * ConstMapMatrix<double>(bv.data(), k, n);
  }
  const NodeId ia = a.id(), ib = b.id();
  return tape.record(
      Op::MatMul, std::move(result), {ia, ib},
      [&tape, ia, ib, m, k, n](const Array& g, std::span<Array* const> pg) {
        ConstMapMatrix<double> G(g.data(), m, n);
        if (pg[0]) {
          MapMatrix<double>(pg[0]->data(), m, k).noalias() +=
              G * ConstMapMatrix<double>(tape.value(ib).data(), k, n).transpose();
        }
        if (pg[1]) {
          MapMatrix<double>(pg[1]->data(), k, n).noalias() +=
              ConstMapMatrix<double>(tape.value(ia).data(), m, k).transpose() * G;
        }
      },
      std::move(ext));
}

Var transpose(Var a) {
  const Array& av = a.value();
  require_matrix(av, "transpose");
  const std::size_t m = av.dim(0), n = av.dim(1);
  std::vector<std::size_t> index(m * n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) index[r * m + c] = c * n + r;
  }
  return gather(Op::Transpose, a, {n, m}, std::move(index));
}

Var reshape(Var a, const Shape& shape) {
  const Array& av = a.value();
  if (element_count(shape) != av.size()) shape_error("reshape element count", av.shape(), shape);
  std::vector<std::size_t> index(av.size());
  for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
  return gather(Op::Reshape, a, shape, std::move(index));
}

Var broadcast_to(Var a, const Shape& shape) {
  const Array& av = a.value();
  if (broadcast_shapes(av.shape(), shape) != shape) shape_error("cannot broadcast to target", av.shape(), shape);
  return gather(Op::Broadcast, a, shape, broadcast_map(shape, av.shape()));
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  Tape& tape = tape_of(parts.front());
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw Error(ErrorCode::ShapeMismatch, "concat axis out of range for " + to_string(first));
  Shape out = first;
  out[axis] = 0;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw Error(ErrorCode::ShapeMismatch, "vars live on different tapes");
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_error("concat rank", first, s);
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (k != axis && s[k] != first[k]) shape_error("concat extents", first, s);
    }
    out[axis] += s[axis];
  }
  // Every array is viewed as [outer, extent * inner].
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= first[k];
  for (std::size_t k = axis + 1; k < first.size(); ++k) inner *= first[k];
  const std::size_t out_row = out[axis] * inner;

  Array result(out);
  Ext ext(tape.extended() ? result.size() : 0);
  std::vector<std::size_t> widths, offsets;
  std::vector<NodeId> ids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const Array& v = p.value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.data() + o * w, w, result.data() + o * out_row + off);
      if (tape.extended()) std::copy_n(shadow_of(p).data() + o * w, w, ext.data() + o * out_row + off);
    }
    widths.push_back(w);
    offsets.push_back(off);
    ids.push_back(p.id());
    off += w;
  }
  return tape.record(
      Op::Concat, std::move(result), std::move(ids),
      [widths, offsets, outer, out_row](const Array& g, std::span<Array* const> pg) {
        for (std::size_t j = 0; j < pg.size(); ++j) {
          if (!pg[j]) continue;
          double* t = pg[j]->data();
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = g.data() + o * out_row + offsets[j];
            for (std::size_t i = 0; i < widths[j]; ++i) t[o * widths[j] + i] += src[i];
          }
        }
      },
      std::move(ext));
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t count) {
  const Shape& in = a.shape();
  if (axis >= in.size()) throw Error(ErrorCode::ShapeMismatch, "slice axis out of range for " + to_string(in));
  if (begin + count > in[axis]) {
    throw Error(ErrorCode::ShapeMismatch, "slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                                              ") exceeds extent " + std::to_string(in[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= in[k];
  for (std::size_t k = axis + 1; k < in.size(); ++k) inner *= in[k];
  const std::size_t in_row = in[axis] * inner;
  const std::size_t w = count * inner;
  std::vector<std::size_t> index(outer * w);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < w; ++i) index[o * w + i] = o * in_row + begin * inner + i;
  }
  Shape out = in;
  out[axis] = count;
  return gather(Op::Slice, a, std::move(out), std::move(index));
}

Var sum(Var a) {
  Tape& tape = tape_of(a);
  const Array& v = a.value();
  Array result = Array::scalar(0.0);
  Ext ext;
  if (tape.extended()) {
    long double s = 0;
    for (long double x : shadow_of(a)) s += x;
    ext = {s};
    result[0] = static_cast<double>(s);
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) s += v[i];
    result[0] = s;
  }
  return tape.record(
      Op::Sum, std::move(result), {a.id()},
      [](const Array& g, std::span<Array* const> pg) {
        if (!pg[0]) return;
        const double gv = g[0];
        for (auto& t : pg[0]->values()) t += gv;
      },
      std::move(ext));
}

Var sum_rows(Var a) {
  Tape& tape = tape_of(a);
  const Array& v = a.value();
  require_matrix(v, "sum_rows");
  const std::size_t m = v.dim(0), n = v.dim(1);
  Array result({n});
  Ext ext;
  if (tape.extended()) {
    ext.assign(n, 0);
    const Ext& xs = shadow_of(a);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) ext[c] += xs[r * n + c];
    }
    result = rounded({n}, ext);
  } else {
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) result[c] += v[r * n + c];
    }
  }
  return tape.record(
      Op::SumRows, std::move(result), {a.id()},
      [m, n](const Array& g, std::span<Array* const> pg) {
        if (!pg[0]) return;
        double* t = pg[0]->data();
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < n; ++c) t[r * n + c] += g[c];
        }
      },
      std::move(ext));
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "mean of empty array");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

double sigmoid(double x) { return sigmoid_t(x); }
double softplus(double x) { return softplus_t(x); }

Var tanh(Var a) {
  return unary(Op::Tanh, a, [](auto x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(Op::Sigmoid, a, [](auto x) { return sigmoid_t(x); }, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(Op::Softplus, a, [](auto x) { return softplus_t(x); }, [](double x, double) { return sigmoid_t(x); });
}

Var exp(Var a) {
  return unary(Op::Exp, a, [](auto x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(Op::Log, a, [](auto x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(Op::Square, a, [](auto x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var scale(Var a, double factor) {
  return unary(
      Op::Scale, a, [factor](auto x) { return decltype(x)(factor) * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double offset) {
  return unary(
      Op::AddScalar, a, [offset](auto x) { return x + decltype(x)(offset); }, [](double, double) { return 1.0; });
}

double finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Array& point, double h) {
  Array analytic;
  {
    Tape tape;
    Var x = tape.variable(point);
    Var y = f(tape, x);
    analytic = backward(tape, y).wrt(x);
  }
  Ext shadow(point.values().begin(), point.values().end());
  auto eval = [&]() {
    Tape tape(Precision::Extended);
    Var x = tape.variable(rounded(point.shape(), shadow), shadow);
    Var y = f(tape, x);
    if (y.value().size() != 1) throw Error(ErrorCode::NonScalarRoot, "function value has shape " + to_string(y.shape()));
    return tape.shadow(y.id())[0];
  };
  double worst = 0.0;
  const long double step = h;
  for (std::size_t i = 0; i < point.size(); ++i) {
    shadow[i] = point[i] + step;
    const long double up = eval();
    shadow[i] = point[i] - step;
    const long double down = eval();
    shadow[i] = point[i];
    const double fd = static_cast<double>((up - down) / (2 * step));
    const double err = std::abs(fd - analytic[i]) / std::max(std::abs(analytic[i]), 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace wheelload::ad
