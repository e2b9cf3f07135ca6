#include "progtrack/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace progtrack::ad {
namespace {

template <class Real>
Tape<Real>& same_tape(const Var<Real>& a, const Var<Real>& b) {
  if (!a.valid() || !b.valid() || &a.tape() != &b.tape()) {
    throw ContractViolation("operands are not recorded on the same tape");
  }
  return a.tape();
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ContractViolation(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Visits every index of `out` in row-major order, passing the linear output index and
// the matching linear input index given per-output-axis input strides.
template <class F>
void strided_walk(const Shape& out, const std::vector<std::int64_t>& in_strides, F&& f) {
  const int rank = static_cast<int>(out.size());
  const std::int64_t total = numel(out);
  if (rank == 0) {
    f(std::int64_t{0}, std::int64_t{0});
    return;
  }
  std::vector<int> idx(rank, 0);
  std::int64_t in = 0;
  const int last = rank - 1;
  const int inner = out[last];
  const std::int64_t inner_stride = in_strides[last];
  std::int64_t o = 0;
  while (o < total) {
    for (int j = 0; j < inner; ++j) f(o++, in + j * inner_stride);
    int ax = last - 1;
    while (ax >= 0) {
      ++idx[ax];
      in += in_strides[ax];
      if (idx[ax] < out[ax]) break;
      in -= in_strides[ax] * out[ax];
      idx[ax] = 0;
      --ax;
    }
    if (ax < 0) break;
  }
}

// Input strides aligned to the output's axes, 0 on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const auto st = strides_of(in);
  std::vector<std::int64_t> res(out.size(), 0);
  const int off = static_cast<int>(out.size() - in.size());
  for (std::size_t i = 0; i < in.size(); ++i) res[off + i] = (in[i] == 1) ? 0 : st[i];
  return res;
}

template <class Real>
Tensor<Real>& grad_slot(Tape<Real>& tape, int id) {
  auto& n = tape.node(id);
  if (n.grad.data.empty()) n.grad = Tensor<Real>(n.value.shape, Real(0));
  return n.grad;
}

template <class Real>
bool wants_grad(Tape<Real>& tape, int id) {
  return tape.node(id).requires_grad;
}

// C[m,n] += A[m,k] B[k,n]
template <class Real>
void gemm_nn(const Real* __restrict a, const Real* __restrict b, Real* __restrict c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    Real* crow = c + static_cast<std::int64_t>(i) * n;
    const Real* arow = a + static_cast<std::int64_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const Real av = arow[p];
      const Real* brow = b + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class Real>
void gemm_tn(const Real* __restrict a, const Real* __restrict b, Real* __restrict c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Real* arow = a + static_cast<std::int64_t>(i) * k;
    const Real* brow = b + static_cast<std::int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const Real av = arow[p];
      Real* crow = c + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class Real>
std::vector<Real> transposed(const Real* b, int rows, int cols) {
  std::vector<Real> t(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) t[static_cast<std::size_t>(c) * rows + r] = b[static_cast<std::size_t>(r) * cols + c];
  return t;
}

struct Split {
  std::int64_t outer, n, inner;
};

Split split_axis(const Shape& s, int axis) {
  Split sp{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

int normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ContractViolation(std::string(op) + ": axis out of range");
  return axis;
}

template <class Real>
Var<Real> unary(Prim kind, Var<Real> x, Tensor<Real> out, double scalar = 0.0) {
  return x.tape().record(kind, {x.id()}, std::move(out), {}, scalar);
}

template <class Real>
Var<Real> elementwise(Prim kind, Var<Real> a, Var<Real> b) {
  Tape<Real>& tape = same_tape(a, b);
  if (a.shape() != b.shape()) {
    Shape common;
    try {
      common = broadcast_shape(a.shape(), b.shape());
    } catch (const ContractViolation&) {
      shape_error(prim_name(kind), a.shape(), b.shape());
    }
    if (a.shape() != common) a = broadcast_to(a, common);
    if (b.shape() != common) b = broadcast_to(b, common);
  }
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  Tensor<Real> out(a.shape());
  auto& o = out.data;
  const std::size_t n = o.size();
  switch (kind) {
    case Prim::Add:
      for (std::size_t i = 0; i < n; ++i) o[i] = av[i] + bv[i];
      break;
    case Prim::Subtract:
      for (std::size_t i = 0; i < n; ++i) o[i] = av[i] - bv[i];
      break;
    case Prim::Multiply:
      for (std::size_t i = 0; i < n; ++i) o[i] = av[i] * bv[i];
      break;
    case Prim::Divide:
      for (std::size_t i = 0; i < n; ++i) o[i] = av[i] / bv[i];
      break;
    default:
      throw ContractViolation("not an elementwise binary primitive");
  }
  return tape.record(kind, {a.id(), b.id()}, std::move(out));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }
double normal_pdf(double x) { return 0.39894228040143267794 * std::exp(-0.5 * x * x); }

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_error("broadcast", a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

template <class Real> Var<Real> add(Var<Real> a, Var<Real> b) { return elementwise(Prim::Add, a, b); }
template <class Real> Var<Real> sub(Var<Real> a, Var<Real> b) { return elementwise(Prim::Subtract, a, b); }
template <class Real> Var<Real> mul(Var<Real> a, Var<Real> b) { return elementwise(Prim::Multiply, a, b); }
template <class Real> Var<Real> div(Var<Real> a, Var<Real> b) { return elementwise(Prim::Divide, a, b); }

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  Tape<Real>& tape = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) shape_error("matmul", sa, sb);
  const int m = sa[sa.size() - 2];
  const int k = sa.back();
  if (sb[sb.size() - 2] != k) shape_error("matmul", sa, sb);
  const int n = sb.back();
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  Tensor<Real> out(out_shape);
  if (sb.size() == 2) {
    const int rows = static_cast<int>(numel(sa) / k);
    gemm_nn(a.value().data.data(), b.value().data.data(), out.data.data(), rows, k, n);
    return tape.record(Prim::MatMul, {a.id(), b.id()}, std::move(out), {0});
  }
  if (!std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2)) shape_error("matmul", sa, sb);
  const std::int64_t batch = numel(sa) / (static_cast<std::int64_t>(m) * k);
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    gemm_nn(a.value().data.data() + bi * m * k, b.value().data.data() + bi * k * n,
            out.data.data() + bi * m * n, m, k, n);
  }
  return tape.record(Prim::MatMul, {a.id(), b.id()}, std::move(out), {1});
}

template <class Real>
Var<Real> permute(Var<Real> x, std::vector<int> axes) {
  const Shape& s = x.shape();
  if (axes.size() != s.size()) throw ContractViolation("permute: axes rank does not match " + to_string(s));
  std::vector<bool> seen(s.size(), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= static_cast<int>(s.size()) || seen[ax]) throw ContractViolation("permute: invalid axes");
    seen[ax] = true;
  }
  const auto st = strides_of(s);
  Shape out_shape(s.size());
  std::vector<std::int64_t> in_strides(s.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    out_shape[i] = s[axes[i]];
    in_strides[i] = st[axes[i]];
  }
  Tensor<Real> out(out_shape);
  const auto& src = x.value().data;
  strided_walk(out_shape, in_strides, [&](std::int64_t o, std::int64_t i) { out.data[o] = src[i]; });
  return x.tape().record(Prim::Transpose, {x.id()}, std::move(out), std::move(axes));
}

template <class Real>
Var<Real> transpose(Var<Real> x) {
  const int r = static_cast<int>(x.shape().size());
  if (r < 2) throw ContractViolation("transpose needs rank >= 2, got " + to_string(x.shape()));
  std::vector<int> axes(r);
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, std::move(axes));
}

template <class Real>
Var<Real> reshape(Var<Real> x, Shape shape) {
  if (numel(shape) != numel(x.shape())) shape_error("reshape", x.shape(), shape);
  Tensor<Real> out(std::move(shape), x.value().data);
  return x.tape().record(Prim::Reshape, {x.id()}, std::move(out));
}

template <class Real>
Var<Real> concat(std::span<const Var<Real>> xs, int axis) {
  if (xs.empty()) throw ContractViolation("concat of zero tensors");
  Tape<Real>& tape = xs[0].tape();
  const Shape& s0 = xs[0].shape();
  axis = normalize_axis(axis, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[axis] = 0;
  std::vector<int> ids;
  std::vector<int> lens;
  for (const auto& x : xs) {
    same_tape(xs[0], x);
    const Shape& s = x.shape();
    if (s.size() != s0.size()) shape_error("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (static_cast<int>(i) != axis && s[i] != s0[i]) shape_error("concat", s0, s);
    out_shape[axis] += s[axis];
    ids.push_back(x.id());
    lens.push_back(s[axis]);
  }
  Tensor<Real> out(out_shape);
  const Split sp = split_axis(out_shape, axis);
  std::int64_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto& src = xs[t].value().data;
    const std::int64_t block = static_cast<std::int64_t>(lens[t]) * sp.inner;
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src.begin() + o * block, block, out.data.begin() + o * sp.n * sp.inner + offset);
    }
    offset += block;
  }
  return tape.record(Prim::Concat, std::move(ids), std::move(out), {axis});
}

template <class Real>
Var<Real> slice(Var<Real> x, int axis, int start, int length) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, s.size(), "slice");
  if (start < 0 || length <= 0 || start + length > s[axis]) {
    throw ContractViolation("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") out of range for axis " + std::to_string(axis) + " of " + to_string(s));
  }
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor<Real> out(out_shape);
  const Split sp = split_axis(s, axis);
  const auto& src = x.value().data;
  const std::int64_t block = static_cast<std::int64_t>(length) * sp.inner;
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src.begin() + o * sp.n * sp.inner + start * sp.inner, block, out.data.begin() + o * block);
  }
  return x.tape().record(Prim::Slice, {x.id()}, std::move(out), {axis, start, length});
}

template <class Real>
Var<Real> broadcast_to(Var<Real> x, Shape shape) {
  if (broadcast_shape(x.shape(), shape) != shape) shape_error("broadcast", x.shape(), shape);
  Tensor<Real> out(shape);
  const auto& src = x.value().data;
  strided_walk(shape, broadcast_strides(x.shape(), shape),
               [&](std::int64_t o, std::int64_t i) { out.data[o] = src[i]; });
  return x.tape().record(Prim::Broadcast, {x.id()}, std::move(out));
}

namespace {

template <class Real>
Tensor<Real> reduce_axis(const Tensor<Real>& x, int axis, double factor) {
  const Split sp = split_axis(x.shape, axis);
  Shape out_shape = x.shape;
  out_shape.erase(out_shape.begin() + axis);
  Tensor<Real> out(out_shape);
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    Real* dst = out.data.data() + o * sp.inner;
    for (std::int64_t j = 0; j < sp.n; ++j) {
      const Real* src = x.data.data() + (o * sp.n + j) * sp.inner;
      for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  }
  if (factor != 1.0)
    for (auto& v : out.data) v = static_cast<Real>(v * factor);
  return out;
}

template <class Real>
Tensor<Real> reduce_all(const Tensor<Real>& x, double factor) {
  Real acc = 0;
  for (Real v : x.data) acc += v;
  if (factor != 1.0) acc = static_cast<Real>(acc * factor);
  return Tensor<Real>::scalar(acc);
}

}  // namespace

template <class Real>
Var<Real> sum(Var<Real> x, int axis) {
  axis = normalize_axis(axis, x.shape().size(), "sum");
  return x.tape().record(Prim::Sum, {x.id()}, reduce_axis(x.value(), axis, 1.0), {axis});
}

template <class Real>
Var<Real> sum(Var<Real> x) {
  return x.tape().record(Prim::Sum, {x.id()}, reduce_all(x.value(), 1.0));
}

template <class Real>
Var<Real> mean(Var<Real> x, int axis) {
  axis = normalize_axis(axis, x.shape().size(), "mean");
  const double f = 1.0 / x.shape()[axis];
  return x.tape().record(Prim::Mean, {x.id()}, reduce_axis(x.value(), axis, f), {axis});
}

template <class Real>
Var<Real> mean(Var<Real> x) {
  const double f = 1.0 / static_cast<double>(x.value().size());
  return x.tape().record(Prim::Mean, {x.id()}, reduce_all(x.value(), f));
}

template <class Real>
Var<Real> exp(Var<Real> x) {
  Tensor<Real> out(x.shape());
  const auto& v = x.value().data;
  for (std::size_t i = 0; i < v.size(); ++i) out.data[i] = std::exp(v[i]);
  return unary(Prim::Exp, x, std::move(out));
}

template <class Real>
Var<Real> log(Var<Real> x) {
  Tensor<Real> out(x.shape());
  const auto& v = x.value().data;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0) throw DomainError("log of negative input " + std::to_string(v[i]));
    out.data[i] = std::log(v[i]);
  }
  return unary(Prim::Log, x, std::move(out));
}

template <class Real>
Var<Real> sqrt(Var<Real> x) {
  Tensor<Real> out(x.shape());
  const auto& v = x.value().data;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0) throw DomainError("sqrt of negative input " + std::to_string(v[i]));
    out.data[i] = std::sqrt(v[i]);
  }
  return unary(Prim::Sqrt, x, std::move(out));
}

template <class Real>
Var<Real> pow(Var<Real> x, double exponent) {
  const bool integral = std::floor(exponent) == exponent;
  Tensor<Real> out(x.shape());
  const auto& v = x.value().data;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!integral && v[i] < 0) throw DomainError("non-integer power of negative input");
    out.data[i] = static_cast<Real>(std::pow(v[i], static_cast<Real>(exponent)));
  }
  return unary(Prim::Pow, x, std::move(out), exponent);
}

template <class Real>
Var<Real> max_const(Var<Real> x, double floor) {
  Tensor<Real> out(x.shape());
  const auto& v = x.value().data;
  const Real c = static_cast<Real>(floor);
  for (std::size_t i = 0; i < v.size(); ++i) out.data[i] = v[i] > c ? v[i] : c;
  return unary(Prim::MaxConst, x, std::move(out), floor);
}

template <class Real>
Var<Real> gelu(Var<Real> x) {
  Tensor<Real> out(x.shape());
  const auto& v = x.value().data;
  for (std::size_t i = 0; i < v.size(); ++i) out.data[i] = static_cast<Real>(v[i] * normal_cdf(v[i]));
  return unary(Prim::Gelu, x, std::move(out));
}

template <class Real>
Var<Real> sigmoid(Var<Real> x) {
  Tensor<Real> out(x.shape());
  const auto& v = x.value().data;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Real z = v[i];
    if (z >= 0) {
      out.data[i] = Real(1) / (Real(1) + std::exp(-z));
    } else {
      const Real e = std::exp(z);
      out.data[i] = e / (Real(1) + e);
    }
  }
  return unary(Prim::Sigmoid, x, std::move(out));
}

template <class Real>
Var<Real> softmax(Var<Real> x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ContractViolation("softmax of a scalar");
  const int n = s.back();
  const std::int64_t rows = numel(s) / n;
  Tensor<Real> out(s);
  const auto& v = x.value().data;
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* src = v.data() + r * n;
    Real* dst = out.data.data() + r * n;
    Real mx = src[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, src[j]);
    Real total = 0;
    for (int j = 0; j < n; ++j) {
      dst[j] = std::exp(src[j] - mx);
      total += dst[j];
    }
    const Real inv = Real(1) / total;
    for (int j = 0; j < n; ++j) dst[j] *= inv;
  }
  return unary(Prim::Softmax, x, std::move(out));
}

template <class Real>
Var<Real> layer_norm(Var<Real> x, double eps) {
  const Shape& s = x.shape();
  if (s.empty()) throw ContractViolation("layer_norm of a scalar");
  const int n = s.back();
  const std::int64_t rows = numel(s) / n;
  Tensor<Real> out(s);
  const auto& v = x.value().data;
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* src = v.data() + r * n;
    Real* dst = out.data.data() + r * n;
    Real mu = 0;
    for (int j = 0; j < n; ++j) mu += src[j];
    mu /= n;
    Real var = 0;
    for (int j = 0; j < n; ++j) var += (src[j] - mu) * (src[j] - mu);
    var /= n;
    const Real rstd = Real(1) / std::sqrt(var + static_cast<Real>(eps));
    for (int j = 0; j < n; ++j) dst[j] = (src[j] - mu) * rstd;
  }
  return unary(Prim::LayerNorm, x, std::move(out), eps);
}

template <class Real>
void backprop(Tape<Real>& tape, int id) {
  auto& node = tape.node(id);
  const Tensor<Real>& g = node.grad;
  const auto& gv = g.data;
  const std::size_t n = gv.size();
  const auto& in = node.inputs;

  switch (node.kind) {
    case Prim::Leaf:
    case Prim::Constant:
      return;
    case Prim::Add:
    case Prim::Subtract: {
      const Real sign = node.kind == Prim::Add ? Real(1) : Real(-1);
      if (wants_grad(tape, in[0])) {
        auto& ga = grad_slot(tape, in[0]).data;
        for (std::size_t i = 0; i < n; ++i) ga[i] += gv[i];
      }
      if (wants_grad(tape, in[1])) {
        auto& gb = grad_slot(tape, in[1]).data;
        for (std::size_t i = 0; i < n; ++i) gb[i] += sign * gv[i];
      }
      return;
    }
    case Prim::Multiply: {
      const auto& av = tape.node(in[0]).value.data;
      const auto& bv = tape.node(in[1]).value.data;
      if (wants_grad(tape, in[0])) {
        auto& ga = grad_slot(tape, in[0]).data;
        for (std::size_t i = 0; i < n; ++i) ga[i] += gv[i] * bv[i];
      }
      if (wants_grad(tape, in[1])) {
        auto& gb = grad_slot(tape, in[1]).data;
        for (std::size_t i = 0; i < n; ++i) gb[i] += gv[i] * av[i];
      }
      return;
    }
    case Prim::Divide: {
      const auto& bv = tape.node(in[1]).value.data;
      const auto& ov = node.value.data;
      if (wants_grad(tape, in[0])) {
        auto& ga = grad_slot(tape, in[0]).data;
        for (std::size_t i = 0; i < n; ++i) ga[i] += gv[i] / bv[i];
      }
      if (wants_grad(tape, in[1])) {
        auto& gb = grad_slot(tape, in[1]).data;
        for (std::size_t i = 0; i < n; ++i) gb[i] -= gv[i] * ov[i] / bv[i];
      }
      return;
    }
    case Prim::MatMul: {
      const auto& a = tape.node(in[0]).value;
      const auto& b = tape.node(in[1]).value;
      const int k = a.shape.back();
      const int nn = b.shape.back();
      if (node.ints[0] == 0) {
        const int rows = static_cast<int>(a.size() / k);
        if (wants_grad(tape, in[0])) {
          const auto bt = transposed(b.data.data(), k, nn);
          gemm_nn(gv.data(), bt.data(), grad_slot(tape, in[0]).data.data(), rows, nn, k);
        }
        if (wants_grad(tape, in[1])) {
          gemm_tn(a.data.data(), gv.data(), grad_slot(tape, in[1]).data.data(), rows, k, nn);
        }
        return;
      }
      const int m = a.shape[a.shape.size() - 2];
      const std::int64_t batch = a.size() / (static_cast<std::int64_t>(m) * k);
      const bool ga = wants_grad(tape, in[0]);
      const bool gb = wants_grad(tape, in[1]);
      Real* ga_ptr = ga ? grad_slot(tape, in[0]).data.data() : nullptr;
      Real* gb_ptr = gb ? grad_slot(tape, in[1]).data.data() : nullptr;
      for (std::int64_t bi = 0; bi < batch; ++bi) {
        const Real* gblk = gv.data() + bi * m * nn;
        if (ga) {
          const auto bt = transposed(b.data.data() + bi * k * nn, k, nn);
          gemm_nn(gblk, bt.data(), ga_ptr + bi * m * k, m, nn, k);
        }
        if (gb) gemm_tn(a.data.data() + bi * m * k, gblk, gb_ptr + bi * k * nn, m, k, nn);
      }
      return;
    }
    case Prim::Transpose: {
      if (!wants_grad(tape, in[0])) return;
      // out[o] = x[i] along the forward walk; scatter back along the same walk.
      const Shape& xs = tape.node(in[0]).value.shape;
      const auto st = strides_of(xs);
      std::vector<std::int64_t> in_strides(node.ints.size());
      for (std::size_t i = 0; i < node.ints.size(); ++i) in_strides[i] = st[node.ints[i]];
      auto& gx = grad_slot(tape, in[0]).data;
      strided_walk(g.shape, in_strides, [&](std::int64_t o, std::int64_t i) { gx[i] += gv[o]; });
      return;
    }
    case Prim::Reshape: {
      if (!wants_grad(tape, in[0])) return;
      auto& gx = grad_slot(tape, in[0]).data;
      for (std::size_t i = 0; i < n; ++i) gx[i] += gv[i];
      return;
    }
    case Prim::Concat: {
      const int axis = node.ints[0];
      const Split sp = split_axis(g.shape, axis);
      std::int64_t offset = 0;
      for (int t : in) {
        const std::int64_t len = tape.node(t).value.shape[axis];
        const std::int64_t block = len * sp.inner;
        if (wants_grad(tape, t)) {
          auto& gx = grad_slot(tape, t).data;
          for (std::int64_t o = 0; o < sp.outer; ++o) {
            const Real* src = gv.data() + o * sp.n * sp.inner + offset;
            Real* dst = gx.data() + o * block;
            for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
        offset += block;
      }
      return;
    }
    case Prim::Slice: {
      if (!wants_grad(tape, in[0])) return;
      const int axis = node.ints[0];
      const int start = node.ints[1];
      const int length = node.ints[2];
      const Split sp = split_axis(tape.node(in[0]).value.shape, axis);
      auto& gx = grad_slot(tape, in[0]).data;
      const std::int64_t block = static_cast<std::int64_t>(length) * sp.inner;
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        Real* dst = gx.data() + o * sp.n * sp.inner + start * sp.inner;
        const Real* src = gv.data() + o * block;
        for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
      }
      return;
    }
    case Prim::Broadcast: {
      if (!wants_grad(tape, in[0])) return;
      auto& gx = grad_slot(tape, in[0]).data;
      strided_walk(g.shape, broadcast_strides(tape.node(in[0]).value.shape, g.shape),
                   [&](std::int64_t o, std::int64_t i) { gx[i] += gv[o]; });
      return;
    }
    case Prim::Sum:
    case Prim::Mean: {
      if (!wants_grad(tape, in[0])) return;
      const auto& xs = tape.node(in[0]).value.shape;
      auto& gx = grad_slot(tape, in[0]).data;
      if (node.ints.empty()) {
        Real gval = gv[0];
        if (node.kind == Prim::Mean) gval = static_cast<Real>(gval * (1.0 / static_cast<double>(gx.size())));
        for (auto& v : gx) v += gval;
        return;
      }
      const Split sp = split_axis(xs, node.ints[0]);
      const double f = node.kind == Prim::Mean ? 1.0 / static_cast<double>(sp.n) : 1.0;
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        const Real* src = gv.data() + o * sp.inner;
        for (std::int64_t j = 0; j < sp.n; ++j) {
          Real* dst = gx.data() + (o * sp.n + j) * sp.inner;
          for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] += static_cast<Real>(src[i] * f);
        }
      }
      return;
    }
    default:
      break;
  }

  // Unary elementwise rules from here on.
  if (!wants_grad(tape, in[0])) return;
  const auto& xv = tape.node(in[0]).value.data;
  const auto& ov = node.value.data;
  auto& gx = grad_slot(tape, in[0]).data;
  switch (node.kind) {
    case Prim::Exp:
      for (std::size_t i = 0; i < n; ++i) gx[i] += gv[i] * ov[i];
      return;
    case Prim::Log:
      for (std::size_t i = 0; i < n; ++i) gx[i] += gv[i] / xv[i];
      return;
    case Prim::Sqrt:
      for (std::size_t i = 0; i < n; ++i) gx[i] += gv[i] * Real(0.5) / ov[i];
      return;
    case Prim::Pow: {
      const Real p = static_cast<Real>(node.scalar);
      for (std::size_t i = 0; i < n; ++i) gx[i] += gv[i] * p * std::pow(xv[i], p - Real(1));
      return;
    }
    case Prim::MaxConst: {
      const Real c = static_cast<Real>(node.scalar);
      for (std::size_t i = 0; i < n; ++i)
        if (xv[i] > c) gx[i] += gv[i];
      return;
    }
    case Prim::Gelu:
      for (std::size_t i = 0; i < n; ++i) {
        const double x = xv[i];
        gx[i] += static_cast<Real>(gv[i] * (normal_cdf(x) + x * normal_pdf(x)));
      }
      return;
    case Prim::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) gx[i] += gv[i] * ov[i] * (Real(1) - ov[i]);
      return;
    case Prim::Softmax: {
      const int w = g.shape.back();
      const std::int64_t rows = static_cast<std::int64_t>(n) / w;
      for (std::int64_t r = 0; r < rows; ++r) {
        const Real* gr = gv.data() + r * w;
        const Real* orow = ov.data() + r * w;
        Real dot = 0;
        for (int j = 0; j < w; ++j) dot += gr[j] * orow[j];
        Real* dst = gx.data() + r * w;
        for (int j = 0; j < w; ++j) dst[j] += orow[j] * (gr[j] - dot);
      }
      return;
    }
    case Prim::LayerNorm: {
      const int w = g.shape.back();
      const std::int64_t rows = static_cast<std::int64_t>(n) / w;
      const Real eps = static_cast<Real>(node.scalar);
      for (std::int64_t r = 0; r < rows; ++r) {
        const Real* xr = xv.data() + r * w;
        const Real* yr = ov.data() + r * w;
        const Real* gr = gv.data() + r * w;
        Real mu = 0;
        for (int j = 0; j < w; ++j) mu += xr[j];
        mu /= w;
        Real var = 0;
        for (int j = 0; j < w; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= w;
        const Real rstd = Real(1) / std::sqrt(var + eps);
        Real gmean = 0;
        Real gymean = 0;
        for (int j = 0; j < w; ++j) {
          gmean += gr[j];
          gymean += gr[j] * yr[j];
        }
        gmean /= w;
        gymean /= w;
        Real* dst = gx.data() + r * w;
        for (int j = 0; j < w; ++j) dst[j] += rstd * (gr[j] - gmean - yr[j] * gymean);
      }
      return;
    }
    default:
      throw ContractViolation(std::string("no reverse rule for primitive ") + prim_name(node.kind));
  }
}

#define PROGTRACK_INSTANTIATE_OPS(R)                                        \
  template Var<R> add(Var<R>, Var<R>);                                      \
  template Var<R> sub(Var<R>, Var<R>);                                      \
  template Var<R> mul(Var<R>, Var<R>);                                      \
  template Var<R> div(Var<R>, Var<R>);                                      \
  template Var<R> matmul(Var<R>, Var<R>);                                   \
  template Var<R> permute(Var<R>, std::vector<int>);                        \
  template Var<R> transpose(Var<R>);                                        \
  template Var<R> reshape(Var<R>, Shape);                                   \
  template Var<R> concat(std::span<const Var<R>>, int);                     \
  template Var<R> slice(Var<R>, int, int, int);                             \
  template Var<R> broadcast_to(Var<R>, Shape);                              \
  template Var<R> sum(Var<R>, int);                                         \
  template Var<R> sum(Var<R>);                                              \
  template Var<R> mean(Var<R>, int);                                        \
  template Var<R> mean(Var<R>);                                             \
  template Var<R> exp(Var<R>);                                              \
  template Var<R> log(Var<R>);                                              \
  template Var<R> sqrt(Var<R>);                                             \
  template Var<R> pow(Var<R>, double);                                      \
  template Var<R> max_const(Var<R>, double);                                \
  template Var<R> gelu(Var<R>);                                             \
  template Var<R> sigmoid(Var<R>);                                          \
  template Var<R> softmax(Var<R>);                                          \
  template Var<R> layer_norm(Var<R>, double);                               \
  template void backprop(Tape<R>&, int);

PROGTRACK_INSTANTIATE_OPS(float)
PROGTRACK_INSTANTIATE_OPS(double)

}  // namespace progtrack::ad
