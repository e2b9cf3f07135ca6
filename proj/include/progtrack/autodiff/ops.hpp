#pragma once

#include <span>
#include <vector>

#include "progtrack/autodiff/tape.hpp"

namespace progtrack::ad {

// Primitive catalogue. Binary elementwise ops broadcast numpy-style by recording
// explicit Broadcast nodes first, so every gradient rule only sees equal shapes.

template <class Real> Var<Real> add(Var<Real> a, Var<Real> b);
template <class Real> Var<Real> sub(Var<Real> a, Var<Real> b);
template <class Real> Var<Real> mul(Var<Real> a, Var<Real> b);
template <class Real> Var<Real> div(Var<Real> a, Var<Real> b);

// a: [..., M, K]. b: [K, N] (shared weight) or [..., K, N] with the same leading dims.
template <class Real> Var<Real> matmul(Var<Real> a, Var<Real> b);

// General axis permutation; transpose() swaps the last two axes.
template <class Real> Var<Real> permute(Var<Real> x, std::vector<int> axes);
template <class Real> Var<Real> transpose(Var<Real> x);
template <class Real> Var<Real> reshape(Var<Real> x, Shape shape);
template <class Real> Var<Real> concat(std::span<const Var<Real>> xs, int axis);
template <class Real> Var<Real> slice(Var<Real> x, int axis, int start, int length);
template <class Real> Var<Real> broadcast_to(Var<Real> x, Shape shape);

// Reductions drop the reduced axis; the no-axis overloads reduce to a scalar.
template <class Real> Var<Real> sum(Var<Real> x, int axis);
template <class Real> Var<Real> sum(Var<Real> x);
template <class Real> Var<Real> mean(Var<Real> x, int axis);
template <class Real> Var<Real> mean(Var<Real> x);

template <class Real> Var<Real> exp(Var<Real> x);
template <class Real> Var<Real> log(Var<Real> x);
template <class Real> Var<Real> sqrt(Var<Real> x);
template <class Real> Var<Real> pow(Var<Real> x, double exponent);
template <class Real> Var<Real> max_const(Var<Real> x, double floor);
template <class Real> Var<Real> gelu(Var<Real> x);
template <class Real> Var<Real> sigmoid(Var<Real> x);
template <class Real> Var<Real> softmax(Var<Real> x);
template <class Real> Var<Real> layer_norm(Var<Real> x, double eps = 1e-5);

Shape broadcast_shape(const Shape& a, const Shape& b);

// Reverse rule for node `id`; called by Tape::backward.
template <class Real> void backprop(Tape<Real>& tape, int id);

// ---- composites built from the catalogue ----

template <class Real>
Var<Real> scalar_like(const Var<Real>& like, double v) {
  return like.tape().constant(Tensor<Real>::scalar(static_cast<Real>(v)));
}

template <class Real> Var<Real> scale(Var<Real> x, double c) { return mul(x, scalar_like(x, c)); }
template <class Real> Var<Real> add_scalar(Var<Real> x, double c) { return add(x, scalar_like(x, c)); }
// c - x
template <class Real> Var<Real> rsub(double c, Var<Real> x) { return sub(scalar_like(x, c), x); }
template <class Real> Var<Real> neg(Var<Real> x) { return scale(x, -1.0); }
template <class Real> Var<Real> square(Var<Real> x) { return mul(x, x); }
template <class Real> Var<Real> relu(Var<Real> x) { return max_const(x, 0.0); }
template <class Real> Var<Real> maximum(Var<Real> a, Var<Real> b) { return add(b, relu(sub(a, b))); }
template <class Real> Var<Real> minimum(Var<Real> a, Var<Real> b) { return sub(a, relu(sub(a, b))); }
template <class Real> Var<Real> abs(Var<Real> x) { return add(relu(x), relu(neg(x))); }
template <class Real>
Var<Real> clamp(Var<Real> x, double lo, double hi) {
  return neg(max_const(neg(max_const(x, lo)), -hi));
}

template <class Real> Var<Real> operator+(Var<Real> a, Var<Real> b) { return add(a, b); }
template <class Real> Var<Real> operator-(Var<Real> a, Var<Real> b) { return sub(a, b); }
template <class Real> Var<Real> operator*(Var<Real> a, Var<Real> b) { return mul(a, b); }
template <class Real> Var<Real> operator/(Var<Real> a, Var<Real> b) { return div(a, b); }
template <class Real> Var<Real> operator*(Var<Real> a, double c) { return scale(a, c); }
template <class Real> Var<Real> operator*(double c, Var<Real> a) { return scale(a, c); }
template <class Real> Var<Real> operator+(Var<Real> a, double c) { return add_scalar(a, c); }

}  // namespace progtrack::ad
