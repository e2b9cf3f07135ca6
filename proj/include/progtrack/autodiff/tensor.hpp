#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "progtrack/digest.hpp"
#include "progtrack/errors.hpp"

namespace progtrack::ad {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape);

// Dense row-major array. `Real` is float for training and double for gradient checks.
template <class Real>
struct Tensor {
  Shape shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(Shape s, Real fill = Real(0)) : shape(std::move(s)), data(numel(shape), fill) {
    check_shape();
  }
  Tensor(Shape s, std::vector<Real> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
      throw ContractViolation("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + to_string(shape));
    }
  }

  static Tensor scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  Real& operator[](std::int64_t i) { return data[i]; }
  const Real& operator[](std::int64_t i) const { return data[i]; }
  Real item() const {
    if (data.size() != 1) throw ContractViolation("item() on tensor of shape " + to_string(shape));
    return data[0];
  }
  bool operator==(const Tensor&) const = default;

 private:
  void check_shape() const {
    for (int d : shape) {
      if (d <= 0) throw ContractViolation("non-positive dimension in shape " + to_string(shape));
    }
  }
};

// Named parameter collections iterate in name order, which fixes the checkpoint layout.
template <class Real>
using ParamSet = std::map<std::string, Tensor<Real>>;
template <class Real>
using GradMap = ParamSet<Real>;

template <class To, class From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.shape = t.shape;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

template <class To, class From>
ParamSet<To> cast(const ParamSet<From>& params) {
  ParamSet<To> out;
  for (const auto& [name, t] : params) out.emplace(name, cast<To>(t));
  return out;
}

template <class Real>
std::int64_t count_parameters(const ParamSet<Real>& params) {
  std::int64_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

// Content digest over names, shapes and value bytes in name order.
template <class Real>
std::string params_digest(const ParamSet<Real>& params) {
  Fnv1a h;
  for (const auto& [name, t] : params) {
    h.update(name);
    h.update_values(std::span<const int>(t.shape));
    h.update_values(std::span<const Real>(t.data));
  }
  return h.hex();
}

}  // namespace progtrack::ad
