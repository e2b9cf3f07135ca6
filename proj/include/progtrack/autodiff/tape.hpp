#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "progtrack/autodiff/tensor.hpp"

namespace progtrack::ad {

enum class Prim : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Subtract,
  Multiply,
  Divide,
  MatMul,
  Transpose,
  Reshape,
  Concat,
  Slice,
  Broadcast,
  Sum,
  Mean,
  Exp,
  Log,
  Sqrt,
  Pow,
  MaxConst,
  Gelu,
  Sigmoid,
  Softmax,
  LayerNorm,
};

const char* prim_name(Prim p);

template <class Real>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <class Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape<Real>& tape() const { return *tape_; }
  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape; }
  bool requires_grad() const;

 private:
  Tape<Real>* tape_ = nullptr;
  int id_ = -1;
};

template <class Real>
using VarMap = std::map<std::string, Var<Real>>;

// Define-by-run computation record. Nodes are appended in evaluation order, so the
// node list is topological by construction; backward walks it once in reverse.
template <class Real>
class Tape {
 public:
  struct Node {
    Prim kind = Prim::Constant;
    std::vector<int> inputs;
    Tensor<Real> value;
    Tensor<Real> grad;  // empty until something flows in
    std::vector<int> ints;
    double scalar = 0.0;
    bool requires_grad = false;
    std::string name;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> leaf(std::string name, Tensor<Real> value);
  Var<Real> constant(Tensor<Real> value);
  // A constant copy of `v`. Under detach replay (see grad_check) the recorded copy
  // from the reference evaluation is returned instead, which freezes everything
  // computed from detached values at that point.
  Var<Real> detach(Var<Real> v);

  VarMap<Real> leaves(const ParamSet<Real>& params);
  VarMap<Real> constants(const ParamSet<Real>& params);

  Var<Real> record(Prim kind, std::vector<int> inputs, Tensor<Real> out, std::vector<int> ints = {},
                   double scalar = 0.0);

  // Reverse sweep from a scalar loss. Returns gradients of every named leaf
  // (zeros where nothing flowed). The record cannot be differentiated twice.
  GradMap<Real> backward(Var<Real> loss);

  // Gradient of an arbitrary node after backward(), or nullptr when none flowed.
  const Tensor<Real>* grad(Var<Real> v) const;

  const Node& node(int id) const { return nodes_[id]; }
  Node& node(int id) { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  // Number of primitive applications (leaves and constants excluded).
  std::size_t primitive_count() const { return primitive_count_; }

  struct DetachLog {
    std::vector<Tensor<Real>> values;
    bool replay = false;
    std::size_t cursor = 0;
  };
  void set_detach_log(DetachLog* log) { detach_log_ = log; }

 private:
  std::deque<Node> nodes_;
  std::size_t primitive_count_ = 0;
  bool consumed_ = false;
  DetachLog* detach_log_ = nullptr;
};

template <class Real>
const Tensor<Real>& Var<Real>::value() const {
  return tape_->node(id_).value;
}

template <class Real>
bool Var<Real>::requires_grad() const {
  return tape_->node(id_).requires_grad;
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace progtrack::ad
