#include "progtrack/autodiff/tape.hpp"

#include <cmath>

#include "progtrack/autodiff/ops.hpp"

namespace progtrack::ad {

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

const char* prim_name(Prim p) {
  switch (p) {
    case Prim::Leaf: return "leaf";
    case Prim::Constant: return "constant";
    case Prim::Add: return "add";
    case Prim::Subtract: return "subtract";
    case Prim::Multiply: return "multiply";
    case Prim::Divide: return "divide";
    case Prim::MatMul: return "matmul";
    case Prim::Transpose: return "transpose";
    case Prim::Reshape: return "reshape";
    case Prim::Concat: return "concat";
    case Prim::Slice: return "slice";
    case Prim::Broadcast: return "broadcast";
    case Prim::Sum: return "sum";
    case Prim::Mean: return "mean";
    case Prim::Exp: return "exp";
    case Prim::Log: return "log";
    case Prim::Sqrt: return "sqrt";
    case Prim::Pow: return "pow";
    case Prim::MaxConst: return "max_const";
    case Prim::Gelu: return "gelu";
    case Prim::Sigmoid: return "sigmoid";
    case Prim::Softmax: return "softmax";
    case Prim::LayerNorm: return "layer_norm";
  }
  return "unknown";
}

template <class Real>
Var<Real> Tape<Real>::leaf(std::string name, Tensor<Real> value) {
  Node n;
  n.kind = Prim::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return Var<Real>(this, static_cast<int>(nodes_.size() - 1));
}

template <class Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
  Node n;
  n.kind = Prim::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<Real>(this, static_cast<int>(nodes_.size() - 1));
}

template <class Real>
Var<Real> Tape<Real>::detach(Var<Real> v) {
  if (detach_log_ == nullptr) return constant(v.value());
  if (detach_log_->replay) {
    if (detach_log_->cursor >= detach_log_->values.size()) {
      throw ContractViolation("detach replay ran past the recorded values");
    }
    return constant(detach_log_->values[detach_log_->cursor++]);
  }
  detach_log_->values.push_back(v.value());
  return constant(v.value());
}

template <class Real>
VarMap<Real> Tape<Real>::leaves(const ParamSet<Real>& params) {
  VarMap<Real> out;
  for (const auto& [name, t] : params) out.emplace(name, leaf(name, t));
  return out;
}

template <class Real>
VarMap<Real> Tape<Real>::constants(const ParamSet<Real>& params) {
  VarMap<Real> out;
  for (const auto& [name, t] : params) out.emplace(name, constant(t));
  return out;
}

template <class Real>
Var<Real> Tape<Real>::record(Prim kind, std::vector<int> inputs, Tensor<Real> out, std::vector<int> ints,
                             double scalar) {
  if (consumed_) throw ContractViolation("tape already consumed by backward()");
  Node n;
  n.kind = kind;
  n.value = std::move(out);
  n.ints = std::move(ints);
  n.scalar = scalar;
  for (int id : inputs) n.requires_grad = n.requires_grad || nodes_[id].requires_grad;
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  ++primitive_count_;
  return Var<Real>(this, static_cast<int>(nodes_.size() - 1));
}

template <class Real>
GradMap<Real> Tape<Real>::backward(Var<Real> loss) {
  if (&loss.tape() != this) throw ContractViolation("backward: loss belongs to another tape");
  if (consumed_) throw ContractViolation("backward: computation record already consumed");
  if (loss.value().size() != 1) {
    throw ContractViolation("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  consumed_ = true;
  const int root = loss.id();
  if (nodes_[root].requires_grad) {
    nodes_[root].grad = Tensor<Real>(nodes_[root].value.shape, Real(1));
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.data.empty()) continue;
      backprop(*this, id);
    }
  }
  GradMap<Real> out;
  for (const Node& n : nodes_) {
    if (n.kind != Prim::Leaf || n.name.empty()) continue;
    if (n.grad.data.empty()) {
      out.try_emplace(n.name, Tensor<Real>(n.value.shape, Real(0)));
    } else if (auto it = out.find(n.name); it != out.end()) {
      for (std::size_t i = 0; i < it->second.data.size(); ++i) it->second.data[i] += n.grad.data[i];
    } else {
      out.emplace(n.name, n.grad);
    }
  }
  return out;
}

template <class Real>
const Tensor<Real>* Tape<Real>::grad(Var<Real> v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.data.empty() ? nullptr : &n.grad;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace progtrack::ad
