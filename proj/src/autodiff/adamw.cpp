#include "progtrack/autodiff/adamw.hpp"

#include <cmath>

namespace progtrack::ad {

template <class Real>
OptimState<Real> make_optim_state(const ParamSet<Real>& params, AdamWHyper hyper) {
  OptimState<Real> st;
  st.hyper = hyper;
  for (const auto& [name, t] : params) {
    st.first_moment.emplace(name, Tensor<Real>(t.shape, Real(0)));
    st.second_moment.emplace(name, Tensor<Real>(t.shape, Real(0)));
  }
  return st;
}

template <class Real>
void optimizer_step(ParamSet<Real>& params, const GradMap<Real>& grads, OptimState<Real>& state, double lr) {
  if (!(lr > 0)) throw ContractViolation("optimizer_step: learning rate must be positive");
  if (grads.size() != params.size()) {
    throw ContractViolation("optimizer_step: gradient map has " + std::to_string(grads.size()) +
                            " entries for " + std::to_string(params.size()) + " parameters");
  }
  for (const auto& [name, _] : params) {
    if (!grads.contains(name)) throw ContractViolation("optimizer_step: missing gradient for " + name);
  }
  const auto& h = state.hyper;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  const Real b1 = static_cast<Real>(h.beta1);
  const Real b2 = static_cast<Real>(h.beta2);
  const Real step_size = static_cast<Real>(lr);
  const Real decay = static_cast<Real>(lr * h.weight_decay);
  const Real inv_bc1 = static_cast<Real>(1.0 / bc1);
  const Real inv_bc2 = static_cast<Real>(1.0 / bc2);
  const Real eps = static_cast<Real>(h.eps);

  for (auto& [name, p] : params) {
    const auto& g = grads.at(name);
    if (g.shape != p.shape) throw ContractViolation("optimizer_step: gradient shape mismatch for " + name);
    auto mit = state.first_moment.find(name);
    if (mit == state.first_moment.end()) {
      mit = state.first_moment.emplace(name, Tensor<Real>(p.shape, Real(0))).first;
      state.second_moment.emplace(name, Tensor<Real>(p.shape, Real(0)));
    }
    auto& m = mit->second.data;
    auto& v = state.second_moment.at(name).data;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const Real gi = g.data[i];
      m[i] = b1 * m[i] + (Real(1) - b1) * gi;
      v[i] = b2 * v[i] + (Real(1) - b2) * gi * gi;
      const Real mhat = m[i] * inv_bc1;
      const Real vhat = v[i] * inv_bc2;
      const Real old = p.data[i];
      p.data[i] = old - step_size * (mhat / (std::sqrt(vhat) + eps)) - decay * old;
    }
  }
}

template OptimState<float> make_optim_state(const ParamSet<float>&, AdamWHyper);
template OptimState<double> make_optim_state(const ParamSet<double>&, AdamWHyper);
template void optimizer_step(ParamSet<float>&, const GradMap<float>&, OptimState<float>&, double);
template void optimizer_step(ParamSet<double>&, const GradMap<double>&, OptimState<double>&, double);

}  // namespace progtrack::ad
