#pragma once

#include <cstdint>

#include "progtrack/autodiff/tensor.hpp"

namespace progtrack::ad {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <class Real>
struct OptimState {
  ParamSet<Real> first_moment;
  ParamSet<Real> second_moment;
  std::int64_t step = 0;
  AdamWHyper hyper;
};

template <class Real>
OptimState<Real> make_optim_state(const ParamSet<Real>& params, AdamWHyper hyper = {});

// Adam with decoupled weight decay:
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * decay * p
// `grads` must cover exactly the names in `params`.
template <class Real>
void optimizer_step(ParamSet<Real>& params, const GradMap<Real>& grads, OptimState<Real>& state, double lr);

}  // namespace progtrack::ad
