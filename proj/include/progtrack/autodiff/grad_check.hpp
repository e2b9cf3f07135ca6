#pragma once

#include <functional>

#include "progtrack/autodiff/ops.hpp"

namespace progtrack::ad {

using ScalarFn = std::function<Var<double>(Tape<double>&, const VarMap<double>&)>;

// Compares reverse-mode gradients against central differences at 64-bit precision.
// Returns max over coordinates of |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
// Values passed through Tape::detach are frozen at `point` during the perturbed
// evaluations, so the check targets the stop-gradient surrogate that training optimizes.
double grad_check(const ScalarFn& f, const ParamSet<double>& point, double step = 1e-5);

// Single-tensor convenience form.
double grad_check(const std::function<Var<double>(Var<double>)>& f, const Tensor<double>& point,
                  double step = 1e-5);

}  // namespace progtrack::ad
