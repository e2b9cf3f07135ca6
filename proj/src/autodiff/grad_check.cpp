#include "progtrack/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace progtrack::ad {
namespace {

double evaluate(const ScalarFn& f, const ParamSet<double>& point, Tape<double>::DetachLog& log) {
  Tape<double> tape;
  tape.set_detach_log(&log);
  log.cursor = 0;
  const auto vars = tape.constants(point);
  const Var<double> out = f(tape, vars);
  if (out.value().size() != 1) {
    throw ContractViolation("grad_check: function output must be scalar, got " + to_string(out.shape()));
  }
  return out.value().item();
}

}  // namespace

double grad_check(const ScalarFn& f, const ParamSet<double>& point, double step) {
  Tape<double>::DetachLog log;
  GradMap<double> analytic;
  {
    Tape<double> tape;
    tape.set_detach_log(&log);
    const auto vars = tape.leaves(point);
    const Var<double> out = f(tape, vars);
    if (out.value().size() != 1) {
      throw ContractViolation("grad_check: function output must be scalar, got " + to_string(out.shape()));
    }
    analytic = tape.backward(out);
  }
  log.replay = true;

  ParamSet<double> probe = point;
  double worst = 0.0;
  for (auto& [name, tensor] : probe) {
    const auto& a = analytic.at(name);
    for (std::int64_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + step;
      const double up = evaluate(f, probe, log);
      tensor[i] = orig - step;
      const double down = evaluate(f, probe, log);
      tensor[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(a[i] - numeric) / std::max(1e-12, std::abs(a[i]) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double grad_check(const std::function<Var<double>(Var<double>)>& f, const Tensor<double>& point, double step) {
  ParamSet<double> params{{"x", point}};
  return grad_check([&](Tape<double>&, const VarMap<double>& v) { return f(v.at("x")); }, params, step);
}

}  // namespace progtrack::ad
