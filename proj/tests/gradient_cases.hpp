#pragma once

#include <functional>
#include <string>
#include <vector>

#include "progtrack/autodiff/grad_check.hpp"
#include "progtrack/loss/losses.hpp"
#include "progtrack/model/tracker.hpp"
#include "progtrack/rng.hpp"
#include "progtrack/train/dt.hpp"

namespace testing {

using progtrack::ad::ParamSet;
using progtrack::ad::Tape;
using progtrack::ad::Tensor;
using progtrack::ad::Var;
using progtrack::ad::VarMap;

struct GradCase {
  std::string primitive;
  progtrack::ad::ScalarFn fn;
  ParamSet<double> point;
};

inline Tensor<double> filled(progtrack::ad::Shape shape, progtrack::Rng& rng, double lo, double hi) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = progtrack::uniform(rng, lo, hi);
  return t;
}

// Every primitive in the catalogue, each reduced to a scalar through a fixed random
// weighting so no gradient is trivially uniform. Inputs stay away from kinks.
inline std::vector<GradCase> primitive_cases(std::uint64_t seed) {
  namespace ad = progtrack::ad;
  progtrack::Rng rng(seed);
  const Tensor<double> weights = filled({3, 4}, rng, -1.0, 1.0);
  auto project = [weights](Var<double> y) {
    auto& tape = y.tape();
    Tensor<double> w = weights;
    if (y.shape() != w.shape) {
      w = Tensor<double>(y.shape());
      for (std::int64_t i = 0; i < w.size(); ++i) w[i] = weights[i % weights.size()];
    }
    return ad::sum(ad::mul(y, tape.constant(std::move(w))));
  };
  auto unary = [&](std::string name, std::function<Var<double>(Var<double>)> f, double lo, double hi,
                   ad::Shape shape = {3, 4}) {
    return GradCase{std::move(name),
                    [f, project](Tape<double>&, const VarMap<double>& v) { return project(f(v.at("x"))); },
                    {{"x", filled(std::move(shape), rng, lo, hi)}}};
  };
  auto binary = [&](std::string name, std::function<Var<double>(Var<double>, Var<double>)> f, ad::Shape sa,
                    ad::Shape sb, double lo = -1.0, double hi = 1.0) {
    return GradCase{std::move(name),
                    [f, project](Tape<double>&, const VarMap<double>& v) { return project(f(v.at("a"), v.at("b"))); },
                    {{"a", filled(std::move(sa), rng, lo, hi)}, {"b", filled(std::move(sb), rng, lo, hi)}}};
  };

  std::vector<GradCase> cases;
  cases.push_back(binary("add", [](auto a, auto b) { return ad::add(a, b); }, {3, 4}, {3, 4}));
  cases.push_back(binary("add (broadcast)", [](auto a, auto b) { return ad::add(a, b); }, {3, 4}, {4}));
  cases.push_back(binary("subtract", [](auto a, auto b) { return ad::sub(a, b); }, {3, 4}, {3, 1}));
  cases.push_back(binary("multiply", [](auto a, auto b) { return ad::mul(a, b); }, {3, 4}, {3, 4}));
  cases.push_back(binary("divide", [](auto a, auto b) { return ad::div(a, b); }, {3, 4}, {3, 4}, 0.5, 2.0));
  cases.push_back(binary("matmul", [](auto a, auto b) { return ad::matmul(a, b); }, {3, 5}, {5, 4}));
  cases.push_back(binary("matmul (batched)", [](auto a, auto b) { return ad::matmul(a, b); }, {2, 3, 5}, {2, 5, 4}));
  cases.push_back(unary("transpose", [](auto x) { return ad::transpose(x); }, -1, 1, {4, 3}));
  cases.push_back(unary("permute", [](auto x) { return ad::permute(x, {2, 0, 1}); }, -1, 1, {2, 3, 2}));
  cases.push_back(unary("reshape", [](auto x) { return ad::reshape(x, {4, 3}); }, -1, 1));
  cases.push_back(binary(
      "concat",
      [](auto a, auto b) {
        const std::vector<Var<double>> xs{a, b};
        return ad::concat<double>(xs, 0);
      },
      {1, 4}, {2, 4}));
  cases.push_back(unary("slice", [](auto x) { return ad::slice(x, 1, 1, 2); }, -1, 1, {3, 5}));
  cases.push_back(unary("broadcast", [](auto x) { return ad::broadcast_to(x, {3, 4}); }, -1, 1, {1, 4}));
  cases.push_back(unary("sum (axis)", [](auto x) { return ad::sum(x, 0); }, -1, 1, {5, 4}));
  cases.push_back(unary("sum", [](auto x) { return ad::sum(ad::mul(x, x)); }, -1, 1));
  cases.push_back(unary("mean (axis)", [](auto x) { return ad::mean(x, 1); }, -1, 1, {3, 6}));
  cases.push_back(unary("mean", [](auto x) { return ad::mean(ad::mul(x, x)); }, -1, 1));
  cases.push_back(unary("exp", [](auto x) { return ad::exp(x); }, -1, 1));
  cases.push_back(unary("log", [](auto x) { return ad::log(x); }, 0.5, 2.0));
  cases.push_back(unary("sqrt", [](auto x) { return ad::sqrt(x); }, 0.5, 2.0));
  cases.push_back(unary("pow", [](auto x) { return ad::pow(x, 2.5); }, 0.5, 2.0));
  cases.push_back(unary("max_const", [](auto x) { return ad::max_const(x, 0.0); }, 0.1, 1.0));
  cases.push_back(unary("max_const (clipped side)", [](auto x) { return ad::add(ad::max_const(x, 0.0), x); }, -1, -0.1));
  cases.push_back(unary("gelu", [](auto x) { return ad::gelu(x); }, -2, 2));
  cases.push_back(unary("sigmoid", [](auto x) { return ad::sigmoid(x); }, -3, 3));
  cases.push_back(unary("softmax", [](auto x) { return ad::softmax(x); }, -2, 2));
  cases.push_back(unary("layer_norm", [](auto x) { return ad::layer_norm(x); }, -2, 2));
  return cases;
}

// 1-layer width-8 tracker used for end-to-end checks at 64-bit.
inline progtrack::model::TrackerConfig tiny_config() {
  progtrack::model::TrackerConfig c;
  c.patch_size = 8;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.mlp_ratio = 2.0;
  c.template_res = 16;
  c.search_res = 32;
  c.head_hidden_dim = 8;
  return c;
}

inline progtrack::Image random_image(int res, progtrack::Rng& rng) {
  progtrack::Image img(res, res);
  for (auto& v : img.data) v = static_cast<float>(progtrack::uniform01(rng));
  return img;
}

// L_total = L_clean + λt L_transfer + λa L_align on a random batch, as a function of
// the student parameters and the adapter; the teacher enters as tape constants.
struct TotalLossProblem {
  progtrack::model::TrackerConfig config = tiny_config();
  ParamSet<double> teacher;
  ParamSet<double> point;  // student parameters plus adapter
  std::vector<progtrack::Image> templates, searches;
  std::vector<progtrack::NormBox> gts;
  std::vector<progtrack::train::MaskSpec> masks;
  double lambda_transfer = 0.5, lambda_align = 0.1;

  explicit TotalLossProblem(std::uint64_t seed) {
    namespace model = progtrack::model;
    progtrack::Rng rng(seed);
    point = model::init_params<double>(config, seed + 1);
    // Perturb away from the zero-bias initialization so no unit sits on a kink.
    for (auto& [name, t] : point)
      for (auto& v : t.data) v += 0.05 * progtrack::normal(rng);
    teacher = model::init_params<double>(config, seed + 2);
    const std::vector<int> layers{0};
    for (auto& [name, t] : progtrack::train::make_adapter(config, config, layers)) {
      Tensor<double> a = progtrack::ad::cast<double>(t);
      for (auto& v : a.data) v += 0.1 * progtrack::normal(rng);
      point.emplace(name, std::move(a));
    }
    for (int i = 0; i < 2; ++i) {
      templates.push_back(random_image(config.template_res, rng));
      searches.push_back(random_image(config.search_res, rng));
      gts.push_back({progtrack::uniform(rng, 0.3, 0.7), progtrack::uniform(rng, 0.3, 0.7),
                     progtrack::uniform(rng, 0.2, 0.4), progtrack::uniform(rng, 0.2, 0.4)});
      masks.push_back(progtrack::train::sample_mask(config.search_tokens(), 0.25, seed * 10 + i));
    }
  }

  Var<double> operator()(Tape<double>& tape, const VarMap<double>& vars) const {
    namespace train = progtrack::train;
    const std::vector<int> layers{0};
    auto [clean, masked] = train::dual_branch_forward(tape, vars, config, templates, searches, masks);
    const auto tvars = tape.constants(teacher);
    const auto tout = progtrack::model::forward(tape, tvars, config, templates, searches);
    const auto targets = train::make_targets(gts, config.search_grid());
    const auto l_clean = progtrack::loss::track_loss(clean, targets, gts).total;
    const auto l_transfer = train::transfer_loss(clean, tout, vars, layers).total;
    const auto l_align = train::align_loss(clean, masked, layers).total;
    return train::total_loss(l_clean, std::optional(l_transfer), std::optional(l_align), lambda_transfer,
                             lambda_align);
  }

  // |L_total| is O(10), so float64 roundoff in the central difference is ~1e-15 |f| / h.
  // The step balancing that against the O(h^2) truncation term is (3 eps |f|)^(1/3) ~ 3e-5.
  static constexpr double kStep = 3e-5;

  double grad_error() const {
    return progtrack::ad::grad_check([this](Tape<double>& t, const VarMap<double>& v) { return (*this)(t, v); },
                                     point, kStep);
  }
};

}  // namespace testing
