// Acceptance harness: one PASS/FAIL line per criterion. Arguments select criteria
// (default: all); the exit status is nonzero when any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>

#include <boost/math/distributions/chi_squared.hpp>

#include "gradient_cases.hpp"
#include "metric_oracle.hpp"
#include "support.hpp"
#include "progtrack/cli/app.hpp"
#include "progtrack/scale/progressive.hpp"

using namespace progtrack;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
  double limit_s = 0;
  double seconds = 0;  // set by the harness unless the criterion accounts shared work itself
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// desk-scale training runs shared by the directional criteria

constexpr int kSeeds = 3;

struct RunKey {
  int layers = 2, sequences = 128, resolution = 64, seed = 0;
  bool guided = false;
  auto operator<=>(const RunKey&) const = default;
};

struct RunRecord {
  scale::Checkpoint checkpoint;
  double auc = 0;
  double seconds = 0;
};

model::TrackerConfig tracker(const RunKey& k) {
  model::TrackerConfig c;  // width 32, 4 heads, patch 8
  c.num_layers = k.layers;
  c.search_res = k.resolution;
  c.template_res = k.resolution / 2;
  return c;
}

train::DTConfig budget() {
  train::DTConfig t;
  t.epochs = 30;
  t.steps_per_epoch = 100;
  t.batch_size = 8;
  t.base_lr = 1e-3;
  return t;
}

train::DTConfig naive(train::DTConfig t) {
  t.lambda_align = 0.0;
  t.lambda_transfer = train::Schedule::constant(0.0);
  t.mask_ratio = train::Schedule::constant(0.0);
  return t;
}

class Runs {
 public:
  const RunRecord& get(const RunKey& k) {
    if (auto it = memo_.find(k); it != memo_.end()) return it->second;
    const auto t0 = Clock::now();
    data::DatasetSpec d;
    d.name = "train";
    d.sequences = k.sequences;
    d.seed = 100 + static_cast<std::uint64_t>(k.seed);
    scale::RunOptions opt;
    opt.eval_suites = cli::default_eval_suites();
    opt.threads = 0;
    std::optional<scale::RunResult> r;
    if (k.guided) {
      RunKey base = k;
      base.guided = false;
      const auto& teacher = get(base).checkpoint;
      opt.id_prefix = "dt";
      r = scale::run_training(tracker(k), {d}, budget(), k.seed, &teacher, opt);
    } else {
      opt.id_prefix = "naive";
      r = scale::run_training(tracker(k), {d}, naive(budget()), k.seed, nullptr, opt);
    }
    RunRecord rec{r->checkpoint, r->report->mean_auc, seconds_since(t0)};
    std::fprintf(stderr, "  run layers=%d data=%d res=%d seed=%d %s: mean AUC %.4f (%.0f s)\n", k.layers, k.sequences,
                 k.resolution, k.seed, k.guided ? "dt" : "naive", rec.auc, rec.seconds);
    return memo_.emplace(k, std::move(rec)).first->second;
  }

  // Wall time of every run a criterion relied on, counted once per criterion.
  double cost(const std::set<RunKey>& keys) const {
    double s = 0;
    for (const auto& k : keys) s += memo_.at(k).seconds;
    return s;
  }

 private:
  std::map<RunKey, RunRecord> memo_;
};

// ---------------------------------------------------------------------------
// criteria

Outcome collapse_identity() {
  const auto cfg = testing::tiny_config();
  data::DatasetSpec d;
  d.sequences = 8;
  d.length = 12;
  d.canvas = 64;
  d.min_size = 8;
  d.max_size = 14;
  const auto seqs = data::generate_dataset(d, 1);
  train::TrainingData td;
  td.datasets.emplace_back(seqs);
  auto dt = naive(train::DTConfig{});
  dt.epochs = 5;
  dt.steps_per_epoch = 20;
  dt.batch_size = 2;
  dt.seed = 42;
  const auto init = model::init_params<float>(cfg, 7);

  std::vector<double> trace;
  std::vector<ad::ParamSet<float>> trajectory;
  train::train<float>(init, cfg, nullptr, td, dt, [&](int, const train::LogRow& row, const ad::ParamSet<float>& p) {
    trace.push_back(row.total);
    trajectory.push_back(p);
  });

  // The plain loop: sample, forward, supervised loss, backward, AdamW.
  ad::ParamSet<float> params = init;
  auto state = ad::make_optim_state(params, dt.optimizer);
  Rng rng(seed_split(dt.seed, train::kDataStream));
  int step = 0, mismatches = 0;
  for (int epoch = 0; epoch < dt.epochs; ++epoch) {
    const double lr = train::schedule_value(dt.lr_schedule(), epoch, dt.epochs);
    for (int s = 0; s < dt.steps_per_epoch; ++s, ++step) {
      const auto batch = train::sample_batch(td, dt, cfg.template_res, cfg.search_res, rng);
      ad::Tape<float> tape;
      const auto vars = tape.leaves(params);
      const auto out = model::forward(tape, vars, cfg, batch.templates, batch.searches);
      const auto loss =
          loss::track_loss(out, train::make_targets(batch.gts, cfg.search_grid()), batch.gts, dt.loss_weights).total;
      const auto grads = tape.backward(loss);
      ad::optimizer_step(params, grads, state, lr);
      const double value = loss.value().item();
      if (step >= static_cast<int>(trace.size()) || std::memcmp(&value, &trace[step], sizeof value) != 0 ||
          params != trajectory[step])
        ++mismatches;
    }
  }
  const bool pass = step == 100 && trace.size() == 100 && mismatches == 0;
  return {pass, std::to_string(step) + " steps, " + std::to_string(mismatches) + " steps differ", 60};
}

Outcome gradient_suite() {
  double worst_primitive = 0;
  std::string worst_name;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (const auto& c : testing::primitive_cases(seed)) {
      const double e = ad::grad_check(c.fn, c.point);
      if (e > worst_primitive) {
        worst_primitive = e;
        worst_name = c.primitive;
      }
    }
  }
  double worst_total = 0;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) worst_total = std::max(worst_total, testing::TotalLossProblem(seed).grad_error());
  const bool pass = worst_primitive < 1e-6 && worst_total < 1e-4;
  return {pass,
          "worst primitive " + fmt("%.2e", worst_primitive) + " (" + worst_name + "), L_total " + fmt("%.2e", worst_total),
          300};
}

Outcome metric_oracle() {
  Rng rng(31337);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = oracle::random_set(rng);
    const auto want = oracle::brute_force(s.preds, s.gts, s.visible, s.canvas);
    const auto got = eval::precision_metrics(s.preds, s.gts, s.visible, s.canvas);
    worst = std::max({worst, std::abs(eval::success_auc(s.preds, s.gts, s.visible) - want.auc),
                      std::abs(got.precision - want.precision), std::abs(got.norm_precision - want.norm_precision)});
  }
  bool exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 6));
    std::vector<eval::SuiteResult> suites(n);
    std::map<std::string, double> by_name;
    for (int i = 0; i < n; ++i) {
      suites[i].suite = "suite" + std::to_string(uniform_index(rng, 1000)) + "_" + std::to_string(i);
      suites[i].auc = uniform01(rng);
      by_name[suites[i].suite] = suites[i].auc;
    }
    double sum = 0;
    for (const auto& [name, auc] : by_name) sum += auc;
    exact = exact && eval::bench_aggregate(suites).mean_auc == sum / n;
  }
  return {worst <= 1e-9 && exact, "max deviation " + fmt("%.1e", worst) + (exact ? ", mean exact" : ", mean inexact"), 60};
}

Outcome defaults_pinned() {
  const auto c = cli::parse_config(nlohmann::json::object());
  const auto& t = c.training;
  std::vector<std::string> wrong;
  auto expect = [&](bool ok, const char* what) {
    if (!ok) wrong.push_back(what);
  };
  expect(t.loss_weights.iou == 2.0, "lambda_iou");
  expect(t.loss_weights.l1 == 5.0, "lambda_l1");
  expect(t.lambda_align == 0.1, "lambda_align");
  expect(t.lambda_transfer == train::Schedule::step_drop(0.5, 0.0, 0.9), "lambda_transfer");
  expect(t.mask_ratio == train::Schedule::linear(0.05, 0.4), "mask_ratio");
  expect(t.lr_drop_fraction == 0.8 && t.lr_drop_factor == 0.1, "lr drop");
  expect(train::schedule_value(t.lambda_transfer, 89, 100) == 0.5 && train::schedule_value(t.lambda_transfer, 90, 100) == 0.0,
         "lambda_transfer drop epoch");
  expect(train::schedule_value(t.lr_schedule(), 80, 100) == t.base_lr * 0.1, "lr drop epoch");
  expect(train::DTConfig{}.lambda_align == t.lambda_align, "library default");
  std::string detail = "all defaults as documented";
  if (!wrong.empty()) {
    detail = "mismatch:";
    for (const auto& w : wrong) detail += " " + w;
  }
  return {wrong.empty(), detail, 60};
}

Outcome dt_beats_naive(Runs& runs) {
  int wins = 0;
  std::set<RunKey> used;
  std::string detail;
  for (int s = 0; s < kSeeds; ++s) {
    RunKey k{.seed = s};
    RunKey g = k;
    g.guided = true;
    const double n = runs.get(k).auc, d = runs.get(g).auc;
    used.insert(k);
    used.insert(g);
    wins += d > n;
    detail += (s ? ", " : "") + std::string("seed ") + std::to_string(s) + " dt " + fmt("%.4f", d) + " vs naive " +
              fmt("%.4f", n);
  }
  Outcome o{wins >= 2, std::to_string(wins) + "/3 wins (" + detail + ")", 1800};
  o.seconds = runs.cost(used);
  return o;
}

Outcome scaling_trends(Runs& runs) {
  struct Sweep {
    const char* name;
    std::vector<int> values;
    std::function<RunKey(int, int)> key;
  };
  const std::vector<Sweep> sweeps = {
      {"layers", {1, 2, 4}, [](int v, int s) { return RunKey{.layers = v, .seed = s}; }},
      {"data", {64, 128, 256}, [](int v, int s) { return RunKey{.sequences = v, .seed = s}; }},
      {"resolution", {48, 64, 96}, [](int v, int s) { return RunKey{.resolution = v, .seed = s}; }},
  };
  std::set<RunKey> used;
  bool all = true;
  std::string detail;
  for (const auto& sw : sweeps) {
    int ok_seeds = 0;
    std::string rows;
    for (int s = 0; s < kSeeds; ++s) {
      bool ok = true;
      double prev = -1;
      rows += s ? " | " : "";
      for (std::size_t i = 0; i < sw.values.size(); ++i) {
        const auto k = sw.key(sw.values[i], s);
        used.insert(k);
        const double auc = runs.get(k).auc;
        if (i > 0 && auc < prev - 0.01) ok = false;
        prev = auc;
        rows += (i ? " " : "") + fmt("%.3f", auc);
      }
      ok_seeds += ok;
    }
    all = all && ok_seeds >= 2;
    detail += std::string(detail.empty() ? "" : "; ") + sw.name + " " + std::to_string(ok_seeds) + "/3 [" + rows + "]";
  }
  Outcome o{all, detail, 3600};
  o.seconds = runs.cost(used);
  return o;
}

Outcome frozen_teacher() {
  auto cfg = model::TrackerConfig{};
  data::DatasetSpec d;
  d.sequences = 16;
  d.seed = 7;
  auto t = budget();
  t.epochs = 5;
  t.steps_per_epoch = 10;
  scale::RunOptions opt;
  opt.threads = 0;
  const auto teacher = scale::run_training(cfg, {d}, naive(t), 1, nullptr, opt).checkpoint;
  const std::string before = teacher.digest();
  const std::string params_before = ad::params_digest(teacher.model.params);
  const auto guided = scale::run_training(cfg, {d}, t, 2, &teacher, opt).checkpoint;
  const auto other_naive = scale::run_training(cfg, {d}, naive(t), 3, nullptr, opt).checkpoint;
  const bool frozen = teacher.digest() == before && ad::params_digest(teacher.model.params) == params_before;

  data::SequenceSpec spec;
  spec.length = 10;
  spec.seed = 5;
  const auto seq = data::generate_sequence(spec);
  const auto pg = eval::track_sequence(guided.model, seq).primitive_counts;
  const auto pn = eval::track_sequence(other_naive.model, seq).primitive_counts;
  const auto cg = ad::count_parameters(guided.model.params), cn = ad::count_parameters(other_naive.model.params);
  const bool cost = pg == pn && cg == cn && cg == model::parameter_count(cfg) && !guided.adapter.empty();
  return {frozen && cost,
          std::string(frozen ? "teacher digest unchanged" : "teacher digest changed") + ", primitives " +
              std::to_string(pg.front()) + " vs " + std::to_string(pn.front()) + ", parameters " + std::to_string(cg) +
              " vs " + std::to_string(cn),
          300};
}

Outcome persistence() {
  const auto cfg = testing::tiny_config();
  data::DatasetSpec d;
  d.sequences = 4;
  d.length = 10;
  d.canvas = 64;
  d.min_size = 8;
  d.max_size = 14;
  auto t = budget();
  t.epochs = 2;
  t.steps_per_epoch = 10;
  t.batch_size = 4;
  scale::RunOptions opt;
  opt.threads = 0;
  const auto a = scale::run_training(cfg, {d}, naive(t), 9, nullptr, opt).checkpoint;
  const auto b = scale::run_training(cfg, {d}, naive(t), 9, nullptr, opt).checkpoint;
  const auto g1 = scale::run_training(cfg, {d}, t, 10, &a, opt).checkpoint;
  const auto g2 = scale::run_training(cfg, {d}, t, 10, &b, opt).checkpoint;
  const bool rerun = a.digest() == b.digest() && a.id == b.id && g1.digest() == g2.digest();

  testing::TempDir dir("acceptance");
  scale::save_checkpoint(g1, dir.path());
  const auto back = scale::load_checkpoint(scale::manifest_path(dir.path(), g1.id));
  const bool round_trip = back.model.params == g1.model.params && back.adapter == g1.adapter &&
                          back.digest() == g1.digest() && back.model.config == g1.model.config;

  const std::vector<int> sizes{1000, 10};
  Rng rng(2718);
  int first = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) first += data::balanced_sample(sizes, rng).dataset == 0;
  const double e = draws / 2.0;
  const double chi2 = 2 * (first - e) * (first - e) / e;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(1), chi2));
  return {rerun && round_trip && p > 0.01,
          std::string(round_trip ? "round-trip bitwise" : "round-trip differs") + ", " +
              (rerun ? "reruns identical" : "reruns differ") + ", sampler split " + std::to_string(first) + "/" +
              std::to_string(draws - first) + " p=" + fmt("%.3f", p),
          120};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};

  Runs runs;
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"collapse identity", collapse_identity}},
      {2, {"gradient suite", gradient_suite}},
      {3, {"metric oracle", metric_oracle}},
      {4, {"defaults pinned", defaults_pinned}},
      {5, {"dt beats naive", [&] { return dt_beats_naive(runs); }}},
      {6, {"scaling trends", [&] { return scaling_trends(runs); }}},
      {7, {"frozen teacher and cost invariance", frozen_teacher}},
      {8, {"persistence and determinism", persistence}},
  };
  int failed = 0;
  for (int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::printf("criterion %d: FAIL unknown criterion\n", id);
      ++failed;
      continue;
    }
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = it->second.second();
      if (o.seconds == 0) o.seconds = seconds_since(t0);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what(), 0, seconds_since(t0)};
    }
    const bool in_time = o.limit_s <= 0 || o.seconds <= o.limit_s;
    const bool pass = o.pass && in_time;
    std::printf("criterion %d: %s %s: %s (%.1f s%s)\n", id, pass ? "PASS" : "FAIL", it->second.first, o.detail.c_str(),
                o.seconds, in_time ? "" : fmt(", over the %.0f s limit", o.limit_s).c_str());
    std::fflush(stdout);
    failed += !pass;
  }
  return failed == 0 ? 0 : 1;
}
