#include "progtrack/eval/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "progtrack/errors.hpp"

namespace progtrack::eval {

HannWindow HannWindow::make(int size) {
  if (size < 1) throw ContractViolation("HannWindow: size must be positive");
  HannWindow w;
  w.size = size;
  std::vector<double> v(size, 1.0);
  if (size > 1) {
    const double pi = 3.14159265358979323846;
    // computed for the first half and mirrored so the window is exactly symmetric
    for (int i = 0; i <= (size - 1) / 2; ++i) {
      const double x = 0.5 * (1.0 - std::cos(2.0 * pi * i / (size - 1)));
      v[i] = x;
      v[size - 1 - i] = x;
    }
    if (size % 2 == 1) v[(size - 1) / 2] = 1.0;
  }
  double peak = 0;
  w.weights.resize(static_cast<std::size_t>(size) * size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      w.weights[static_cast<std::size_t>(i) * size + j] = v[i] * v[j];
      peak = std::max(peak, v[i] * v[j]);
    }
  if (peak > 0 && peak != 1.0)
    for (auto& x : w.weights) x /= peak;
  return w;
}

std::vector<double> penalize(std::span<const double> score, const HannWindow& window, double gamma) {
  if (score.size() != window.weights.size()) throw ContractViolation("penalize: score map and window differ in size");
  if (!(gamma >= 0 && gamma <= 1)) throw ContractViolation("penalize: gamma must lie in [0, 1]");
  std::vector<double> out(score.size());
  if (gamma == 0.0) {
    std::copy(score.begin(), score.end(), out.begin());
    return out;
  }
  for (std::size_t i = 0; i < score.size(); ++i)
    out[i] = gamma == 1.0 ? score[i] * window.weights[i] : (1 - gamma) * score[i] + gamma * score[i] * window.weights[i];
  return out;
}

TrackResult track_sequence(const model::ModelSnapshot& snap, const data::Sequence& seq, const InferConfig& cfg) {
  const auto& mc = snap.config;
  mc.validate();
  if (seq.length() < 1) throw ContractViolation("track_sequence: empty sequence");
  const int canvas = seq.canvas;
  const int s = mc.search_grid();
  const HannWindow window = HannWindow::make(s);

  TrackResult res;
  res.boxes.push_back(seq.boxes[0]);
  const Image templ =
      data::crop_resize(seq, 0, data::window_around(seq.boxes[0], canvas, cfg.template_factor), mc.template_res);
  NormBox state = seq.boxes[0];
  const double min_side = cfg.min_box_px / canvas;
  for (int t = 1; t < seq.length(); ++t) {
    const data::CropWindow win = data::window_around(state, canvas, cfg.search_factor);
    const Image search = data::crop_resize(seq, t, win, mc.search_res);
    ad::Tape<float> tape;
    const auto vars = tape.constants(snap.params);
    const auto out = model::forward(tape, vars, mc, std::span<const Image>(&templ, 1), std::span<const Image>(&search, 1));
    res.primitive_counts.push_back(tape.primitive_count());

    const auto& sv = out.score.value().data;
    std::vector<double> score(sv.begin(), sv.end());
    const auto pen = penalize(score, window, cfg.gamma);
    const int loc = model::argmax_cell<double>(pen);
    const NormBox local = model::decode_sample(out, 0, loc);
    NormBox b = data::from_crop(local, win, canvas);
    b.w = std::clamp(b.w, min_side, 1.0);
    b.h = std::clamp(b.h, min_side, 1.0);
    b.cx = std::clamp(b.cx, 0.0, 1.0);
    b.cy = std::clamp(b.cy, 0.0, 1.0);
    res.boxes.push_back(b);
    state = b;
  }
  return res;
}

namespace {

void check_lengths(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) throw ContractViolation("metric inputs differ in length");
}

}  // namespace

std::vector<double> success_curve(std::span<const NormBox> preds, std::span<const NormBox> gts,
                                  std::span<const std::uint8_t> visible) {
  check_lengths(preds.size(), gts.size(), visible.size());
  std::vector<double> ious;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (visible[i]) ious.push_back(iou(preds[i], gts[i]));
  if (ious.empty()) throw UndefinedMetric("success: no visible frames");
  std::vector<double> curve(kIouThresholds);
  for (int k = 0; k < kIouThresholds; ++k) {
    const double theta = k / 20.0;
    int hits = 0;
    for (double v : ious) hits += v > theta ? 1 : 0;
    curve[k] = static_cast<double>(hits) / ious.size();
  }
  return curve;
}

double success_auc(std::span<const NormBox> preds, std::span<const NormBox> gts, std::span<const std::uint8_t> visible) {
  const auto curve = success_curve(preds, gts, visible);
  double sum = 0;
  for (double c : curve) sum += c;
  return sum / kIouThresholds;
}

PrecisionResult precision_metrics(std::span<const NormBox> preds, std::span<const NormBox> gts,
                                  std::span<const std::uint8_t> visible, int canvas, const PrecisionOptions& opt) {
  check_lengths(preds.size(), gts.size(), visible.size());
  if (canvas <= 0) throw ContractViolation("precision_metrics: canvas must be positive");
  if (opt.norm_thresholds < 2) throw ContractViolation("precision_metrics: need at least two thresholds");
  const double px_threshold = opt.threshold_px * canvas / opt.reference_canvas;
  std::vector<double> dist, norm;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!visible[i]) continue;
    const double dx = (preds[i].cx - gts[i].cx) * canvas;
    const double dy = (preds[i].cy - gts[i].cy) * canvas;
    const double d = std::sqrt(dx * dx + dy * dy);
    dist.push_back(d);
    norm.push_back(d / std::sqrt(gts[i].w * gts[i].h * canvas * canvas));
  }
  if (dist.empty()) throw UndefinedMetric("precision: no visible frames");
  PrecisionResult r;
  int hits = 0;
  for (double d : dist) hits += d <= px_threshold ? 1 : 0;
  r.precision = static_cast<double>(hits) / dist.size();
  double acc = 0;
  for (int k = 0; k < opt.norm_thresholds; ++k) {
    const double theta = opt.norm_max * k / (opt.norm_thresholds - 1);
    int h = 0;
    for (double v : norm) h += v <= theta ? 1 : 0;
    acc += static_cast<double>(h) / norm.size();
  }
  r.norm_precision = acc / opt.norm_thresholds;
  return r;
}

SuiteResult evaluate_suite(const model::ModelSnapshot& snap, const std::string& name,
                           std::span<const data::Sequence> sequences, const InferConfig& cfg) {
  SuiteResult r;
  r.suite = name;
  r.curve.assign(kIouThresholds, 0.0);
  for (const auto& seq : sequences) {
    const auto track = track_sequence(snap, seq, cfg);
    // frame 0 is given, not predicted
    std::vector<std::uint8_t> vis(seq.visible.begin(), seq.visible.end());
    vis[0] = 0;
    if (std::find(vis.begin(), vis.end(), 1) == vis.end()) continue;
    const auto curve = success_curve(track.boxes, seq.boxes, vis);
    double auc = 0;
    for (int k = 0; k < kIouThresholds; ++k) {
      r.curve[k] += curve[k];
      auc += curve[k];
    }
    r.auc += auc / kIouThresholds;
    const auto p = precision_metrics(track.boxes, seq.boxes, vis, seq.canvas);
    r.precision += p.precision;
    r.norm_precision += p.norm_precision;
    ++r.trajectories;
  }
  if (r.trajectories == 0) throw UndefinedMetric("suite " + name + " has no evaluable trajectories");
  r.auc /= r.trajectories;
  r.precision /= r.trajectories;
  r.norm_precision /= r.trajectories;
  for (auto& c : r.curve) c /= r.trajectories;
  return r;
}

EvalReport bench_aggregate(std::vector<SuiteResult> suites) {
  if (suites.empty()) throw ContractViolation("bench_aggregate: no suites");
  std::stable_sort(suites.begin(), suites.end(), [](const auto& a, const auto& b) { return a.suite < b.suite; });
  EvalReport rep;
  for (const auto& s : suites) {
    rep.mean_auc += s.auc;
    rep.mean_precision += s.precision;
    rep.mean_norm_precision += s.norm_precision;
  }
  const double n = static_cast<double>(suites.size());
  rep.mean_auc /= n;
  rep.mean_precision /= n;
  rep.mean_norm_precision /= n;
  rep.suites = std::move(suites);
  return rep;
}

void write_report_csv(const EvalReport& rep, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "suite,trajectories,auc,precision,norm_precision\n";
  char buf[256];
  int total = 0;
  for (const auto& s : rep.suites) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f,%.6f\n", s.suite.c_str(), s.trajectories, s.auc, s.precision,
                  s.norm_precision);
    os << buf;
    total += s.trajectories;
  }
  std::snprintf(buf, sizeof buf, "mean,%d,%.6f,%.6f,%.6f\n", total, rep.mean_auc, rep.mean_precision,
                rep.mean_norm_precision);
  os << buf;
  if (!os) throw IoError("write failed: " + path.string());
}

void write_curve_csv(const EvalReport& rep, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "suite,threshold,success\n";
  char buf[256];
  for (const auto& s : rep.suites)
    for (std::size_t k = 0; k < s.curve.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%s,%.2f,%.6f\n", s.suite.c_str(), k / 20.0, s.curve[k]);
      os << buf;
    }
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace progtrack::eval
