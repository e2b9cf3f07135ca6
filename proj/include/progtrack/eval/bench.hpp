#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "progtrack/box.hpp"
#include "progtrack/data/synth.hpp"
#include "progtrack/model/snapshot.hpp"

namespace progtrack::eval {

// S x S outer product of w[i] = 0.5 (1 - cos(2 pi i / (S - 1))), scaled to peak 1.
struct HannWindow {
  int size = 0;
  std::vector<double> weights;  // raster order

  static HannWindow make(int size);
  double at(int row, int col) const { return weights[static_cast<std::size_t>(row) * size + col]; }
};

// (1 - gamma) * score + gamma * score * window.
std::vector<double> penalize(std::span<const double> score, const HannWindow& window, double gamma = 1.0);

struct InferConfig {
  double gamma = 1.0;
  double template_factor = 2.0;
  double search_factor = 4.0;
  double min_box_px = 2.0;  // predicted sides are kept at least this large
};

struct TrackResult {
  std::vector<NormBox> boxes;                 // canvas units, one per frame; frame 0 is the given box
  std::vector<std::size_t> primitive_counts;  // per tracked frame (frames 1..n-1)
};

TrackResult track_sequence(const model::ModelSnapshot& model, const data::Sequence& seq, const InferConfig& cfg = {});

// Success over the 21 thresholds 0, 0.05, ..., 1 with IoU strictly above each.
inline constexpr int kIouThresholds = 21;
std::vector<double> success_curve(std::span<const NormBox> preds, std::span<const NormBox> gts,
                                  std::span<const std::uint8_t> visible);
double success_auc(std::span<const NormBox> preds, std::span<const NormBox> gts, std::span<const std::uint8_t> visible);

struct PrecisionOptions {
  double threshold_px = 20.0;
  double reference_canvas = 640.0;  // the pixel threshold is scaled by canvas / reference_canvas
  int norm_thresholds = 101;        // 0, 0.005, ..., 0.5
  double norm_max = 0.5;
};

struct PrecisionResult {
  double precision = 0;
  double norm_precision = 0;
};

PrecisionResult precision_metrics(std::span<const NormBox> preds, std::span<const NormBox> gts,
                                  std::span<const std::uint8_t> visible, int canvas, const PrecisionOptions& opt = {});

struct SuiteResult {
  std::string suite;
  int trajectories = 0;
  double auc = 0, precision = 0, norm_precision = 0;
  std::vector<double> curve;  // mean success curve across trajectories
};

struct EvalReport {
  std::vector<SuiteResult> suites;  // sorted by name
  double mean_auc = 0, mean_precision = 0, mean_norm_precision = 0;
  std::string checkpoint_id;
  double wall_clock_s = 0;
};

// Per-trajectory metrics averaged over the suite. Sequences without visible frames
// after the first are skipped.
SuiteResult evaluate_suite(const model::ModelSnapshot& model, const std::string& name,
                           std::span<const data::Sequence> sequences, const InferConfig& cfg = {});

// Unweighted mean over suites, accumulated in suite-name order.
EvalReport bench_aggregate(std::vector<SuiteResult> suites);

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_curve_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace progtrack::eval
