#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "progtrack/autodiff/adamw.hpp"
#include "progtrack/data/synth.hpp"
#include "progtrack/loss/losses.hpp"
#include "progtrack/model/tracker.hpp"

namespace progtrack::train {

enum class ScheduleKind { Constant, Linear, StepDrop };

struct Schedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double start = 0.0;  // constant value, linear start, or value before the drop
  double end = 0.0;    // linear end or value after the drop
  double drop_fraction = 1.0;

  static Schedule constant(double v) { return {ScheduleKind::Constant, v, v, 1.0}; }
  static Schedule linear(double from, double to) { return {ScheduleKind::Linear, from, to, 1.0}; }
  static Schedule step_drop(double before, double after, double fraction) {
    return {ScheduleKind::StepDrop, before, after, fraction};
  }
  bool identically_zero() const;
  bool operator==(const Schedule&) const = default;
};

// Epoch-granular: linear interpolates start..end over epochs 0..total-1; step-drop
// switches once epoch >= fraction * total.
double schedule_value(const Schedule& s, int epoch, int total_epochs);

struct MaskSpec {
  std::vector<std::uint8_t> masked;  // 1 = replaced by the mask token
  double ratio = 0.0;
  std::uint64_t seed = 0;

  int count() const;
};

// Exactly round(ratio * num_patches) distinct patches, uniformly chosen.
MaskSpec sample_mask(int num_patches, double ratio, std::uint64_t seed);

struct DTConfig {
  int epochs = 10;
  int steps_per_epoch = 20;
  int batch_size = 8;
  double base_lr = 4e-4;
  double lr_drop_fraction = 0.8;
  double lr_drop_factor = 0.1;
  ad::AdamWHyper optimizer;  // weight decay 1e-4
  double lambda_align = 0.1;
  Schedule lambda_transfer = Schedule::step_drop(0.5, 0.0, 0.9);
  Schedule mask_ratio = Schedule::linear(0.05, 0.4);
  std::vector<int> feature_layers;  // empty: last layer only
  bool mask_template = false;
  bool detach_reference = true;
  loss::TrackLossWeights loss_weights;
  data::CropOptions crop{2.0, 4.0, 32, 64, 3.0, 0.25};
  int max_frame_gap = 30;
  std::uint64_t seed = 0;

  void validate() const;
  Schedule lr_schedule() const { return Schedule::step_drop(base_lr, base_lr * lr_drop_factor, lr_drop_fraction); }
  // λ_transfer == 0, λ_align == 0 and no masking: plain supervised training.
  bool naive() const;
};

// Selected layers resolved against a depth (negative indices count from the end).
std::vector<int> resolve_layers(std::span<const int> selection, int num_layers);

// Frozen teacher plus the trainable adapter mapping its features into the student's shape.
struct TeacherHandle {
  model::TrackerConfig config;
  ad::ParamSet<float> params;
  ad::ParamSet<float> adapter;  // "adapter.<student layer>.proj" [teacher dim, student dim]
  bool frozen = true;
};

// Per selected student layer an identity-initialized [Dt, Ds] projection (zero-padded
// when widths differ).
ad::ParamSet<float> make_adapter(const model::TrackerConfig& teacher, const model::TrackerConfig& student,
                                 std::span<const int> student_layers);

// Bilinear resampling matrix [dst*dst, src*src] between token grids (half-pixel centers).
ad::Tensor<double> resample_matrix(int src_grid, int dst_grid);

// Teacher layer compared against a student layer: same relative depth.
int teacher_layer_for(int student_layer, int student_depth, int teacher_depth);

// One training batch. Search windows are kept so a teacher at another resolution can
// see exactly the same image content.
struct Batch {
  std::vector<Image> templates;
  std::vector<Image> searches;
  std::vector<NormBox> gts;  // search-crop units
  std::vector<const data::Sequence*> sequences;
  std::vector<int> template_frames, search_frames;
  std::vector<data::CropWindow> template_windows, search_windows;

  int size() const { return static_cast<int>(gts.size()); }
  // Same crops re-rendered at another resolution pair.
  std::pair<std::vector<Image>, std::vector<Image>> render(int template_res, int search_res) const;
};

struct TrainingData {
  std::vector<std::span<const data::Sequence>> datasets;
  std::vector<double> weights;  // empty: balanced
};

// Pairs from one trajectory each: template frame t, search frame t + gap, gap uniform in
// [1, max_frame_gap] clipped to the sequence. Pairs with an invisible frame are redrawn,
// as are jittered crops that push the target center off the search crop.
Batch sample_batch(const TrainingData& data, const DTConfig& cfg, int template_res, int search_res, Rng& rng);

std::vector<loss::TargetMaps> make_targets(std::span<const NormBox> gts, int grid);

// Clean and masked passes with shared weights.
template <class Real>
std::pair<model::TrackOutput<Real>, model::TrackOutput<Real>> dual_branch_forward(
    ad::Tape<Real>& tape, const ad::VarMap<Real>& params, const model::TrackerConfig& cfg,
    std::span<const Image> templates, std::span<const Image> searches, std::span<const MaskSpec> search_masks,
    std::span<const MaskSpec> template_masks = {});

// Teacher outputs as seen by the student: score map resampled to the student grid,
// boxes in crop units, and selected features passed through the adapter. Every
// teacher-side value is detached; only the student and the adapter receive gradients.
template <class Real>
loss::LossParts<Real> transfer_loss(const model::TrackOutput<Real>& student, const model::TrackOutput<Real>& teacher,
                                    const ad::VarMap<Real>& adapter, std::span<const int> student_layers,
                                    const loss::SoftLossOptions& opt = {});

template <class Real>
loss::LossParts<Real> align_loss(const model::TrackOutput<Real>& clean, const model::TrackOutput<Real>& masked,
                                 std::span<const int> layers, const loss::SoftLossOptions& opt = {});

// L_clean + λt L_transfer + λa L_align. Terms with a zero weight are left out entirely,
// so with both weights zero the result is L_clean itself.
template <class Real>
ad::Var<Real> total_loss(ad::Var<Real> clean, std::optional<ad::Var<Real>> transfer,
                         std::optional<ad::Var<Real>> align, double lambda_transfer, double lambda_align);

struct LogRow {
  int epoch = 0;
  int step = 0;
  double clean = 0, transfer = 0, align = 0, total = 0;
  double lr = 0, mask_ratio = 0, lambda_transfer = 0;
};

struct EpochSummary {
  int epoch = 0;
  double clean = 0, transfer = 0, align = 0, total = 0;
};

std::vector<EpochSummary> epoch_means(std::span<const LogRow> log);
void write_log_csv(std::span<const LogRow> log, const std::filesystem::path& path);

template <class Real>
using StepObserver = std::function<void(int step, const LogRow& row, const ad::ParamSet<Real>& params)>;

struct TrainResult {
  ad::ParamSet<float> params;
  ad::ParamSet<float> adapter;
  std::vector<LogRow> log;
  std::string teacher_digest;  // empty without a teacher
};

// Stream ids for seed_split(cfg.seed, ...).
inline constexpr std::uint64_t kDataStream = 1;
inline constexpr std::uint64_t kMaskStream = 2;

template <class Real>
TrainResult train(const ad::ParamSet<float>& init, const model::TrackerConfig& cfg, const TeacherHandle* teacher,
                  const TrainingData& data, const DTConfig& dt, const StepObserver<Real>& observer = {});

}  // namespace progtrack::train
