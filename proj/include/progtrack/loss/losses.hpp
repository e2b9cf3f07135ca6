#pragma once

#include <functional>
#include <span>
#include <vector>

#include "progtrack/autodiff/ops.hpp"
#include "progtrack/box.hpp"
#include "progtrack/model/tracker.hpp"

namespace progtrack::loss {

// Ground-truth supervision on an S x S grid.
struct TargetMaps {
  int grid = 0;
  std::vector<double> score;  // raster order, exactly one entry equal to 1
  int row = 0;
  int col = 0;
  double offset_x = 0, offset_y = 0;
  double width = 0, height = 0;

  int cell() const { return row * grid + col; }
};

struct TrackLossWeights {
  double cls = 1.0;
  double iou = 2.0;
  double l1 = 5.0;
};

// Focal-loss shape parameters (alpha on the prediction, beta on the target falloff).
inline constexpr double kFocalAlpha = 2.0;
inline constexpr double kFocalBeta = 4.0;

double gaussian_sigma(const NormBox& gt, int grid);
TargetMaps make_gaussian_target(const NormBox& gt, int grid);

// GIoU in [-1, 1]; the loss form is 1 - giou.
double giou(const NormBox& a, const NormBox& b);
double l1_box(const NormBox& a, const NormBox& b);

// Differentiable per-row versions over [B, 4] (cx, cy, w, h) tensors; result is [B].
template <class Real> ad::Var<Real> giou(ad::Var<Real> a, ad::Var<Real> b);
template <class Real> ad::Var<Real> l1_box(ad::Var<Real> a, ad::Var<Real> b);

// Gaussian-weighted focal loss summed over cells and divided by the number of peaks.
template <class Real>
ad::Var<Real> focal_loss(ad::Var<Real> score, std::span<const TargetMaps> targets);

template <class Real>
struct LossParts {
  ad::Var<Real> total;
  ad::Var<Real> cls;
  ad::Var<Real> iou;  // mean (1 - giou)
  ad::Var<Real> l1;
};

// cls + 2 (1 - giou) + 5 L1 with the predicted box read at each ground-truth cell.
template <class Real>
LossParts<Real> track_loss(const model::TrackOutput<Real>& pred, std::span<const TargetMaps> targets,
                           std::span<const NormBox> gt, const TrackLossWeights& w = {});

// [B, 4] predicted boxes read from the offset/size maps at the given cells.
template <class Real>
ad::Var<Real> boxes_at(const model::TrackOutput<Real>& out, std::span<const int> cells);

struct SoftLossOptions {
  TrackLossWeights weights;
  // Stop gradients through the reference side. false gives symmetric gradients.
  bool detach_reference = true;
};

// Output-to-output tracking loss: BCE of the student score map against the reference
// map as soft targets (averaged over cells and batch) plus the weighted
// GIoU and L1 between the boxes both models predict at the reference argmax cell.
template <class Real>
LossParts<Real> soft_track_loss(const model::TrackOutput<Real>& student, const model::TrackOutput<Real>& reference,
                                const SoftLossOptions& opt = {});

// Same loss against an arbitrary reference: score [B, S*S] on the student's grid,
// boxes [B, 4], and the student cell to read its box from for each sample.
template <class Real>
LossParts<Real> soft_track_loss(const model::TrackOutput<Real>& student, ad::Var<Real> ref_score,
                                ad::Var<Real> ref_boxes, std::span<const int> cells, const TrackLossWeights& w);

template <class Real>
using FeatureAdapter = std::function<ad::Var<Real>(ad::Var<Real> reference_feature, int layer)>;

// Mean squared difference over the selected layers' entries, averaged over layers.
// The adapter, when given, maps the reference side into the student's shape.
template <class Real>
ad::Var<Real> feature_l2(std::span<const ad::Var<Real>> features, std::span<const ad::Var<Real>> reference,
                         std::span<const int> layers, const FeatureAdapter<Real>* adapter = nullptr);

}  // namespace progtrack::loss
