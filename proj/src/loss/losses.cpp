#include "progtrack/loss/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace progtrack::loss {

using ad::Tensor;
using ad::Var;

double gaussian_sigma(const NormBox& gt, int grid) {
  return std::max(1.0, (gt.w * grid + gt.h * grid) / 12.0);
}

TargetMaps make_gaussian_target(const NormBox& gt, int grid) {
  if (grid <= 0) throw ContractViolation("make_gaussian_target: grid must be positive");
  TargetMaps t;
  t.grid = grid;
  t.col = std::clamp(static_cast<int>(std::floor(gt.cx * grid)), 0, grid - 1);
  t.row = std::clamp(static_cast<int>(std::floor(gt.cy * grid)), 0, grid - 1);
  t.offset_x = gt.cx * grid - t.col;
  t.offset_y = gt.cy * grid - t.row;
  t.width = gt.w;
  t.height = gt.h;
  const double sigma = gaussian_sigma(gt, grid);
  const double denom = 2.0 * sigma * sigma;
  t.score.resize(static_cast<std::size_t>(grid) * grid);
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      const double di = i - t.row;
      const double dj = j - t.col;
      t.score[i * grid + j] = std::exp(-(di * di + dj * dj) / denom);
    }
  }
  t.score[t.cell()] = 1.0;
  return t;
}

double giou(const NormBox& a, const NormBox& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = iw * ih;
  const double area_a = (a.x2() - a.x1()) * (a.y2() - a.y1());
  const double area_b = (b.x2() - b.x1()) * (b.y2() - b.y1());
  const double uni = area_a + area_b - inter;
  const double hull = (std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1())) *
                      (std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1()));
  return inter / uni - (hull - uni) / hull;
}

double l1_box(const NormBox& a, const NormBox& b) {
  return (std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) + std::abs(a.h - b.h)) / 4.0;
}

namespace {

template <class Real>
Var<Real> column(Var<Real> boxes, int c) {
  return ad::slice(boxes, 1, c, 1);
}

template <class Real>
void check_finite(Var<Real> v, const char* what) {
  for (Real x : v.value().data)
    if (!std::isfinite(x)) throw NumericFault(std::string("non-finite ") + what);
}

template <class Real>
void check_boxes(Var<Real> a, Var<Real> b) {
  if (a.shape().size() != 2 || a.shape()[1] != 4 || a.shape() != b.shape()) {
    throw ContractViolation("box tensors must both be [B, 4], got " + ad::to_string(a.shape()) + " and " +
                            ad::to_string(b.shape()));
  }
}

// [B, S*S] one-hot constant.
template <class Real>
Var<Real> one_hot(ad::Tape<Real>& tape, std::span<const int> cells, int n) {
  Tensor<Real> t({static_cast<int>(cells.size()), n});
  for (std::size_t b = 0; b < cells.size(); ++b) t[b * n + cells[b]] = Real(1);
  return tape.constant(std::move(t));
}

template <class Real>
LossParts<Real> combine(Var<Real> cls, Var<Real> pred_boxes, Var<Real> ref_boxes, const TrackLossWeights& w) {
  LossParts<Real> parts;
  parts.cls = cls;
  parts.iou = ad::mean(ad::rsub(1.0, giou(pred_boxes, ref_boxes)));
  parts.l1 = ad::mean(l1_box(pred_boxes, ref_boxes));
  Var<Real> total = w.cls == 1.0 ? cls : ad::scale(cls, w.cls);
  total = ad::add(total, ad::scale(parts.iou, w.iou));
  total = ad::add(total, ad::scale(parts.l1, w.l1));
  parts.total = total;
  check_finite(total, "tracking loss");
  return parts;
}

}  // namespace

template <class Real>
Var<Real> giou(Var<Real> a, Var<Real> b) {
  check_boxes(a, b);
  const int n = a.shape()[0];
  auto corners = [](Var<Real> box) {
    const Var<Real> cx = column(box, 0), cy = column(box, 1);
    const Var<Real> hw = ad::scale(column(box, 2), 0.5), hh = ad::scale(column(box, 3), 0.5);
    return std::array<Var<Real>, 4>{ad::sub(cx, hw), ad::sub(cy, hh), ad::add(cx, hw), ad::add(cy, hh)};
  };
  const auto [ax1, ay1, ax2, ay2] = corners(a);
  const auto [bx1, by1, bx2, by2] = corners(b);
  const Var<Real> iw = ad::relu(ad::sub(ad::minimum(ax2, bx2), ad::maximum(ax1, bx1)));
  const Var<Real> ih = ad::relu(ad::sub(ad::minimum(ay2, by2), ad::maximum(ay1, by1)));
  const Var<Real> inter = ad::mul(iw, ih);
  const Var<Real> area_a = ad::mul(ad::sub(ax2, ax1), ad::sub(ay2, ay1));
  const Var<Real> area_b = ad::mul(ad::sub(bx2, bx1), ad::sub(by2, by1));
  const Var<Real> uni = ad::sub(ad::add(area_a, area_b), inter);
  const Var<Real> hull = ad::mul(ad::sub(ad::maximum(ax2, bx2), ad::minimum(ax1, bx1)),
                                 ad::sub(ad::maximum(ay2, by2), ad::minimum(ay1, by1)));
  const Var<Real> g = ad::sub(ad::div(inter, uni), ad::div(ad::sub(hull, uni), hull));
  return ad::reshape(g, {n});
}

template <class Real>
Var<Real> l1_box(Var<Real> a, Var<Real> b) {
  check_boxes(a, b);
  return ad::mean(ad::abs(ad::sub(a, b)), 1);
}

template <class Real>
Var<Real> focal_loss(Var<Real> score, std::span<const TargetMaps> targets) {
  const auto& s = score.shape();
  if (s.size() != 2 || s[0] != static_cast<int>(targets.size())) {
    throw ContractViolation("focal_loss: score " + ad::to_string(s) + " vs " + std::to_string(targets.size()) +
                            " targets");
  }
  const int b = s[0];
  const int n = s[1];
  Tensor<Real> pos({b, n});
  Tensor<Real> neg_weight({b, n});
  for (int i = 0; i < b; ++i) {
    if (static_cast<int>(targets[i].score.size()) != n) {
      throw ContractViolation("focal_loss: target grid does not match score map");
    }
    for (int j = 0; j < n; ++j) {
      const bool peak = j == targets[i].cell();
      pos[i * n + j] = peak ? Real(1) : Real(0);
      neg_weight[i * n + j] = peak ? Real(0) : static_cast<Real>(std::pow(1.0 - targets[i].score[j], kFocalBeta));
    }
  }
  auto& tape = score.tape();
  const Var<Real> pos_term =
      ad::mul(tape.constant(std::move(pos)), ad::mul(ad::pow(ad::rsub(1.0, score), kFocalAlpha), ad::log(score)));
  const Var<Real> neg_term = ad::mul(tape.constant(std::move(neg_weight)),
                                     ad::mul(ad::pow(score, kFocalAlpha), ad::log(ad::rsub(1.0, score))));
  const Var<Real> loss = ad::scale(ad::sum(ad::add(pos_term, neg_term)), -1.0 / b);
  check_finite(loss, "focal loss");
  return loss;
}

template <class Real>
Var<Real> boxes_at(const model::TrackOutput<Real>& out, std::span<const int> cells) {
  const int b = out.batch();
  const int n = out.grid * out.grid;
  if (static_cast<int>(cells.size()) != b) throw ContractViolation("boxes_at: one cell per sample required");
  auto& tape = out.score.tape();
  const Var<Real> pick = ad::reshape(one_hot(tape, cells, n), {b, n, 1});
  const Var<Real> off = ad::sum(ad::mul(out.offset, pick), 1);  // [B, 2]
  const Var<Real> size = ad::sum(ad::mul(out.size, pick), 1);   // [B, 2]
  Tensor<Real> origin({b, 2});
  for (int i = 0; i < b; ++i) {
    origin[2 * i] = static_cast<Real>(cells[i] % out.grid);
    origin[2 * i + 1] = static_cast<Real>(cells[i] / out.grid);
  }
  const Var<Real> center = ad::scale(ad::add(off, tape.constant(std::move(origin))), 1.0 / out.grid);
  const Var<Real> parts[] = {center, size};
  return ad::concat<Real>(parts, 1);
}

template <class Real>
LossParts<Real> track_loss(const model::TrackOutput<Real>& pred, std::span<const TargetMaps> targets,
                           std::span<const NormBox> gt, const TrackLossWeights& w) {
  const int b = pred.batch();
  if (static_cast<int>(targets.size()) != b || static_cast<int>(gt.size()) != b) {
    throw ContractViolation("track_loss: need one target per sample");
  }
  std::vector<int> cells(b);
  Tensor<Real> gt_boxes({b, 4});
  for (int i = 0; i < b; ++i) {
    if (targets[i].grid != pred.grid) throw ContractViolation("track_loss: target grid does not match prediction");
    cells[i] = targets[i].cell();
    gt_boxes[4 * i] = static_cast<Real>(gt[i].cx);
    gt_boxes[4 * i + 1] = static_cast<Real>(gt[i].cy);
    gt_boxes[4 * i + 2] = static_cast<Real>(gt[i].w);
    gt_boxes[4 * i + 3] = static_cast<Real>(gt[i].h);
  }
  const Var<Real> cls = focal_loss(pred.score, targets);
  return combine(cls, boxes_at(pred, cells), pred.score.tape().constant(std::move(gt_boxes)), w);
}

template <class Real>
LossParts<Real> soft_track_loss(const model::TrackOutput<Real>& student, Var<Real> ref_score, Var<Real> ref_boxes,
                                std::span<const int> cells, const TrackLossWeights& w) {
  if (ref_score.shape() != student.score.shape()) {
    throw ContractViolation("soft_track_loss: score maps differ in shape " + ad::to_string(student.score.shape()) +
                            " vs " + ad::to_string(ref_score.shape()));
  }
  const int b = student.batch();
  const Var<Real> p = student.score;
  // -(r log p + (1 - r) log(1 - p)), averaged over cells so the weight does not grow with the grid.
  const Var<Real> ce = ad::add(ad::mul(ref_score, ad::log(p)), ad::mul(ad::rsub(1.0, ref_score), ad::log(ad::rsub(1.0, p))));
  const Var<Real> cls = ad::scale(ad::sum(ce), -1.0 / (b * ref_score.shape()[1]));
  return combine(cls, boxes_at(student, cells), ref_boxes, w);
}

template <class Real>
LossParts<Real> soft_track_loss(const model::TrackOutput<Real>& student, const model::TrackOutput<Real>& reference,
                                const SoftLossOptions& opt) {
  if (student.grid != reference.grid || student.batch() != reference.batch()) {
    throw ContractViolation("soft_track_loss: student and reference maps differ in shape");
  }
  auto& tape = student.score.tape();
  const int b = student.batch();
  const int n = student.grid * student.grid;
  std::vector<int> cells(b);
  const auto& rs = reference.score.value().data;
  for (int i = 0; i < b; ++i) {
    cells[i] = model::argmax_cell<Real>(std::span<const Real>(rs.data() + static_cast<std::size_t>(i) * n, n));
  }
  Var<Real> ref_score = reference.score;
  Var<Real> ref_boxes = boxes_at(reference, cells);
  if (opt.detach_reference) {
    ref_score = tape.detach(ref_score);
    ref_boxes = tape.detach(ref_boxes);
  }
  return soft_track_loss(student, ref_score, ref_boxes, cells, opt.weights);
}

template <class Real>
Var<Real> feature_l2(std::span<const Var<Real>> features, std::span<const Var<Real>> reference,
                     std::span<const int> layers, const FeatureAdapter<Real>* adapter) {
  if (layers.empty()) throw ContractViolation("feature_l2: empty layer selection");
  Var<Real> total;
  for (int layer : layers) {
    if (layer < 0 || layer >= static_cast<int>(features.size()) || layer >= static_cast<int>(reference.size())) {
      throw ContractViolation("feature_l2: layer " + std::to_string(layer) + " not present in both feature lists");
    }
    Var<Real> ref = reference[layer];
    if (adapter != nullptr && *adapter) ref = (*adapter)(ref, layer);
    if (ref.shape() != features[layer].shape()) {
      throw ContractViolation("feature_l2: feature shapes " + ad::to_string(features[layer].shape()) + " and " +
                              ad::to_string(ref.shape()) + " differ and no adapter bridges them");
    }
    const Var<Real> term = ad::mean(ad::square(ad::sub(features[layer], ref)));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return layers.size() == 1 ? total : ad::scale(total, 1.0 / static_cast<double>(layers.size()));
}

#define PROGTRACK_INSTANTIATE_LOSS(R)                                                                           \
  template Var<R> giou(Var<R>, Var<R>);                                                                         \
  template Var<R> l1_box(Var<R>, Var<R>);                                                                       \
  template Var<R> focal_loss(Var<R>, std::span<const TargetMaps>);                                              \
  template Var<R> boxes_at(const model::TrackOutput<R>&, std::span<const int>);                                 \
  template LossParts<R> track_loss(const model::TrackOutput<R>&, std::span<const TargetMaps>,                   \
                                   std::span<const NormBox>, const TrackLossWeights&);                          \
  template LossParts<R> soft_track_loss(const model::TrackOutput<R>&, const model::TrackOutput<R>&,             \
                                        const SoftLossOptions&);                                                \
  template LossParts<R> soft_track_loss(const model::TrackOutput<R>&, Var<R>, Var<R>, std::span<const int>,    \
                                        const TrackLossWeights&);                                               \
  template Var<R> feature_l2(std::span<const Var<R>>, std::span<const Var<R>>, std::span<const int>,            \
                             const FeatureAdapter<R>*);

PROGTRACK_INSTANTIATE_LOSS(float)
PROGTRACK_INSTANTIATE_LOSS(double)

}  // namespace progtrack::loss
