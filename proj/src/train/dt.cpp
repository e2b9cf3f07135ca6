#include "progtrack/train/dt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "progtrack/errors.hpp"

namespace progtrack::train {

using ad::ParamSet;
using ad::Tensor;
using ad::Var;
using ad::VarMap;

bool Schedule::identically_zero() const {
  switch (kind) {
    case ScheduleKind::Constant: return start == 0.0;
    case ScheduleKind::Linear: return start == 0.0 && end == 0.0;
    case ScheduleKind::StepDrop: return (start == 0.0 || drop_fraction <= 0.0) && end == 0.0;
  }
  return false;
}

double schedule_value(const Schedule& s, int epoch, int total_epochs) {
  if (total_epochs < 1 || epoch < 0 || epoch >= total_epochs) {
    throw ContractViolation("schedule_value: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(total_epochs) + ")");
  }
  switch (s.kind) {
    case ScheduleKind::Constant: return s.start;
    case ScheduleKind::Linear:
      if (total_epochs == 1) return s.start;
      if (epoch == total_epochs - 1) return s.end;
      return s.start + (s.end - s.start) * epoch / (total_epochs - 1);
    case ScheduleKind::StepDrop: return epoch < s.drop_fraction * total_epochs ? s.start : s.end;
  }
  return s.start;
}

int MaskSpec::count() const { return static_cast<int>(std::count(masked.begin(), masked.end(), 1)); }

MaskSpec sample_mask(int num_patches, double ratio, std::uint64_t seed) {
  if (num_patches < 1) throw ContractViolation("sample_mask: need at least one patch");
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ContractViolation("sample_mask: ratio must lie in [0, 1)");
  MaskSpec m;
  m.ratio = ratio;
  m.seed = seed;
  m.masked.assign(num_patches, 0);
  const int k = static_cast<int>(std::lround(ratio * num_patches));
  if (k == 0) return m;
  // partial Fisher-Yates: the first k slots form a uniform k-subset
  std::vector<int> order(num_patches);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(num_patches - i)));
    std::swap(order[i], order[j]);
    m.masked[order[i]] = 1;
  }
  return m;
}

void DTConfig::validate() const {
  if (epochs < 1 || steps_per_epoch < 1 || batch_size < 1)
    throw ContractViolation("DTConfig: epochs, steps and batch size must be positive");
  if (!(base_lr > 0)) throw ContractViolation("DTConfig: learning rate must be positive");
  if (!(lr_drop_fraction >= 0 && lr_drop_fraction <= 1)) throw ContractViolation("DTConfig: lr drop fraction outside [0, 1]");
  if (!(lr_drop_factor > 0)) throw ContractViolation("DTConfig: lr drop factor must be positive");
  if (!(lambda_align >= 0)) throw ContractViolation("DTConfig: lambda_align must be >= 0");
  for (const Schedule* s : {&lambda_transfer}) {
    if (s->start < 0 || s->end < 0) throw ContractViolation("DTConfig: lambda_transfer must be >= 0");
  }
  for (double v : {mask_ratio.start, mask_ratio.end}) {
    if (!(v >= 0 && v < 1)) throw ContractViolation("DTConfig: mask ratio must lie in [0, 1)");
  }
  if (max_frame_gap < 1) throw ContractViolation("DTConfig: max frame gap must be >= 1");
  if (!(crop.template_factor > 1) || !(crop.search_factor > 1))
    throw ContractViolation("DTConfig: crop factors must be > 1");
}

bool DTConfig::naive() const {
  return lambda_align == 0.0 && lambda_transfer.identically_zero() && mask_ratio.identically_zero();
}

std::vector<int> resolve_layers(std::span<const int> selection, int num_layers) {
  std::vector<int> out;
  if (selection.empty()) return {num_layers - 1};
  for (int l : selection) {
    const int r = l < 0 ? num_layers + l : l;
    if (r < 0 || r >= num_layers) {
      throw ContractViolation("feature layer " + std::to_string(l) + " outside a " + std::to_string(num_layers) +
                              "-layer model");
    }
    if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
  }
  std::sort(out.begin(), out.end());
  return out;
}

int teacher_layer_for(int student_layer, int student_depth, int teacher_depth) {
  const int t = static_cast<int>(std::lround(static_cast<double>(student_layer + 1) * teacher_depth / student_depth)) - 1;
  return std::clamp(t, 0, teacher_depth - 1);
}

ParamSet<float> make_adapter(const model::TrackerConfig& teacher, const model::TrackerConfig& student,
                             std::span<const int> student_layers) {
  teacher.validate();
  student.validate();
  ParamSet<float> out;
  const int dt = teacher.embed_dim, ds = student.embed_dim;
  for (int l : student_layers) {
    Tensor<float> proj({dt, ds}, 0.0f);
    for (int i = 0; i < std::min(dt, ds); ++i) proj[static_cast<std::int64_t>(i) * ds + i] = 1.0f;
    out.emplace("adapter." + std::to_string(l) + ".proj", std::move(proj));
  }
  return out;
}

Tensor<double> resample_matrix(int src, int dst) {
  if (src < 1 || dst < 1) throw ContractViolation("resample_matrix: grids must be positive");
  // 1-D weights, then the 2-D matrix as their outer product
  std::vector<double> w1(static_cast<std::size_t>(dst) * src, 0.0);
  for (int j = 0; j < dst; ++j) {
    double x = (j + 0.5) * src / dst - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(src - 1));
    const int i0 = std::min(static_cast<int>(std::floor(x)), src - 1);
    const int i1 = std::min(i0 + 1, src - 1);
    const double f = x - i0;
    w1[static_cast<std::size_t>(j) * src + i0] += 1.0 - f;
    w1[static_cast<std::size_t>(j) * src + i1] += f;
  }
  const int n_src = src * src, n_dst = dst * dst;
  Tensor<double> m({n_dst, n_src}, 0.0);
  for (int dy = 0; dy < dst; ++dy)
    for (int dx = 0; dx < dst; ++dx)
      for (int sy = 0; sy < src; ++sy) {
        const double wy = w1[static_cast<std::size_t>(dy) * src + sy];
        if (wy == 0) continue;
        for (int sx = 0; sx < src; ++sx) {
          const double wx = w1[static_cast<std::size_t>(dx) * src + sx];
          if (wx == 0) continue;
          m[static_cast<std::int64_t>(dy * dst + dx) * n_src + sy * src + sx] = wy * wx;
        }
      }
  return m;
}

std::pair<std::vector<Image>, std::vector<Image>> Batch::render(int template_res, int search_res) const {
  std::vector<Image> t, s;
  for (int i = 0; i < size(); ++i) {
    t.push_back(data::crop_resize(*sequences[i], template_frames[i], template_windows[i], template_res));
    s.push_back(data::crop_resize(*sequences[i], search_frames[i], search_windows[i], search_res));
  }
  return {std::move(t), std::move(s)};
}

Batch sample_batch(const TrainingData& data, const DTConfig& cfg, int template_res, int search_res, Rng& rng) {
  if (data.datasets.empty()) throw ContractViolation("sample_batch: no training data");
  std::vector<int> sizes;
  for (const auto& d : data.datasets) sizes.push_back(static_cast<int>(d.size()));
  data::CropOptions opt = cfg.crop;
  opt.template_res = template_res;
  opt.search_res = search_res;

  Batch b;
  int attempts = 0;
  while (b.size() < cfg.batch_size) {
    if (++attempts > 1000 * cfg.batch_size) throw ContractViolation("sample_batch: could not find visible pairs");
    const auto idx = data::balanced_sample(sizes, rng, data.weights);
    const data::Sequence& seq = data.datasets[idx.dataset][idx.trajectory];
    const int len = seq.length();
    const int t = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(len - 1)));
    const int gap = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.max_frame_gap)));
    const int ts = std::min(t + gap, len - 1);
    auto pair = data::crop_pair(seq, t, ts, opt, &rng);
    if (!pair) continue;
    const NormBox& g = pair->gt;
    if (!(g.cx >= 0 && g.cx < 1 && g.cy >= 0 && g.cy < 1 && g.w < 1 && g.h < 1)) continue;
    b.templates.push_back(std::move(pair->templ));
    b.searches.push_back(std::move(pair->search));
    b.gts.push_back(g);
    b.sequences.push_back(&seq);
    b.template_frames.push_back(t);
    b.search_frames.push_back(ts);
    b.template_windows.push_back(pair->template_window);
    b.search_windows.push_back(pair->search_window);
  }
  return b;
}

std::vector<loss::TargetMaps> make_targets(std::span<const NormBox> gts, int grid) {
  std::vector<loss::TargetMaps> out;
  out.reserve(gts.size());
  for (const auto& g : gts) out.push_back(loss::make_gaussian_target(g, grid));
  return out;
}

template <class Real>
std::pair<model::TrackOutput<Real>, model::TrackOutput<Real>> dual_branch_forward(
    ad::Tape<Real>& tape, const VarMap<Real>& params, const model::TrackerConfig& cfg, std::span<const Image> templates,
    std::span<const Image> searches, std::span<const MaskSpec> search_masks, std::span<const MaskSpec> template_masks) {
  const int b = static_cast<int>(searches.size());
  if (static_cast<int>(search_masks.size()) != b) throw ContractViolation("dual_branch_forward: one mask per sample");
  if (!template_masks.empty() && static_cast<int>(template_masks.size()) != b)
    throw ContractViolation("dual_branch_forward: one template mask per sample");
  model::PatchMasks pm;
  bool any = false;
  for (const auto& m : search_masks) {
    if (static_cast<int>(m.masked.size()) != cfg.search_tokens()) {
      throw ContractViolation("dual_branch_forward: mask of size " + std::to_string(m.masked.size()) + " for " +
                              std::to_string(cfg.search_tokens()) + " search patches");
    }
    any = any || m.count() > 0;
    pm.search.push_back(m.masked);
  }
  for (const auto& m : template_masks) {
    if (static_cast<int>(m.masked.size()) != cfg.template_tokens())
      throw ContractViolation("dual_branch_forward: template mask size mismatch");
    any = any || m.count() > 0;
    pm.templ.push_back(m.masked);
  }
  auto clean = model::forward(tape, params, cfg, templates, searches);
  auto masked = model::forward(tape, params, cfg, templates, searches, any ? &pm : nullptr);
  return {std::move(clean), std::move(masked)};
}

namespace {

// [B, N_src, D] -> [B, N_dst, D] through a constant [N_dst, N_src] matrix.
template <class Real>
Var<Real> resample_tokens(Var<Real> x, int src_grid, int dst_grid) {
  if (src_grid == dst_grid) return x;
  auto& tape = x.tape();
  const auto m = ad::cast<Real>(resample_matrix(src_grid, dst_grid));
  Tensor<Real> mt({m.shape[1], m.shape[0]});
  for (int i = 0; i < m.shape[0]; ++i)
    for (int j = 0; j < m.shape[1]; ++j)
      mt[static_cast<std::int64_t>(j) * m.shape[0] + i] = m[static_cast<std::int64_t>(i) * m.shape[1] + j];
  const Var<Real> xt = ad::permute(x, {0, 2, 1});              // [B, D, N_src]
  const Var<Real> r = ad::matmul(xt, tape.constant(std::move(mt)));  // [B, D, N_dst]
  return ad::permute(r, {0, 2, 1});
}

template <class Real>
Var<Real> resample_map(Var<Real> score, int src_grid, int dst_grid) {
  if (src_grid == dst_grid) return score;
  const int b = score.shape()[0];
  const Var<Real> x = ad::reshape(score, {b, src_grid * src_grid, 1});
  return ad::reshape(resample_tokens(x, src_grid, dst_grid), {b, dst_grid * dst_grid});
}

}  // namespace

template <class Real>
loss::LossParts<Real> transfer_loss(const model::TrackOutput<Real>& student, const model::TrackOutput<Real>& teacher,
                                    const VarMap<Real>& adapter, std::span<const int> student_layers,
                                    const loss::SoftLossOptions& opt) {
  auto& tape = student.score.tape();
  const int b = student.batch();
  if (teacher.batch() != b) throw ContractViolation("transfer_loss: batch sizes differ");
  const int ts = teacher.grid, ss = student.grid;
  const int tn = ts * ts;

  std::vector<int> tcells(b), scells(b);
  const auto& tv = teacher.score.value().data;
  for (int i = 0; i < b; ++i)
    tcells[i] = model::argmax_cell<Real>(std::span<const Real>(tv.data() + static_cast<std::size_t>(i) * tn, tn));
  Var<Real> ref_boxes = loss::boxes_at(teacher, tcells);
  if (ts == ss) {
    scells = tcells;
  } else {
    const auto& bv = ref_boxes.value().data;
    for (int i = 0; i < b; ++i) {
      const int col = std::clamp(static_cast<int>(std::floor(bv[4 * i] * ss)), 0, ss - 1);
      const int row = std::clamp(static_cast<int>(std::floor(bv[4 * i + 1] * ss)), 0, ss - 1);
      scells[i] = row * ss + col;
    }
  }
  // The teacher is frozen: nothing computed from it carries gradient, whatever the
  // reference-detach option says about student-to-student terms.
  const Var<Real> ref_score = tape.detach(resample_map(teacher.score, ts, ss));
  ref_boxes = tape.detach(ref_boxes);
  auto parts = loss::soft_track_loss(student, ref_score, ref_boxes, scells, opt.weights);

  // teacher features aligned to the student's layer indices, then adapted
  const int sdepth = static_cast<int>(student.features.size());
  const int tdepth = static_cast<int>(teacher.features.size());
  std::vector<Var<Real>> ref_feats(sdepth);
  for (int l : student_layers) {
    if (l < 0 || l >= sdepth) throw ContractViolation("transfer_loss: layer outside the student");
    ref_feats[l] = tape.detach(teacher.features[teacher_layer_for(l, sdepth, tdepth)]);
  }
  const loss::FeatureAdapter<Real> adapt = [&](Var<Real> ref, int layer) {
    const std::string key = "adapter." + std::to_string(layer) + ".proj";
    const auto it = adapter.find(key);
    const bool same = ref.shape() == student.features[layer].shape();
    if (it == adapter.end()) {
      if (same) return ref;
      throw ContractViolation("transfer_loss: missing " + key + " to bridge " + ad::to_string(ref.shape()) + " to " +
                              ad::to_string(student.features[layer].shape()));
    }
    return ad::matmul(resample_tokens(ref, ts, ss), it->second);
  };
  const Var<Real> feat = loss::feature_l2<Real>(student.features, ref_feats, student_layers, &adapt);
  parts.total = ad::add(parts.total, feat);
  return parts;
}

template <class Real>
loss::LossParts<Real> align_loss(const model::TrackOutput<Real>& clean, const model::TrackOutput<Real>& masked,
                                 std::span<const int> layers, const loss::SoftLossOptions& opt) {
  auto parts = loss::soft_track_loss(masked, clean, opt);
  std::vector<Var<Real>> ref = clean.features;
  if (opt.detach_reference) {
    for (int l : layers) {
      if (l < 0 || l >= static_cast<int>(ref.size())) throw ContractViolation("align_loss: layer outside the model");
      ref[l] = clean.score.tape().detach(ref[l]);
    }
  }
  const Var<Real> feat = loss::feature_l2<Real>(masked.features, ref, layers);
  parts.total = ad::add(parts.total, feat);
  return parts;
}

template <class Real>
Var<Real> total_loss(Var<Real> clean, std::optional<Var<Real>> transfer, std::optional<Var<Real>> align,
                     double lambda_transfer, double lambda_align) {
  if (lambda_transfer < 0 || lambda_align < 0) throw ContractViolation("total_loss: weights must be >= 0");
  Var<Real> total = clean;
  if (lambda_transfer != 0.0) {
    if (!transfer) throw ContractViolation("total_loss: nonzero lambda_transfer without a transfer term");
    total = ad::add(total, ad::scale(*transfer, lambda_transfer));
  }
  if (lambda_align != 0.0) {
    if (!align) throw ContractViolation("total_loss: nonzero lambda_align without an align term");
    total = ad::add(total, ad::scale(*align, lambda_align));
  }
  return total;
}

std::vector<EpochSummary> epoch_means(std::span<const LogRow> log) {
  std::vector<EpochSummary> out;
  std::vector<int> counts;
  for (const auto& r : log) {
    if (out.empty() || out.back().epoch != r.epoch) {
      out.push_back({r.epoch});
      counts.push_back(0);
    }
    auto& e = out.back();
    e.clean += r.clean;
    e.transfer += r.transfer;
    e.align += r.align;
    e.total += r.total;
    ++counts.back();
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].clean /= counts[i];
    out[i].transfer /= counts[i];
    out[i].align /= counts[i];
    out[i].total /= counts[i];
  }
  return out;
}

void write_log_csv(std::span<const LogRow> log, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "epoch,step,L_clean,L_transfer,L_align,L_total,lr,mask_ratio,lambda_transfer\n";
  char buf[512];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.step, r.clean, r.transfer,
                  r.align, r.total, r.lr, r.mask_ratio, r.lambda_transfer);
    os << buf;
  }
  if (!os) throw IoError("write failed: " + path.string());
}

template <class Real>
TrainResult train(const ParamSet<float>& init, const model::TrackerConfig& cfg, const TeacherHandle* teacher,
                  const TrainingData& data, const DTConfig& dt, const StepObserver<Real>& observer) {
  cfg.validate();
  dt.validate();
  if (teacher == nullptr && !dt.lambda_transfer.identically_zero()) {
    throw ContractViolation("train: lambda_transfer must be identically 0 without a teacher");
  }
  const std::vector<int> layers = resolve_layers(dt.feature_layers, cfg.num_layers);

  ParamSet<Real> trainable = ad::cast<Real>(init);
  ParamSet<Real> teacher_params;
  std::string teacher_digest;
  if (teacher != nullptr) {
    teacher->config.validate();
    teacher_digest = ad::params_digest(teacher->params);
    teacher_params = ad::cast<Real>(teacher->params);
    for (const auto& [name, t] : teacher->adapter) trainable.emplace(name, ad::cast<Real>(t));
  }
  auto state = ad::make_optim_state(trainable, dt.optimizer);

  Rng data_rng(seed_split(dt.seed, kDataStream));
  const std::uint64_t mask_seed = seed_split(dt.seed, kMaskStream);
  const Schedule lr_sched = dt.lr_schedule();
  const loss::SoftLossOptions soft{dt.loss_weights, dt.detach_reference};

  TrainResult result;
  result.teacher_digest = teacher_digest;
  int step = 0;
  for (int epoch = 0; epoch < dt.epochs; ++epoch) {
    const double lr = schedule_value(lr_sched, epoch, dt.epochs);
    const double ratio = schedule_value(dt.mask_ratio, epoch, dt.epochs);
    const double lt = schedule_value(dt.lambda_transfer, epoch, dt.epochs);
    const double la = dt.lambda_align;
    for (int s = 0; s < dt.steps_per_epoch; ++s, ++step) {
      const Batch batch = sample_batch(data, dt, cfg.template_res, cfg.search_res, data_rng);
      const auto targets = make_targets(batch.gts, cfg.search_grid());

      ad::Tape<Real> tape;
      const VarMap<Real> vars = tape.leaves(trainable);
      model::TrackOutput<Real> clean;
      std::optional<Var<Real>> l_align, l_transfer;
      if (la != 0.0) {
        std::vector<MaskSpec> sm, tm;
        for (int i = 0; i < batch.size(); ++i) {
          const auto k = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(dt.batch_size) + i;
          sm.push_back(sample_mask(cfg.search_tokens(), ratio, seed_split(mask_seed, 2 * k)));
          if (dt.mask_template) tm.push_back(sample_mask(cfg.template_tokens(), ratio, seed_split(mask_seed, 2 * k + 1)));
        }
        auto [c, m] = dual_branch_forward(tape, vars, cfg, batch.templates, batch.searches, sm, tm);
        clean = std::move(c);
        l_align = align_loss(clean, m, layers, soft).total;
      } else {
        clean = model::forward(tape, vars, cfg, batch.templates, batch.searches);
      }
      const auto l_clean = loss::track_loss(clean, targets, batch.gts, dt.loss_weights).total;
      if (lt != 0.0) {
        const VarMap<Real> tvars = tape.constants(teacher_params);
        model::TrackOutput<Real> tout;
        if (teacher->config.template_res == cfg.template_res && teacher->config.search_res == cfg.search_res) {
          tout = model::forward(tape, tvars, teacher->config, batch.templates, batch.searches);
        } else {
          const auto [tt, tsrch] = batch.render(teacher->config.template_res, teacher->config.search_res);
          tout = model::forward(tape, tvars, teacher->config, tt, tsrch);
        }
        l_transfer = transfer_loss(clean, tout, vars, layers, soft).total;
      }
      const Var<Real> total = total_loss(l_clean, l_transfer, l_align, lt, la);

      LogRow row{epoch,
                 step,
                 static_cast<double>(l_clean.value().item()),
                 l_transfer ? static_cast<double>(l_transfer->value().item()) : 0.0,
                 l_align ? static_cast<double>(l_align->value().item()) : 0.0,
                 static_cast<double>(total.value().item()),
                 lr,
                 ratio,
                 lt};
      if (!std::isfinite(row.total) || !std::isfinite(row.clean) || !std::isfinite(row.transfer) ||
          !std::isfinite(row.align)) {
        std::ostringstream os;
        os << "non-finite loss at step " << step << " (epoch " << epoch << "): L_clean=" << row.clean
           << " L_transfer=" << row.transfer << " L_align=" << row.align << " L_total=" << row.total;
        throw NumericFault(os.str());
      }
      const auto grads = tape.backward(total);
      ad::optimizer_step(trainable, grads, state, lr);
      result.log.push_back(row);
      if (observer) observer(step, row, trainable);
    }
  }

  if (teacher != nullptr && ad::params_digest(teacher->params) != teacher_digest) {
    throw IntegrityError("teacher parameters changed during training");
  }
  for (auto& [name, t] : trainable) {
    if (name.rfind("adapter.", 0) == 0) {
      result.adapter.emplace(name, ad::cast<float>(t));
    } else {
      result.params.emplace(name, ad::cast<float>(t));
    }
  }
  return result;
}

#define PROGTRACK_INSTANTIATE_DT(R)                                                                                  \
  template std::pair<model::TrackOutput<R>, model::TrackOutput<R>> dual_branch_forward(                             \
      ad::Tape<R>&, const VarMap<R>&, const model::TrackerConfig&, std::span<const Image>, std::span<const Image>, \
      std::span<const MaskSpec>, std::span<const MaskSpec>);                                                         \
  template loss::LossParts<R> transfer_loss(const model::TrackOutput<R>&, const model::TrackOutput<R>&,             \
                                            const VarMap<R>&, std::span<const int>, const loss::SoftLossOptions&);   \
  template loss::LossParts<R> align_loss(const model::TrackOutput<R>&, const model::TrackOutput<R>&,                \
                                         std::span<const int>, const loss::SoftLossOptions&);                        \
  template Var<R> total_loss(Var<R>, std::optional<Var<R>>, std::optional<Var<R>>, double, double);                 \
  template TrainResult train<R>(const ParamSet<float>&, const model::TrackerConfig&, const TeacherHandle*,          \
                                const TrainingData&, const DTConfig&, const StepObserver<R>&);

PROGTRACK_INSTANTIATE_DT(float)
PROGTRACK_INSTANTIATE_DT(double)

}  // namespace progtrack::train
