#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "progtrack/autodiff/ops.hpp"
#include "progtrack/box.hpp"
#include "progtrack/image.hpp"

namespace progtrack::model {

struct TrackerConfig {
  int patch_size = 8;
  int embed_dim = 32;
  int num_layers = 2;
  int num_heads = 4;
  double mlp_ratio = 4.0;
  int template_res = 32;
  int search_res = 64;
  int head_hidden_dim = 32;
  int channels = 3;

  int template_grid() const { return template_res / patch_size; }
  int search_grid() const { return search_res / patch_size; }
  int template_tokens() const { return template_grid() * template_grid(); }
  int search_tokens() const { return search_grid() * search_grid(); }
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio); }
  int patch_dim() const { return patch_size * patch_size * channels; }

  // Throws ContractViolation when resolutions are not patch-divisible, heads do
  // not divide the width, or any size is non-positive.
  void validate() const;
  bool operator==(const TrackerConfig&) const = default;
};

std::int64_t parameter_count(const TrackerConfig& cfg);

// Xavier-uniform linear weights, std-0.02 embeddings, unit norms, zero biases; the
// score head's output bias starts at a 0.1 prior.
template <class Real>
ad::ParamSet<Real> init_params(const TrackerConfig& cfg, std::uint64_t seed);

// Per-sample patch masks (1 = masked). Empty vectors mean the branch is clean.
struct PatchMasks {
  std::vector<std::vector<std::uint8_t>> search;
  std::vector<std::vector<std::uint8_t>> templ;
};

template <class Real>
struct TrackOutput {
  int grid = 0;
  ad::Var<Real> score;                  // [B, S*S], post-sigmoid, clamped to [1e-4, 1 - 1e-4]
  ad::Var<Real> offset;                 // [B, S*S, 2], (x, y) sub-cell offsets in (0, 1)
  ad::Var<Real> size;                   // [B, S*S, 2], (w, h) in search-crop units
  std::vector<ad::Var<Real>> features;  // per layer, search tokens [B, S*S, D]
  std::vector<NormBox> boxes;           // decoded at each sample's score argmax

  int batch() const { return score.shape()[0]; }
};

// Raster-ordered patches of each image projected by `weight` [P*P*C, D] plus `bias` [D].
// Result is [B, N, D].
template <class Real>
ad::Var<Real> patchify(ad::Tape<Real>& tape, std::span<const Image> images, int patch_size,
                       ad::Var<Real> weight, ad::Var<Real> bias);

template <class Real>
TrackOutput<Real> forward(ad::Tape<Real>& tape, const ad::VarMap<Real>& params, const TrackerConfig& cfg,
                          std::span<const Image> templates, std::span<const Image> searches,
                          const PatchMasks* masks = nullptr);

// Index of the largest entry; ties go to the smallest raster index.
template <class Real>
int argmax_cell(std::span<const Real> score);

// center = ((col + offset_x) / S, (row + offset_y) / S), size read at the same cell,
// everything clamped to [0, 1]. `location` defaults to the score argmax.
template <class Real>
NormBox decode_box(std::span<const Real> score, std::span<const Real> offset, std::span<const Real> size,
                   int grid, std::optional<int> location = std::nullopt);

// decode_box for sample `b` of a batched output.
template <class Real>
NormBox decode_sample(const TrackOutput<Real>& out, int b, std::optional<int> location = std::nullopt);

}  // namespace progtrack::model
