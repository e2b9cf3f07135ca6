#include "progtrack/model/tracker.hpp"

#include <cmath>
#include <string>

#include "progtrack/rng.hpp"

namespace progtrack::model {

using ad::Tensor;
using ad::Var;

void TrackerConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ContractViolation(std::string(what) + " must be positive");
  };
  positive(patch_size, "patch_size");
  positive(embed_dim, "embed_dim");
  positive(num_layers, "num_layers");
  positive(num_heads, "num_heads");
  positive(template_res, "template_res");
  positive(search_res, "search_res");
  positive(head_hidden_dim, "head_hidden_dim");
  positive(channels, "channels");
  if (!(mlp_ratio > 0) || mlp_hidden() <= 0) throw ContractViolation("mlp_ratio must be positive");
  if (template_res % patch_size != 0 || search_res % patch_size != 0) {
    throw ContractViolation("resolutions " + std::to_string(template_res) + "/" + std::to_string(search_res) +
                            " are not divisible by patch size " + std::to_string(patch_size));
  }
  if (embed_dim % num_heads != 0) {
    throw ContractViolation("embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                            std::to_string(num_heads));
  }
}

std::int64_t parameter_count(const TrackerConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.embed_dim;
  const std::int64_t m = cfg.mlp_hidden();
  const std::int64_t hh = cfg.head_hidden_dim;
  std::int64_t n = cfg.patch_dim() * d + d;                  // patch embedding
  n += (cfg.template_tokens() + cfg.search_tokens()) * d;   // positional embeddings
  n += d;                                                    // mask token
  // the key projection has no bias: softmax cancels it exactly
  const std::int64_t block = 2 * d + 4 * d * d + 3 * d + 2 * d + (d * m + m) + (m * d + d);
  n += cfg.num_layers * block;
  n += 2 * d;  // final norm
  for (int out : {1, 2, 2}) n += d * hh + hh + hh * out + out;
  return n;
}

namespace {

std::string block_key(int layer, const char* suffix) { return "blocks." + std::to_string(layer) + "." + suffix; }

template <class Real>
Tensor<Real> xavier(Rng& rng, int fan_in, int fan_out) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<Real> t({fan_in, fan_out});
  for (auto& v : t.data) v = static_cast<Real>(uniform(rng, -a, a));
  return t;
}

template <class Real>
Tensor<Real> small_uniform(Rng& rng, ad::Shape shape) {
  const double a = 0.02 * std::sqrt(3.0);
  Tensor<Real> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<Real>(uniform(rng, -a, a));
  return t;
}

template <class Real>
void add_linear(ad::ParamSet<Real>& p, Rng& rng, const std::string& prefix, int in, int out) {
  p[prefix + ".weight"] = xavier<Real>(rng, in, out);
  p[prefix + ".bias"] = Tensor<Real>({out}, Real(0));
}

template <class Real>
void add_norm(ad::ParamSet<Real>& p, const std::string& prefix, int d) {
  p[prefix + ".gamma"] = Tensor<Real>({d}, Real(1));
  p[prefix + ".beta"] = Tensor<Real>({d}, Real(0));
}

template <class Real>
Var<Real> linear(Var<Real> x, const ad::VarMap<Real>& p, const std::string& prefix) {
  return ad::add(ad::matmul(x, p.at(prefix + ".weight")), p.at(prefix + ".bias"));
}

template <class Real>
Var<Real> norm(Var<Real> x, const ad::VarMap<Real>& p, const std::string& prefix) {
  return ad::add(ad::mul(ad::layer_norm(x), p.at(prefix + ".gamma")), p.at(prefix + ".beta"));
}

template <class Real>
void check_finite(const Var<Real>& v, const std::string& where) {
  for (Real x : v.value().data) {
    if (!std::isfinite(x)) throw NumericFault("non-finite activation in " + where);
  }
}

// Replaces masked tokens (mask 1) with the learnable mask token: x*(1-m) + token*m.
template <class Real>
Var<Real> apply_mask(Var<Real> tokens, Var<Real> mask_token, const std::vector<std::vector<std::uint8_t>>& masks) {
  const int b = tokens.shape()[0];
  const int n = tokens.shape()[1];
  if (static_cast<int>(masks.size()) != b) {
    throw ContractViolation("mask batch " + std::to_string(masks.size()) + " vs token batch " + std::to_string(b));
  }
  Tensor<Real> m({b, n, 1});
  Tensor<Real> keep({b, n, 1});
  for (int i = 0; i < b; ++i) {
    if (static_cast<int>(masks[i].size()) != n) {
      throw ContractViolation("mask of size " + std::to_string(masks[i].size()) + " for " + std::to_string(n) +
                              " tokens");
    }
    for (int j = 0; j < n; ++j) {
      m[i * n + j] = masks[i][j] ? Real(1) : Real(0);
      keep[i * n + j] = Real(1) - m[i * n + j];
    }
  }
  auto& tape = tokens.tape();
  return ad::add(ad::mul(tokens, tape.constant(std::move(keep))), ad::mul(mask_token, tape.constant(std::move(m))));
}

template <class Real>
Var<Real> attention(Var<Real> x, const ad::VarMap<Real>& p, int layer, int heads) {
  const int b = x.shape()[0];
  const int n = x.shape()[1];
  const int d = x.shape()[2];
  const int dh = d / heads;
  auto split = [&](Var<Real> t, std::vector<int> axes) {
    return ad::permute(ad::reshape(t, {b, n, heads, dh}), std::move(axes));
  };
  const Var<Real> q = split(ad::scale(linear(x, p, block_key(layer, "attn.query")), 1.0 / std::sqrt(double(dh))),
                            {0, 2, 1, 3});
  // No key bias: it adds q.b to every logit of a row, which the softmax removes.
  const Var<Real> k = split(ad::matmul(x, p.at(block_key(layer, "attn.key.weight"))), {0, 2, 3, 1});
  const Var<Real> v = split(linear(x, p, block_key(layer, "attn.value")), {0, 2, 1, 3});
  const Var<Real> att = ad::softmax(ad::matmul(q, k));
  const Var<Real> ctx = ad::reshape(ad::permute(ad::matmul(att, v), {0, 2, 1, 3}), {b, n, d});
  return linear(ctx, p, block_key(layer, "attn.out"));
}

template <class Real>
Var<Real> head_stack(Var<Real> x, const ad::VarMap<Real>& p, const std::string& name) {
  return linear(ad::relu(linear(x, p, "head." + name + ".fc1")), p, "head." + name + ".fc2");
}

}  // namespace

template <class Real>
ad::ParamSet<Real> init_params(const TrackerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const int d = cfg.embed_dim;
  ad::ParamSet<Real> p;
  add_linear(p, rng, "patch_embed", cfg.patch_dim(), d);
  p["pos_embed.template"] = small_uniform<Real>(rng, {cfg.template_tokens(), d});
  p["pos_embed.search"] = small_uniform<Real>(rng, {cfg.search_tokens(), d});
  p["mask_token"] = small_uniform<Real>(rng, {d});
  for (int l = 0; l < cfg.num_layers; ++l) {
    add_norm(p, block_key(l, "norm1"), d);
    for (const char* proj : {"attn.query", "attn.key", "attn.value", "attn.out"}) {
      add_linear(p, rng, block_key(l, proj), d, d);
    }
    p.erase(block_key(l, "attn.key.bias"));
    add_norm(p, block_key(l, "norm2"), d);
    add_linear(p, rng, block_key(l, "mlp.fc1"), d, cfg.mlp_hidden());
    add_linear(p, rng, block_key(l, "mlp.fc2"), cfg.mlp_hidden(), d);
  }
  add_norm(p, "norm", d);
  const std::pair<const char*, int> heads[] = {{"score", 1}, {"offset", 2}, {"size", 2}};
  for (const auto& [name, out] : heads) {
    add_linear(p, rng, std::string("head.") + name + ".fc1", d, cfg.head_hidden_dim);
    add_linear(p, rng, std::string("head.") + name + ".fc2", cfg.head_hidden_dim, out);
  }
  p["head.score.fc2.bias"][0] = static_cast<Real>(-std::log((1.0 - 0.1) / 0.1));
  return p;
}

template <class Real>
Var<Real> patchify(ad::Tape<Real>& tape, std::span<const Image> images, int patch_size, Var<Real> weight,
                   Var<Real> bias) {
  if (images.empty()) throw ContractViolation("patchify: empty image batch");
  const Image& first = images.front();
  const int h = first.height;
  const int w = first.width;
  const int c = first.channels;
  if (patch_size <= 0 || h % patch_size != 0 || w % patch_size != 0) {
    throw ContractViolation("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                            " not divisible by patch " + std::to_string(patch_size));
  }
  const int gy = h / patch_size;
  const int gx = w / patch_size;
  const int pd = patch_size * patch_size * c;
  const int b = static_cast<int>(images.size());
  Tensor<Real> patches({b, gy * gx, pd});
  std::size_t o = 0;
  for (const Image& img : images) {
    if (img.height != h || img.width != w || img.channels != c) {
      throw ContractViolation("patchify: images in a batch must share a size");
    }
    for (int py = 0; py < gy; ++py)
      for (int px = 0; px < gx; ++px)
        for (int y = 0; y < patch_size; ++y)
          for (int x = 0; x < patch_size; ++x)
            for (int ch = 0; ch < c; ++ch)
              patches.data[o++] = static_cast<Real>(img.at(py * patch_size + y, px * patch_size + x, ch));
  }
  return ad::add(ad::matmul(tape.constant(std::move(patches)), weight), bias);
}

template <class Real>
TrackOutput<Real> forward(ad::Tape<Real>& tape, const ad::VarMap<Real>& p, const TrackerConfig& cfg,
                          std::span<const Image> templates, std::span<const Image> searches,
                          const PatchMasks* masks) {
  cfg.validate();
  if (templates.size() != searches.size() || templates.empty()) {
    throw ContractViolation("forward: template/search batch sizes differ or are empty");
  }
  for (std::size_t i = 0; i < templates.size(); ++i) {
    const Image& t = templates[i];
    const Image& s = searches[i];
    if (t.height != cfg.template_res || t.width != cfg.template_res || s.height != cfg.search_res ||
        s.width != cfg.search_res || t.channels != cfg.channels || s.channels != cfg.channels) {
      throw ContractViolation("forward: expected template " + std::to_string(cfg.template_res) + " and search " +
                              std::to_string(cfg.search_res) + ", got " + std::to_string(t.height) + "x" +
                              std::to_string(t.width) + " and " + std::to_string(s.height) + "x" +
                              std::to_string(s.width));
    }
  }
  const int b = static_cast<int>(templates.size());
  const int nt = cfg.template_tokens();
  const int ns = cfg.search_tokens();
  const Var<Real> w = p.at("patch_embed.weight");
  const Var<Real> bias = p.at("patch_embed.bias");
  Var<Real> zt = ad::add(patchify(tape, templates, cfg.patch_size, w, bias), p.at("pos_embed.template"));
  Var<Real> zs = ad::add(patchify(tape, searches, cfg.patch_size, w, bias), p.at("pos_embed.search"));
  if (masks != nullptr) {
    if (!masks->templ.empty()) zt = apply_mask(zt, p.at("mask_token"), masks->templ);
    if (!masks->search.empty()) zs = apply_mask(zs, p.at("mask_token"), masks->search);
  }
  const Var<Real> joint[] = {zt, zs};
  Var<Real> x = ad::concat<Real>(joint, 1);

  TrackOutput<Real> out;
  out.grid = cfg.search_grid();
  for (int l = 0; l < cfg.num_layers; ++l) {
    x = ad::add(x, attention(norm(x, p, block_key(l, "norm1")), p, l, cfg.num_heads));
    const Var<Real> hidden = ad::gelu(linear(norm(x, p, block_key(l, "norm2")), p, block_key(l, "mlp.fc1")));
    x = ad::add(x, linear(hidden, p, block_key(l, "mlp.fc2")));
    check_finite(x, "encoder layer " + std::to_string(l));
    out.features.push_back(ad::slice(x, 1, nt, ns));
  }
  const Var<Real> tokens = ad::slice(norm(x, p, "norm"), 1, nt, ns);

  const Var<Real> score_logit = ad::reshape(head_stack(tokens, p, "score"), {b, ns});
  out.score = ad::clamp(ad::sigmoid(score_logit), 1e-4, 1.0 - 1e-4);
  out.offset = ad::sigmoid(head_stack(tokens, p, "offset"));
  out.size = ad::exp(ad::add_scalar(ad::scale(ad::sigmoid(head_stack(tokens, p, "size")), 4.0), -4.0));
  check_finite(out.score, "score head");
  check_finite(out.size, "size head");

  out.boxes.reserve(b);
  for (int i = 0; i < b; ++i) out.boxes.push_back(decode_sample(out, i));
  return out;
}

template <class Real>
int argmax_cell(std::span<const Real> score) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(score.size()); ++i)
    if (score[i] > score[best]) best = i;
  return best;
}

template <class Real>
NormBox decode_box(std::span<const Real> score, std::span<const Real> offset, std::span<const Real> size, int grid,
                   std::optional<int> location) {
  const std::size_t cells = static_cast<std::size_t>(grid) * grid;
  if (score.size() != cells || offset.size() != 2 * cells || size.size() != 2 * cells) {
    throw ContractViolation("decode_box: map sizes inconsistent with grid " + std::to_string(grid));
  }
  const int loc = location.value_or(argmax_cell(score));
  if (loc < 0 || loc >= static_cast<int>(cells)) throw ContractViolation("decode_box: location out of range");
  const int row = loc / grid;
  const int col = loc % grid;
  auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
  NormBox box;
  box.cx = unit((col + static_cast<double>(offset[2 * loc])) / grid);
  box.cy = unit((row + static_cast<double>(offset[2 * loc + 1])) / grid);
  box.w = unit(size[2 * loc]);
  box.h = unit(size[2 * loc + 1]);
  return box;
}

template <class Real>
NormBox decode_sample(const TrackOutput<Real>& out, int b, std::optional<int> location) {
  const int cells = out.grid * out.grid;
  const auto& s = out.score.value().data;
  const auto& o = out.offset.value().data;
  const auto& z = out.size.value().data;
  return decode_box<Real>(std::span<const Real>(s.data() + b * cells, cells),
                          std::span<const Real>(o.data() + 2 * b * cells, 2 * cells),
                          std::span<const Real>(z.data() + 2 * b * cells, 2 * cells), out.grid, location);
}

#define PROGTRACK_INSTANTIATE_MODEL(R)                                                                          \
  template ad::ParamSet<R> init_params<R>(const TrackerConfig&, std::uint64_t);                                 \
  template Var<R> patchify(ad::Tape<R>&, std::span<const Image>, int, Var<R>, Var<R>);                          \
  template TrackOutput<R> forward(ad::Tape<R>&, const ad::VarMap<R>&, const TrackerConfig&,                     \
                                  std::span<const Image>, std::span<const Image>, const PatchMasks*);           \
  template int argmax_cell(std::span<const R>);                                                                 \
  template NormBox decode_box(std::span<const R>, std::span<const R>, std::span<const R>, int, std::optional<int>); \
  template NormBox decode_sample(const TrackOutput<R>&, int, std::optional<int>);

PROGTRACK_INSTANTIATE_MODEL(float)
PROGTRACK_INSTANTIATE_MODEL(double)

}  // namespace progtrack::model
