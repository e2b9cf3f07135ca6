#include <doctest.h>

#include <cmath>

#include "gradient_cases.hpp"
#include "support.hpp"
#include "progtrack/loss/losses.hpp"

using namespace progtrack;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

// Raw maps for one batch on an S x S grid.
struct Maps {
  int grid = 0, batch = 0;
  std::vector<double> score, offset, size;
};

Maps random_maps(int batch, int grid, Rng& rng) {
  Maps m{grid, batch};
  const int n = grid * grid;
  for (int i = 0; i < batch * n; ++i) m.score.push_back(uniform(rng, 0.01, 0.99));
  for (int i = 0; i < batch * n * 2; ++i) m.offset.push_back(uniform(rng, 0.05, 0.95));
  for (int i = 0; i < batch * n * 2; ++i) m.size.push_back(uniform(rng, 0.05, 0.6));
  return m;
}

model::TrackOutput<double> as_output(Tape<double>& tape, const Maps& m, bool leaves = false) {
  const int n = m.grid * m.grid;
  auto make = [&](const char* name, ad::Shape shape, const std::vector<double>& v) {
    Tensor<double> t(std::move(shape), v);
    return leaves ? tape.leaf(name, std::move(t)) : tape.constant(std::move(t));
  };
  model::TrackOutput<double> out;
  out.grid = m.grid;
  out.score = make("score", {m.batch, n}, m.score);
  out.offset = make("offset", {m.batch, n, 2}, m.offset);
  out.size = make("size", {m.batch, n, 2}, m.size);
  for (int b = 0; b < m.batch; ++b) out.boxes.push_back(model::decode_sample(out, b));
  return out;
}

// Box read from raw maps at a cell, written from the decoding rule.
NormBox read_box(const Maps& m, int b, int cell) {
  const int n = m.grid * m.grid;
  const std::size_t k = static_cast<std::size_t>(b) * n + cell;
  return {(cell % m.grid + m.offset[2 * k]) / m.grid, (cell / m.grid + m.offset[2 * k + 1]) / m.grid, m.size[2 * k],
          m.size[2 * k + 1]};
}

double focal_oracle(const std::vector<double>& p, const loss::TargetMaps& t) {
  double s = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (static_cast<int>(j) == t.cell())
      s += -std::pow(1 - p[j], 2) * std::log(p[j]);
    else
      s += -std::pow(1 - t.score[j], 4) * std::pow(p[j], 2) * std::log(1 - p[j]);
  }
  return s;
}

}  // namespace

TEST_CASE("gaussian target: forced peak, symmetry and sigma") {
  const NormBox centered{0.5625, 0.5625, 0.25, 0.25};  // center of cell (4, 4) on an 8-grid
  const auto t = loss::make_gaussian_target(centered, 8);
  CHECK(t.row == 4);
  CHECK(t.col == 4);
  CHECK(t.score[t.cell()] == 1.0);
  int peaks = 0;
  for (double v : t.score) peaks += v == 1.0;
  CHECK(peaks == 1);
  for (int d = 1; d < 4; ++d) {
    CHECK(t.score[4 * 8 + 4 + d] == t.score[4 * 8 + 4 - d]);
    CHECK(t.score[(4 + d) * 8 + 4] == t.score[(4 - d) * 8 + 4]);
    CHECK(t.score[(4 + d) * 8 + 4] == t.score[4 * 8 + 4 + d]);
  }
  CHECK(loss::gaussian_sigma({0.5, 0.5, 0.5, 0.5}, 16) == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(loss::gaussian_sigma({0.5, 0.5, 0.05, 0.05}, 16) == 1.0);
}

TEST_CASE("gaussian target values follow the formula") {
  const NormBox gt{0.3, 0.7, 0.2, 0.4};
  const int s = 16;
  const auto t = loss::make_gaussian_target(gt, s);
  const double sigma = std::max(1.0, (gt.w * s + gt.h * s) / 12.0);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      if (i == t.row && j == t.col) continue;
      const double e = std::exp(-((i - t.row) * (i - t.row) + (j - t.col) * (j - t.col)) / (2 * sigma * sigma));
      CHECK(t.score[i * s + j] == doctest::Approx(e).epsilon(1e-12));
    }
  CHECK(t.offset_x == doctest::Approx(gt.cx * s - t.col));
  CHECK(t.offset_y == doctest::Approx(gt.cy * s - t.row));
}

TEST_CASE("focal: 1x1 map at p = 0.5") {
  Tape<double> tape;
  loss::TargetMaps t;
  t.grid = 1;
  t.score = {1.0};
  const std::vector<loss::TargetMaps> ts{t};
  auto p = tape.constant(Tensor<double>({1, 1}, 0.5));
  const double v = loss::focal_loss(p, ts).value().item();
  CHECK(v == doctest::Approx(-0.25 * std::log(0.5)).epsilon(1e-15));
  CHECK(v == doctest::Approx(0.1733).epsilon(1e-3));
}

TEST_CASE("focal: perfect prediction limit and non-negativity") {
  const auto t = loss::make_gaussian_target({0.4, 0.6, 0.3, 0.3}, 8);
  const std::vector<loss::TargetMaps> ts{t};
  double prev = 1e9;
  for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
    Tape<double> tape;
    Tensor<double> p({1, 64}, eps);
    p[t.cell()] = 1 - eps;
    const double v = loss::focal_loss(tape.constant(std::move(p)), ts).value().item();
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 1e-6);

  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const auto m = random_maps(1, 4, rng);
    const auto tk = loss::make_gaussian_target({uniform(rng, 0, 1), uniform(rng, 0, 1), 0.2, 0.2}, 4);
    const std::vector<loss::TargetMaps> tks{tk};
    Tape<double> tape;
    const double v = loss::focal_loss(tape.constant(Tensor<double>({1, 16}, m.score)), tks).value().item();
    CHECK(v >= 0.0);
    CHECK(v == doctest::Approx(focal_oracle(m.score, tk)).epsilon(1e-12));
  }
}

TEST_CASE("giou: identity, corner touch, symmetry") {
  const NormBox a = from_corners(0.1, 0.2, 0.5, 0.7);
  CHECK(loss::giou(a, a) == 1.0);
  const NormBox p = from_corners(0, 0, 0.5, 0.5), q = from_corners(0.5, 0.5, 1, 1);
  CHECK(loss::giou(p, q) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(1 - loss::giou(p, q) == doctest::Approx(1.5).epsilon(1e-15));
  Rng rng(8);
  for (int k = 0; k < 200; ++k) {
    const NormBox x{uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0.01, 1), uniform(rng, 0.01, 1)};
    const NormBox y{uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0.01, 1), uniform(rng, 0.01, 1)};
    const double g = loss::giou(x, y);
    CHECK(g == loss::giou(y, x));
    CHECK(g >= -1.0);
    CHECK(g <= 1.0);
  }
}

TEST_CASE("differentiable giou agrees with the scalar form") {
  Rng rng(12);
  Tape<double> tape;
  Tensor<double> a({5, 4}), b({5, 4});
  std::vector<NormBox> as, bs;
  for (int i = 0; i < 5; ++i) {
    as.push_back({uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8), uniform(rng, 0.1, 0.5), uniform(rng, 0.1, 0.5)});
    bs.push_back({uniform(rng, 0.2, 0.8), uniform(rng, 0.2, 0.8), uniform(rng, 0.1, 0.5), uniform(rng, 0.1, 0.5)});
    const double av[] = {as[i].cx, as[i].cy, as[i].w, as[i].h}, bv[] = {bs[i].cx, bs[i].cy, bs[i].w, bs[i].h};
    for (int k = 0; k < 4; ++k) {
      a[4 * i + k] = av[k];
      b[4 * i + k] = bv[k];
    }
  }
  const auto g = loss::giou(tape.constant(a), tape.constant(b));
  const auto l = loss::l1_box(tape.constant(a), tape.constant(b));
  for (int i = 0; i < 5; ++i) {
    CHECK(g.value()[i] == doctest::Approx(loss::giou(as[i], bs[i])).epsilon(1e-12));
    CHECK(l.value()[i] == doctest::Approx(loss::l1_box(as[i], bs[i])).epsilon(1e-12));
  }
}

TEST_CASE("l1: examples and triangle inequality") {
  const NormBox a{0.5, 0.5, 0.2, 0.2};
  CHECK(loss::l1_box(a, a) == 0.0);
  CHECK(loss::l1_box(a, {0.7, 0.5, 0.2, 0.2}) == doctest::Approx(0.05).epsilon(1e-14));
  Rng rng(4);
  for (int k = 0; k < 500; ++k) {
    auto r = [&] { return NormBox{uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1), uniform(rng, 0, 1)}; };
    const NormBox x = r(), y = r(), z = r();
    CHECK(loss::l1_box(x, z) <= loss::l1_box(x, y) + loss::l1_box(y, z) + 1e-15);
  }
}

TEST_CASE("track_loss recomposes from its parts") {
  CHECK(loss::TrackLossWeights{}.cls == 1.0);
  CHECK(loss::TrackLossWeights{}.iou == 2.0);
  CHECK(loss::TrackLossWeights{}.l1 == 5.0);
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int b = 3, s = 4;
    const auto m = random_maps(b, s, rng);
    std::vector<NormBox> gts;
    for (int i = 0; i < b; ++i)
      gts.push_back({uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.4), uniform(rng, 0.1, 0.4)});
    std::vector<loss::TargetMaps> ts;
    for (const auto& g : gts) ts.push_back(loss::make_gaussian_target(g, s));
    Tape<double> tape;
    const auto parts = loss::track_loss(as_output(tape, m), ts, gts);

    double focal = 0, iou = 0, l1 = 0;
    for (int i = 0; i < b; ++i) {
      const std::vector<double> p(m.score.begin() + i * s * s, m.score.begin() + (i + 1) * s * s);
      focal += focal_oracle(p, ts[i]) / b;
      const NormBox pred = read_box(m, i, ts[i].cell());
      iou += (1 - loss::giou(pred, gts[i])) / b;
      l1 += loss::l1_box(pred, gts[i]) / b;
    }
    CHECK(parts.cls.value().item() == doctest::Approx(focal).epsilon(1e-12));
    CHECK(parts.iou.value().item() == doctest::Approx(iou).epsilon(1e-12));
    CHECK(parts.l1.value().item() == doctest::Approx(l1).epsilon(1e-12));
    CHECK(parts.total.value().item() == doctest::Approx(focal + 2 * iou + 5 * l1).epsilon(1e-12));
  }
}

TEST_CASE("track_loss shrinks toward zero as the prediction sharpens") {
  const NormBox gt{0.40625, 0.65625, 0.3, 0.2};  // cell (5, 3) of an 8-grid, offsets 0.25
  const auto t = loss::make_gaussian_target(gt, 8);
  const std::vector<loss::TargetMaps> ts{t};
  const std::vector<NormBox> gts{gt};
  double prev = 1e9;
  for (double eps : {0.2, 0.05, 1e-2, 1e-3, 1e-4}) {
    Maps m{8, 1};
    m.score.assign(64, eps);
    m.score[t.cell()] = 1 - eps;
    m.offset.assign(128, 0.25);
    m.size.assign(128, 0.0);
    for (int k = 0; k < 64; ++k) {
      m.size[2 * k] = gt.w;
      m.size[2 * k + 1] = gt.h;
    }
    Tape<double> tape;
    const double v = loss::track_loss(as_output(tape, m), ts, gts).total.value().item();
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("soft_track_loss: student equal to reference") {
  Rng rng(2);
  const auto m = random_maps(2, 4, rng);
  Tape<double> tape;
  const auto out = as_output(tape, m);
  const auto parts = loss::soft_track_loss(out, out);
  CHECK(parts.iou.value().item() == 0.0);
  CHECK(parts.l1.value().item() == 0.0);
  double entropy = 0;
  for (double p : m.score) entropy += -(p * std::log(p) + (1 - p) * std::log(1 - p));
  CHECK(parts.cls.value().item() == doctest::Approx(entropy / static_cast<double>(m.score.size())).epsilon(1e-12));

  // entropy is the minimum over student maps
  for (int k = 0; k < 20; ++k) {
    auto other = random_maps(2, 4, rng);
    Tape<double> t2;
    const auto ref = as_output(t2, m);
    const auto st = as_output(t2, other);
    CHECK(loss::soft_track_loss(st, ref).cls.value().item() >= parts.cls.value().item());
  }
}

TEST_CASE("soft_track_loss: near one-hot reference vanishes") {
  Maps m{4, 1};
  m.score.assign(16, 1e-4);
  m.score[6] = 1 - 1e-4;
  m.offset.assign(32, 0.5);
  m.size.assign(32, 0.2);
  Tape<double> tape;
  const auto out = as_output(tape, m);
  CHECK(loss::soft_track_loss(out, out).total.value().item() < 0.02);
}

TEST_CASE("soft_track_loss: no gradient reaches a detached reference") {
  Rng rng(5);
  const auto ms = random_maps(2, 4, rng), mr = random_maps(2, 4, rng);
  Tape<double> tape;
  model::TrackOutput<double> student;
  student.grid = 4;
  student.score = tape.leaf("s.score", Tensor<double>({2, 16}, ms.score));
  student.offset = tape.leaf("s.offset", Tensor<double>({2, 16, 2}, ms.offset));
  student.size = tape.leaf("s.size", Tensor<double>({2, 16, 2}, ms.size));
  model::TrackOutput<double> ref;
  ref.grid = 4;
  ref.score = tape.leaf("r.score", Tensor<double>({2, 16}, mr.score));
  ref.offset = tape.leaf("r.offset", Tensor<double>({2, 16, 2}, mr.offset));
  ref.size = tape.leaf("r.size", Tensor<double>({2, 16, 2}, mr.size));
  const auto g = tape.backward(loss::soft_track_loss(student, ref).total);
  for (const char* name : {"r.score", "r.offset", "r.size"})
    for (double v : g.at(name).data) CHECK(v == 0.0);
  double mass = 0;
  for (double v : g.at("s.score").data) mass += std::abs(v);
  CHECK(mass > 0);

  Tape<double> t2;
  model::TrackOutput<double> s2 = student, r2 = ref;
  s2.score = t2.leaf("s.score", Tensor<double>({2, 16}, ms.score));
  s2.offset = t2.leaf("s.offset", Tensor<double>({2, 16, 2}, ms.offset));
  s2.size = t2.leaf("s.size", Tensor<double>({2, 16, 2}, ms.size));
  r2.score = t2.leaf("r.score", Tensor<double>({2, 16}, mr.score));
  r2.offset = t2.leaf("r.offset", Tensor<double>({2, 16, 2}, mr.offset));
  r2.size = t2.leaf("r.size", Tensor<double>({2, 16, 2}, mr.size));
  const auto g2 = t2.backward(loss::soft_track_loss(s2, r2, {{}, false}).total);
  double rmass = 0;
  for (double v : g2.at("r.score").data) rmass += std::abs(v);
  CHECK(rmass > 0);
}

TEST_CASE("feature_l2: examples and permutation invariance") {
  Tape<double> tape;
  const std::vector<Var<double>> f{tape.constant(Tensor<double>({1, 1, 2}, {1, 2}))};
  const std::vector<Var<double>> g{tape.constant(Tensor<double>({1, 1, 2}, {1, 4}))};
  const std::vector<int> layer0{0};
  CHECK(loss::feature_l2<double>(f, g, layer0).value().item() == 2.0);
  CHECK(loss::feature_l2<double>(f, f, layer0).value().item() == 0.0);

  Rng rng(7);
  const auto a = testing::random_tensor({1, 6, 3}, rng), b = testing::random_tensor({1, 6, 3}, rng);
  Tensor<double> pa({1, 6, 3}), pb({1, 6, 3});
  const int perm[] = {4, 2, 0, 5, 1, 3};
  for (int t = 0; t < 6; ++t)
    for (int d = 0; d < 3; ++d) {
      pa[perm[t] * 3 + d] = a[t * 3 + d];
      pb[perm[t] * 3 + d] = b[t * 3 + d];
    }
  const std::vector<Var<double>> fa{tape.constant(a)}, fb{tape.constant(b)}, fpa{tape.constant(pa)},
      fpb{tape.constant(pb)};
  CHECK(loss::feature_l2<double>(fa, fb, layer0).value().item() ==
        doctest::Approx(loss::feature_l2<double>(fpa, fpb, layer0).value().item()).epsilon(1e-15));
}

TEST_CASE("feature_l2 averages over layers and needs an adapter across shapes") {
  Tape<double> tape;
  const std::vector<Var<double>> f{tape.constant(Tensor<double>({1, 1, 2}, {0, 0})),
                                   tape.constant(Tensor<double>({1, 1, 2}, {0, 0}))};
  const std::vector<Var<double>> g{tape.constant(Tensor<double>({1, 1, 2}, {1, 1})),
                                   tape.constant(Tensor<double>({1, 1, 2}, {3, 3}))};
  const std::vector<int> both{0, 1};
  CHECK(loss::feature_l2<double>(f, g, both).value().item() == 5.0);
  const std::vector<Var<double>> wide{tape.constant(Tensor<double>({1, 1, 3}, 0.0))};
  const std::vector<int> layer0{0};
  CHECK_THROWS_AS(loss::feature_l2<double>(f, wide, layer0), ContractViolation);
}

TEST_CASE("losses pass grad_check at 64-bit") {
  Rng rng(31);
  const auto m = random_maps(2, 4, rng), r = random_maps(2, 4, rng);
  std::vector<NormBox> gts{{0.3, 0.4, 0.2, 0.3}, {0.6, 0.55, 0.25, 0.2}};
  std::vector<loss::TargetMaps> ts;
  for (const auto& g : gts) ts.push_back(loss::make_gaussian_target(g, 4));
  // Maps are parameterized through logits so the sigmoid keeps them inside (0, 1).
  ad::ParamSet<double> point{{"score", Tensor<double>({2, 16})},
                             {"offset", Tensor<double>({2, 16, 2}, m.offset)},
                             {"size", Tensor<double>({2, 16, 2}, m.size)}};
  for (std::size_t i = 0; i < m.score.size(); ++i) point.at("score")[i] = std::log(m.score[i] / (1 - m.score[i]));
  auto build = [](Tape<double>&, const ad::VarMap<double>& v) {
    model::TrackOutput<double> out;
    out.grid = 4;
    out.score = ad::sigmoid(v.at("score"));
    out.offset = v.at("offset");
    out.size = v.at("size");
    return out;
  };
  CHECK(ad::grad_check(
            [&](Tape<double>& t, const ad::VarMap<double>& v) { return loss::track_loss(build(t, v), ts, gts).total; },
            point) < 1e-4);
  CHECK(ad::grad_check(
            [&](Tape<double>& t, const ad::VarMap<double>& v) {
              const auto ref = as_output(t, r);
              return loss::soft_track_loss(build(t, v), ref).total;
            },
            point) < 1e-4);
  const std::vector<int> layer0{0};
  const auto target = testing::random_tensor({1, 4, 3}, rng);
  CHECK(ad::grad_check(
            [&](ad::Var<double> x) {
              const std::vector<Var<double>> f{x}, g{x.tape().constant(target)};
              return loss::feature_l2<double>(f, g, layer0);
            },
            testing::random_tensor({1, 4, 3}, rng)) < 1e-4);
}
