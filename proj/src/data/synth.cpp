#include "progtrack/data/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "progtrack/digest.hpp"
#include "progtrack/errors.hpp"

namespace progtrack::data {

namespace fs = std::filesystem;

const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Disc: return "disc";
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

void SequenceSpec::validate() const {
  if (length < 2) throw ContractViolation("SequenceSpec: length must be >= 2");
  if (canvas < 16) throw ContractViolation("SequenceSpec: canvas must be >= 16");
  if (!(occluder_prob >= 0.0 && occluder_prob < 1.0))
    throw ContractViolation("SequenceSpec: occluder probability must lie in [0, 1)");
  if (!(target.min_size >= 2.0 && target.max_size >= target.min_size))
    throw ContractViolation("SequenceSpec: bad target size range");
  if (target.max_size > 0.5 * canvas) throw ContractViolation("SequenceSpec: target larger than half the canvas");
  if (distractors < 0) throw ContractViolation("SequenceSpec: negative distractor count");
  if (!(motion.min_speed >= 0 && motion.max_speed >= motion.min_speed))
    throw ContractViolation("SequenceSpec: bad velocity range");
  if (!(motion.direction_change_prob >= 0 && motion.direction_change_prob <= 1))
    throw ContractViolation("SequenceSpec: direction-change probability must lie in [0, 1]");
}

Image Sequence::frame_image(int t) const {
  const auto& f = frames.at(t);
  Image img(canvas, canvas, 3);
  for (std::size_t i = 0; i < f.size(); ++i) img.data[i] = static_cast<float>(f[i]) / 255.0f;
  return img;
}

std::array<double, 3> Sequence::mean_color(int t) const {
  const auto& f = frames.at(t);
  std::array<double, 3> sum{0, 0, 0};
  for (std::size_t i = 0; i < f.size(); i += 3)
    for (int c = 0; c < 3; ++c) sum[c] += f[i + c];
  const double n = static_cast<double>(f.size() / 3) * 255.0;
  for (auto& s : sum) s /= n;
  return sum;
}

namespace {

struct Object {
  ShapeKind shape;
  std::array<double, 3> color;
  double w, h;    // pixels
  double x, y;    // center, pixels
  double vx, vy;  // pixels per frame
};

bool inside(const Object& o, double px, double py) {
  const double dx = px - o.x, dy = py - o.y;
  switch (o.shape) {
    case ShapeKind::Disc: {
      const double a = 0.5 * o.w, b = 0.5 * o.h;
      return (dx * dx) / (a * a) + (dy * dy) / (b * b) <= 1.0;
    }
    case ShapeKind::Rectangle:
      return std::abs(dx) <= 0.5 * o.w && std::abs(dy) <= 0.5 * o.h;
    case ShapeKind::Triangle: {
      // apex at top, base at bottom
      const double v = (dy + 0.5 * o.h) / o.h;  // 0 at apex, 1 at base
      if (v < 0 || v > 1) return false;
      return std::abs(dx) <= 0.5 * o.w * v;
    }
  }
  return false;
}

void paint(std::vector<double>& rgb, int canvas, const Object& o) {
  const int x0 = std::max(0, static_cast<int>(std::floor(o.x - 0.5 * o.w)));
  const int x1 = std::min(canvas - 1, static_cast<int>(std::ceil(o.x + 0.5 * o.w)));
  const int y0 = std::max(0, static_cast<int>(std::floor(o.y - 0.5 * o.h)));
  const int y1 = std::min(canvas - 1, static_cast<int>(std::ceil(o.y + 0.5 * o.h)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside(o, x + 0.5, y + 0.5))
        for (int c = 0; c < 3; ++c) rgb[(static_cast<std::size_t>(y) * canvas + x) * 3 + c] = o.color[c];
}

// Reflect the center so the whole box stays on the canvas.
void step(Object& o, int canvas) {
  o.x += o.vx;
  o.y += o.vy;
  const double lox = 0.5 * o.w, hix = canvas - 0.5 * o.w;
  const double loy = 0.5 * o.h, hiy = canvas - 0.5 * o.h;
  if (o.x < lox) { o.x = 2 * lox - o.x; o.vx = -o.vx; }
  if (o.x > hix) { o.x = 2 * hix - o.x; o.vx = -o.vx; }
  if (o.y < loy) { o.y = 2 * loy - o.y; o.vy = -o.vy; }
  if (o.y > hiy) { o.y = 2 * hiy - o.y; o.vy = -o.vy; }
  o.x = std::clamp(o.x, lox, hix);
  o.y = std::clamp(o.y, loy, hiy);
}

std::array<double, 3> hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

double hue_of(const std::array<double, 3>& c) {
  const double mx = std::max({c[0], c[1], c[2]}), mn = std::min({c[0], c[1], c[2]});
  const double d = mx - mn;
  if (d <= 0) return 0;
  double h;
  if (mx == c[0]) h = std::fmod((c[1] - c[2]) / d, 6.0);
  else if (mx == c[1]) h = (c[2] - c[0]) / d + 2;
  else h = (c[0] - c[1]) / d + 4;
  h /= 6.0;
  return h < 0 ? h + 1 : h;
}

Object make_object(Rng& rng, ShapeKind shape, const std::array<double, 3>& color, double size, int canvas,
                   const MotionModel& m) {
  Object o;
  o.shape = shape;
  o.color = color;
  double aspect = 1.0;
  if (shape != ShapeKind::Disc) aspect = std::exp(uniform(rng, -0.35, 0.35));
  o.w = std::min(size * aspect, 0.5 * canvas);
  o.h = std::min(size / aspect, 0.5 * canvas);
  o.x = uniform(rng, 0.5 * o.w, canvas - 0.5 * o.w);
  o.y = uniform(rng, 0.5 * o.h, canvas - 0.5 * o.h);
  const double speed = uniform(rng, m.min_speed, m.max_speed);
  const double angle = uniform(rng, 0, 6.283185307179586);
  o.vx = speed * std::cos(angle);
  o.vy = speed * std::sin(angle);
  return o;
}

void maybe_turn(Object& o, Rng& rng, const MotionModel& m) {
  if (!bernoulli(rng, m.direction_change_prob)) return;
  const double speed = std::hypot(o.vx, o.vy);
  const double angle = std::atan2(o.vy, o.vx) + uniform(rng, -1.5707963267948966, 1.5707963267948966);
  o.vx = speed * std::cos(angle);
  o.vy = speed * std::sin(angle);
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Sequence generate_sequence(const SequenceSpec& spec) {
  spec.validate();
  const int n = spec.canvas;
  Rng rng(spec.seed);

  // Static textured background: base tint, a linear gradient, a few low-frequency waves, grain.
  std::vector<double> background(static_cast<std::size_t>(n) * n * 3);
  {
    std::array<double, 3> base;
    for (auto& b : base) b = uniform(rng, 0.15, 0.45);
    const double gx = uniform(rng, -0.15, 0.15), gy = uniform(rng, -0.15, 0.15);
    double wave[3][4];
    for (auto& w : wave) {
      w[0] = uniform(rng, 0.5, 3.0) * 6.283185307179586 / n;
      w[1] = uniform(rng, 0, 6.283185307179586);
      w[2] = uniform(rng, 0, 6.283185307179586);
      w[3] = uniform(rng, 0.02, 0.06);
    }
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double shade = gx * (x / double(n) - 0.5) + gy * (y / double(n) - 0.5);
        for (auto& w : wave)
          shade += w[3] * std::sin(w[0] * (x * std::cos(w[1]) + y * std::sin(w[1])) + w[2]);
        const double grain = uniform(rng, -0.03, 0.03);
        for (int c = 0; c < 3; ++c)
          background[(static_cast<std::size_t>(y) * n + x) * 3 + c] = base[c] + shade + grain;
      }
  }

  const auto& td = spec.target;
  Object target = make_object(rng, td.shape, td.color, uniform(rng, td.min_size, td.max_size), n, spec.motion);
  const double target_hue = hue_of(td.color);
  std::vector<Object> distractors;
  for (int i = 0; i < spec.distractors; ++i) {
    const double hue = target_hue + uniform(rng, 0.2, 0.8);
    const auto color = hsv(hue, uniform(rng, 0.6, 0.95), uniform(rng, 0.65, 1.0));
    const double size = std::clamp(0.5 * (td.min_size + td.max_size) * uniform(rng, 0.6, 1.4), 2.0, 0.5 * n);
    distractors.push_back(make_object(rng, td.shape, color, size, n, spec.motion));
  }

  Sequence seq;
  seq.canvas = n;
  std::vector<double> rgb;
  for (int t = 0; t < spec.length; ++t) {
    if (t > 0) {
      maybe_turn(target, rng, spec.motion);
      step(target, n);
      for (auto& d : distractors) {
        maybe_turn(d, rng, spec.motion);
        step(d, n);
      }
    }
    rgb = background;
    for (const auto& d : distractors) paint(rgb, n, d);
    paint(rgb, n, target);

    double coverage = 0.0;
    if (t > 0 && bernoulli(rng, spec.occluder_prob)) {
      Object occ;
      occ.shape = ShapeKind::Rectangle;
      const double g = uniform(rng, 0.35, 0.65);
      occ.color = {g, g, g};
      occ.w = target.w * uniform(rng, 0.9, 1.5);
      occ.h = target.h * uniform(rng, 0.9, 1.5);
      occ.x = target.x + target.w * uniform(rng, -0.2, 0.2);
      occ.y = target.y + target.h * uniform(rng, -0.2, 0.2);
      occ.vx = occ.vy = 0;
      long covered = 0, total = 0;
      const int x0 = std::max(0, static_cast<int>(std::floor(target.x - 0.5 * target.w)));
      const int x1 = std::min(n - 1, static_cast<int>(std::ceil(target.x + 0.5 * target.w)));
      const int y0 = std::max(0, static_cast<int>(std::floor(target.y - 0.5 * target.h)));
      const int y1 = std::min(n - 1, static_cast<int>(std::ceil(target.y + 0.5 * target.h)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          if (inside(target, x + 0.5, y + 0.5)) {
            ++total;
            if (inside(occ, x + 0.5, y + 0.5)) ++covered;
          }
      coverage = total > 0 ? static_cast<double>(covered) / total : 1.0;
      // keep the record distinguishable from "no occluder" even at zero overlap
      if (coverage == 0.0) coverage = 1e-12;
      paint(rgb, n, occ);
    }

    std::vector<std::uint8_t> frame(rgb.size());
    for (std::size_t i = 0; i < rgb.size(); ++i) frame[i] = quantize(rgb[i]);
    seq.frames.push_back(std::move(frame));
    seq.boxes.push_back({target.x / n, target.y / n, target.w / n, target.h / n});
    seq.occlusion.push_back(coverage);
    seq.visible.push_back(coverage > 0.5 ? 0 : 1);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// container I/O

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const fs::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated sequence header: " + path.string());
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_sequence(const Sequence& seq, const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write("DTSQ1", 5);
  put_u32(os, static_cast<std::uint32_t>(seq.frames.size()));
  put_u32(os, static_cast<std::uint32_t>(seq.canvas));
  put_u32(os, static_cast<std::uint32_t>(seq.canvas));
  for (const auto& f : seq.frames) os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size()));
  os << "frame,cx,cy,w,h,visible\n";
  for (std::size_t t = 0; t < seq.boxes.size(); ++t) {
    const auto& b = seq.boxes[t];
    os << t << ',' << fmt_double(b.cx) << ',' << fmt_double(b.cy) << ',' << fmt_double(b.w) << ','
       << fmt_double(b.h) << ',' << int(seq.visible[t]) << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

Sequence read_sequence(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open sequence: " + path.string());
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, "DTSQ1", 5) != 0) throw IoError("bad sequence magic: " + path.string());
  const std::uint32_t count = get_u32(is, path);
  const std::uint32_t h = get_u32(is, path);
  const std::uint32_t w = get_u32(is, path);
  if (h != w || h == 0) throw IoError("non-square or empty frames: " + path.string());
  Sequence seq;
  seq.name = path.stem().string();
  seq.canvas = static_cast<int>(h);
  const std::size_t frame_bytes = static_cast<std::size_t>(h) * w * 3;
  for (std::uint32_t t = 0; t < count; ++t) {
    std::vector<std::uint8_t> f(frame_bytes);
    if (!is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(frame_bytes)))
      throw IoError("truncated frame data: " + path.string());
    seq.frames.push_back(std::move(f));
  }
  std::string line;
  if (!std::getline(is, line) || line != "frame,cx,cy,w,h,visible") throw IoError("missing box table: " + path.string());
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw IoError("malformed box row in " + path.string() + ": " + line);
    NormBox b{std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4])};
    seq.boxes.push_back(b);
    seq.visible.push_back(cells[5] == "1" ? 1 : 0);
  }
  if (seq.boxes.size() != count) throw IoError("box count does not match frame count: " + path.string());
  return seq;
}

// ---------------------------------------------------------------------------
// datasets

std::vector<SequenceSpec> expand(const DatasetSpec& d) {
  if (d.sequences < 1) throw ContractViolation("DatasetSpec: need at least one sequence");
  if (d.min_distractors < 0 || d.max_distractors < d.min_distractors)
    throw ContractViolation("DatasetSpec: bad distractor range");
  std::vector<SequenceSpec> out;
  out.reserve(d.sequences);
  for (int i = 0; i < d.sequences; ++i) {
    const std::uint64_t s = seed_split(d.seed, static_cast<std::uint64_t>(i));
    Rng rng(s);
    SequenceSpec sp;
    sp.length = d.length;
    sp.canvas = d.canvas;
    sp.target.shape = static_cast<ShapeKind>(uniform_index(rng, 3));
    sp.target.color = hsv(uniform01(rng), uniform(rng, 0.6, 0.95), uniform(rng, 0.7, 1.0));
    sp.target.min_size = d.min_size;
    sp.target.max_size = d.max_size;
    sp.distractors = d.min_distractors +
                     static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(d.max_distractors - d.min_distractors + 1)));
    sp.occluder_prob = d.occluder_prob;
    sp.motion = {d.min_speed, d.max_speed, d.direction_change_prob};
    sp.seed = seed_split(s, 1);
    sp.validate();
    out.push_back(sp);
  }
  return out;
}

namespace {

std::vector<Sequence> generate_all(std::span<const SequenceSpec> specs, const std::string& name, int threads) {
  std::vector<Sequence> out(specs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < specs.size();) {
      out[i] = generate_sequence(specs[i]);
      char buf[32];
      std::snprintf(buf, sizeof buf, "_%04zu", i);
      out[i].name = name + buf;
    }
  };
  threads = std::max(1, std::min<int>(threads, static_cast<int>(specs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return out;
}

int resolve_threads(int threads) {
  return threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

}  // namespace

std::vector<Sequence> generate_dataset(const DatasetSpec& spec, int threads) {
  const auto specs = expand(spec);
  return generate_all(specs, spec.name, resolve_threads(threads));
}

std::string digest(std::span<const SequenceSpec> specs) {
  Fnv1a h;
  for (const auto& s : specs) {
    std::ostringstream os;
    os << s.length << ',' << s.canvas << ',' << shape_name(s.target.shape) << ',' << fmt_double(s.target.color[0])
       << ',' << fmt_double(s.target.color[1]) << ',' << fmt_double(s.target.color[2]) << ','
       << fmt_double(s.target.min_size) << ',' << fmt_double(s.target.max_size) << ',' << s.distractors << ','
       << fmt_double(s.occluder_prob) << ',' << fmt_double(s.motion.min_speed) << ','
       << fmt_double(s.motion.max_speed) << ',' << fmt_double(s.motion.direction_change_prob) << ',' << s.seed
       << ';';
    h.update(os.str());
  }
  return h.hex();
}

std::string digest(const DatasetSpec& spec) {
  const auto specs = expand(spec);
  return digest(std::span<const SequenceSpec>(specs));
}

DatasetManifest build_dataset(const std::string& name, std::span<const SequenceSpec> specs, const fs::path& out_dir,
                              int threads) {
  if (name.empty()) throw ContractViolation("build_dataset: empty name");
  const fs::path dir = out_dir / name;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());

  const auto seqs = generate_all(specs, name, resolve_threads(threads));
  DatasetManifest m;
  m.name = name;
  m.specs_digest = digest(specs);
  for (const auto& s : seqs) {
    const std::string file = s.name + ".seq";
    write_sequence(s, dir / file);
    m.files.push_back(file);
    m.lengths.push_back(s.length());
  }
  nlohmann::json j;
  j["name"] = m.name;
  j["specs_digest"] = m.specs_digest;
  j["sequences"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.files.size(); ++i)
    j["sequences"].push_back({{"file", m.files[i]}, {"length", m.lengths[i]}});
  const fs::path mpath = dir / "manifest.json";
  std::ofstream os(mpath, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + mpath.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + mpath.string());
  return m;
}

DatasetManifest read_manifest(const fs::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest: " + manifest_path.string());
  nlohmann::json j;
  try {
    is >> j;
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.specs_digest = j.at("specs_digest").get<std::string>();
    for (const auto& e : j.at("sequences")) {
      m.files.push_back(e.at("file").get<std::string>());
      m.lengths.push_back(e.at("length").get<int>());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
}

std::vector<Sequence> load_dataset(const fs::path& manifest_path) {
  const auto m = read_manifest(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  std::vector<Sequence> out;
  for (std::size_t i = 0; i < m.files.size(); ++i) {
    out.push_back(read_sequence(dir / m.files[i]));
    if (out.back().length() != m.lengths[i])
      throw IoError("length mismatch for " + m.files[i] + " in " + manifest_path.string());
  }
  return out;
}

// ---------------------------------------------------------------------------
// sampling

SampleIndex balanced_sample(std::span<const int> sizes, Rng& rng, std::span<const double> weights) {
  if (sizes.empty()) throw ContractViolation("balanced_sample: no datasets");
  for (int s : sizes)
    if (s <= 0) throw ContractViolation("balanced_sample: empty dataset");
  int d;
  if (weights.empty()) {
    d = static_cast<int>(uniform_index(rng, sizes.size()));
  } else {
    if (weights.size() != sizes.size()) throw ContractViolation("balanced_sample: weight count != dataset count");
    double total = 0;
    for (double w : weights) {
      if (!(w >= 0) || !std::isfinite(w)) throw ContractViolation("balanced_sample: weights must be finite and >= 0");
      total += w;
    }
    if (!(total > 0)) throw ContractViolation("balanced_sample: weights sum to zero");
    const double u = uniform01(rng) * total;
    double acc = 0;
    d = static_cast<int>(sizes.size()) - 1;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) {
        d = static_cast<int>(i);
        break;
      }
    }
  }
  const int k = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(sizes[d])));
  return {d, k};
}

// ---------------------------------------------------------------------------
// crops

CropWindow window_around(const NormBox& box, int canvas, double factor) {
  if (!(factor > 1.0)) throw ContractViolation("crop factor must be > 1");
  const double side = factor * std::sqrt(box.w * box.h) * canvas;
  return {box.cx * canvas, box.cy * canvas, std::max(side, 1.0)};
}

Image crop_resize(const Sequence& seq, int t, const CropWindow& win, int out_res) {
  if (out_res <= 0) throw ContractViolation("crop_resize: resolution must be positive");
  const auto& f = seq.frames.at(t);
  const int n = seq.canvas;
  const auto mean = seq.mean_color(t);
  Image out(out_res, out_res, 3);
  const double scale = win.side / out_res;
  const double x0 = win.cx - 0.5 * win.side, y0 = win.cy - 0.5 * win.side;
  auto px = [&](int y, int x, int c) -> double {
    if (x < 0 || y < 0 || x >= n || y >= n) return mean[c];
    return f[(static_cast<std::size_t>(y) * n + x) * 3 + c] / 255.0;
  };
  for (int v = 0; v < out_res; ++v) {
    const double sy = y0 + (v + 0.5) * scale - 0.5;
    const int iy = static_cast<int>(std::floor(sy));
    const double fy = sy - iy;
    for (int u = 0; u < out_res; ++u) {
      const double sx = x0 + (u + 0.5) * scale - 0.5;
      const int ix = static_cast<int>(std::floor(sx));
      const double fx = sx - ix;
      for (int c = 0; c < 3; ++c) {
        const double top = px(iy, ix, c) * (1 - fx) + px(iy, ix + 1, c) * fx;
        const double bot = px(iy + 1, ix, c) * (1 - fx) + px(iy + 1, ix + 1, c) * fx;
        out.at(v, u, c) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

NormBox to_crop(const NormBox& b, const CropWindow& win, int canvas) {
  const double x0 = win.cx - 0.5 * win.side, y0 = win.cy - 0.5 * win.side;
  return {(b.cx * canvas - x0) / win.side, (b.cy * canvas - y0) / win.side, b.w * canvas / win.side,
          b.h * canvas / win.side};
}

NormBox from_crop(const NormBox& b, const CropWindow& win, int canvas) {
  const double x0 = win.cx - 0.5 * win.side, y0 = win.cy - 0.5 * win.side;
  return {(x0 + b.cx * win.side) / canvas, (y0 + b.cy * win.side) / canvas, b.w * win.side / canvas,
          b.h * win.side / canvas};
}

std::optional<CropPair> crop_pair(const Sequence& seq, int t_template, int t_search, const CropOptions& opt, Rng* rng) {
  if (!(opt.template_factor > 1.0) || !(opt.search_factor > 1.0))
    throw ContractViolation("crop_pair: factors must be > 1");
  if (t_template < 0 || t_template >= seq.length() || t_search < 0 || t_search >= seq.length())
    throw ContractViolation("crop_pair: frame index out of range");
  if (!seq.visible[t_template] || !seq.visible[t_search]) return std::nullopt;

  CropPair p;
  p.template_window = window_around(seq.boxes[t_template], seq.canvas, opt.template_factor);
  const NormBox& gt = seq.boxes[t_search];
  p.search_window = window_around(gt, seq.canvas, opt.search_factor);
  if (rng && (opt.center_jitter > 0 || opt.scale_jitter > 0)) {
    const double sw = gt.w * std::exp(normal(*rng) * opt.scale_jitter);
    const double sh = gt.h * std::exp(normal(*rng) * opt.scale_jitter);
    const double jittered = std::sqrt(sw * sh) * seq.canvas;
    const double reach = jittered * opt.center_jitter;
    p.search_window.cx += reach * (uniform01(*rng) - 0.5);
    p.search_window.cy += reach * (uniform01(*rng) - 0.5);
    p.search_window.side = std::max(1.0, opt.search_factor * jittered);
  }
  p.templ = crop_resize(seq, t_template, p.template_window, opt.template_res);
  p.search = crop_resize(seq, t_search, p.search_window, opt.search_res);
  p.gt = to_crop(gt, p.search_window, seq.canvas);
  return p;
}

}  // namespace progtrack::data
