#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "progtrack/cli/app.hpp"
#include "progtrack/eval/bench.hpp"
#include "progtrack/io/json_io.hpp"
#include "progtrack/scale/progressive.hpp"

namespace py = pybind11;
using namespace progtrack;
using nlohmann::json;

namespace {

using Boxes = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Flags = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using Frames = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<NormBox> to_boxes(const Boxes& a) {
  if (a.ndim() != 2 || a.shape(1) != 4) throw ContractViolation("boxes must have shape (n, 4) as cx, cy, w, h");
  std::vector<NormBox> out(a.shape(0));
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out[i] = {r(i, 0), r(i, 1), r(i, 2), r(i, 3)};
  return out;
}

Boxes from_boxes(const std::vector<NormBox>& boxes) {
  Boxes a({static_cast<py::ssize_t>(boxes.size()), py::ssize_t{4}});
  auto w = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    w(i, 0) = boxes[i].cx;
    w(i, 1) = boxes[i].cy;
    w(i, 2) = boxes[i].w;
    w(i, 3) = boxes[i].h;
  }
  return a;
}

std::vector<std::uint8_t> to_flags(const Flags& a) { return {a.data(), a.data() + a.size()}; }

py::dict sequence_dict(const data::Sequence& s) {
  const auto n = static_cast<py::ssize_t>(s.length());
  const int c = s.canvas;
  Frames frames({n, static_cast<py::ssize_t>(c), static_cast<py::ssize_t>(c), py::ssize_t{3}});
  for (py::ssize_t t = 0; t < n; ++t)
    std::memcpy(frames.mutable_data(t), s.frames[t].data(), s.frames[t].size());
  Flags visible(n);
  std::memcpy(visible.mutable_data(), s.visible.data(), s.visible.size());
  py::dict d;
  d["frames"] = frames;
  d["boxes"] = from_boxes(s.boxes);
  d["visible"] = visible.attr("astype")("bool");
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Progressive tracker training: synthetic data, metrics, checkpoints and the command-line driver.";

  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<UndefinedMetric>(m, "UndefinedMetric", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);

  m.def(
      "parse_config",
      [](const std::string& text, const std::vector<std::string>& set) {
        cli::Overrides ov;
        ov.set = set;
        return cli::parse_config(json::parse(text.empty() ? "{}" : text), ov).to_json().dump();
      },
      py::arg("config_json") = "{}", py::arg("set") = std::vector<std::string>{},
      "Resolve a JSON configuration (defaults filled, dotted overrides applied); returns JSON text.");

  m.def(
      "parameter_count",
      [](const std::string& model_json) {
        return model::parameter_count(io::parse<model::TrackerConfig>(json::parse(model_json), "model"));
      },
      py::arg("model_json") = "{}", "Trainable parameter count of a tracker configuration.");

  m.def(
      "generate_sequence",
      [](int length, int canvas, std::uint64_t seed, int distractors, double occluder_prob, double min_speed,
         double max_speed) {
        data::SequenceSpec s;
        s.length = length;
        s.canvas = canvas;
        s.seed = seed;
        s.distractors = distractors;
        s.occluder_prob = occluder_prob;
        s.motion.min_speed = min_speed;
        s.motion.max_speed = max_speed;
        return sequence_dict(data::generate_sequence(s));
      },
      py::arg("length") = 40, py::arg("canvas") = 128, py::arg("seed") = 0, py::arg("distractors") = 2,
      py::arg("occluder_prob") = 0.05, py::arg("min_speed") = 0.5, py::arg("max_speed") = 3.0,
      "Render one synthetic sequence: frames (T, H, W, 3) uint8, boxes (T, 4) canvas-normalized, visible (T,).");

  m.def(
      "success_auc",
      [](const Boxes& preds, const Boxes& gts, const Flags& visible) {
        return eval::success_auc(to_boxes(preds), to_boxes(gts), to_flags(visible));
      },
      py::arg("preds"), py::arg("gts"), py::arg("visible"));

  m.def(
      "precision_metrics",
      [](const Boxes& preds, const Boxes& gts, const Flags& visible, int canvas) {
        const auto r = eval::precision_metrics(to_boxes(preds), to_boxes(gts), to_flags(visible), canvas);
        return py::make_tuple(r.precision, r.norm_precision);
      },
      py::arg("preds"), py::arg("gts"), py::arg("visible"), py::arg("canvas"),
      "Returns (precision, normalized precision).");

  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        const auto c = scale::load_checkpoint(path);
        py::dict d;
        d["id"] = c.id;
        d["digest"] = c.digest();
        d["lineage"] = c.lineage;
        d["teacher_id"] = c.teacher_id;
        d["model"] = io::to_json(c.model.config).dump();
        d["metrics"] = c.metrics.dump();
        d["parameter_count"] = ad::count_parameters(c.model.params);
        d["adapter_count"] = ad::count_parameters(c.adapter);
        return d;
      },
      py::arg("path"));

  m.def(
      "track",
      [](const std::string& checkpoint, const Frames& frames, const Boxes& first_box) {
        if (frames.ndim() != 4 || frames.shape(1) != frames.shape(2) || frames.shape(3) != 3)
          throw ContractViolation("frames must have shape (T, S, S, 3)");
        const auto first = to_boxes(first_box);
        if (first.size() != 1) throw ContractViolation("first_box must have shape (1, 4)");
        const auto ck = scale::load_checkpoint(checkpoint);
        data::Sequence seq;
        seq.canvas = static_cast<int>(frames.shape(1));
        const std::size_t frame_bytes = static_cast<std::size_t>(seq.canvas) * seq.canvas * 3;
        for (py::ssize_t t = 0; t < frames.shape(0); ++t) {
          const auto* p = frames.data(t);
          seq.frames.emplace_back(p, p + frame_bytes);
          seq.boxes.push_back(first[0]);
          seq.visible.push_back(1);
        }
        std::vector<NormBox> boxes;
        {
          py::gil_scoped_release release;
          boxes = eval::track_sequence(ck.model, seq).boxes;
        }
        return from_boxes(boxes);
      },
      py::arg("checkpoint"), py::arg("frames"), py::arg("first_box"),
      "Track through the frames from the first-frame box; returns (T, 4) canvas-normalized boxes.");

  m.def(
      "main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "progtrack");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return cli::main_entry(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Run the command-line driver; returns its exit status.");
}
