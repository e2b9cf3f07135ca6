#include "progtrack/io/json_io.hpp"

#include <algorithm>
#include <fstream>

namespace progtrack::io {

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string suggest(std::string_view key, std::span<const std::string> known) {
  std::string best;
  std::size_t best_d = 4;
  for (const auto& k : known) {
    const std::size_t d = edit_distance(key, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

ObjectReader::ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
  if (!j_.is_object()) throw ParseError(path_, "expected an object");
}

const json* ObjectReader::raw(const std::string& key) {
  known_.push_back(key);
  const auto it = j_.find(key);
  return it == j_.end() ? nullptr : &*it;
}

ObjectReader ObjectReader::child(const std::string& key) {
  const json* v = raw(key);
  static const json empty = json::object();
  return ObjectReader(v ? *v : empty, at(key));
}

void ObjectReader::finish() const {
  for (const auto& [key, _] : j_.items()) {
    if (std::find(known_.begin(), known_.end(), key) != known_.end()) continue;
    const std::string hint = suggest(key, known_);
    throw ParseError(at(key), hint.empty() ? "unknown key" : "unknown key (did you mean '" + hint + "'?)");
  }
}

void ObjectReader::read(const json& v, bool& out, const std::string& path) {
  if (!v.is_boolean()) throw ParseError(path, "expected a boolean");
  out = v.get<bool>();
}

void ObjectReader::read(const json& v, int& out, const std::string& path) {
  if (!v.is_number_integer()) throw ParseError(path, "expected an integer");
  const auto x = v.get<std::int64_t>();
  if (x < INT32_MIN || x > INT32_MAX) throw ParseError(path, "integer out of range");
  out = static_cast<int>(x);
}

void ObjectReader::read(const json& v, std::uint64_t& out, const std::string& path) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw ParseError(path, "expected a non-negative integer");
  out = v.get<std::uint64_t>();
}

void ObjectReader::read(const json& v, double& out, const std::string& path) {
  if (!v.is_number()) throw ParseError(path, "expected a number");
  out = v.get<double>();
}

void ObjectReader::read(const json& v, std::string& out, const std::string& path) {
  if (!v.is_string()) throw ParseError(path, "expected a string");
  out = v.get<std::string>();
}

void ObjectReader::read(const json& v, std::vector<int>& out, const std::string& path) {
  if (!v.is_array()) throw ParseError(path, "expected an array of integers");
  out.clear();
  for (std::size_t i = 0; i < v.size(); ++i) {
    int x;
    read(v[i], x, path + "[" + std::to_string(i) + "]");
    out.push_back(x);
  }
}

void ObjectReader::read(const json& v, std::vector<double>& out, const std::string& path) {
  if (!v.is_array()) throw ParseError(path, "expected an array of numbers");
  out.clear();
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x;
    read(v[i], x, path + "[" + std::to_string(i) + "]");
    out.push_back(x);
  }
}

void ObjectReader::read(const json& v, std::vector<std::string>& out, const std::string& path) {
  if (!v.is_array()) throw ParseError(path, "expected an array of strings");
  out.clear();
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::string x;
    read(v[i], x, path + "[" + std::to_string(i) + "]");
    out.push_back(x);
  }
}

namespace {

template <class F>
void checked(const std::string& path, F&& validate) {
  try {
    validate();
  } catch (const ContractViolation& e) {
    throw ParseError(path, e.what());
  }
}

}  // namespace

json to_json(const model::TrackerConfig& c) {
  return {{"patch_size", c.patch_size},       {"embed_dim", c.embed_dim},
          {"num_layers", c.num_layers},       {"num_heads", c.num_heads},
          {"mlp_ratio", c.mlp_ratio},         {"template_res", c.template_res},
          {"search_res", c.search_res},       {"head_hidden_dim", c.head_hidden_dim},
          {"channels", c.channels}};
}

void read_into(ObjectReader r, model::TrackerConfig& c) {
  r.get("patch_size", c.patch_size);
  r.get("embed_dim", c.embed_dim);
  r.get("num_layers", c.num_layers);
  r.get("num_heads", c.num_heads);
  r.get("mlp_ratio", c.mlp_ratio);
  r.get("template_res", c.template_res);
  r.get("search_res", c.search_res);
  r.get("head_hidden_dim", c.head_hidden_dim);
  r.get("channels", c.channels);
  r.finish();
  checked(r.path(), [&] { c.validate(); });
}

namespace {

const char* kind_name(train::ScheduleKind k) {
  switch (k) {
    case train::ScheduleKind::Constant: return "constant";
    case train::ScheduleKind::Linear: return "linear";
    case train::ScheduleKind::StepDrop: return "step_drop";
  }
  return "?";
}

}  // namespace

json to_json(const train::Schedule& s) {
  switch (s.kind) {
    case train::ScheduleKind::Constant: return {{"kind", "constant"}, {"value", s.start}};
    case train::ScheduleKind::Linear: return {{"kind", "linear"}, {"start", s.start}, {"end", s.end}};
    case train::ScheduleKind::StepDrop:
      return {{"kind", "step_drop"}, {"before", s.start}, {"after", s.end}, {"drop_fraction", s.drop_fraction}};
  }
  return {};
}

void read_into(ObjectReader r, train::Schedule& s) {
  std::string kind = kind_name(s.kind);
  r.get("kind", kind);
  if (kind == "constant") {
    s.kind = train::ScheduleKind::Constant;
    r.get("value", s.start);
    s.end = s.start;
  } else if (kind == "linear") {
    s.kind = train::ScheduleKind::Linear;
    r.get("start", s.start);
    r.get("end", s.end);
  } else if (kind == "step_drop") {
    s.kind = train::ScheduleKind::StepDrop;
    r.get("before", s.start);
    r.get("after", s.end);
    r.get("drop_fraction", s.drop_fraction);
    if (!(s.drop_fraction >= 0 && s.drop_fraction <= 1)) throw ParseError(r.at("drop_fraction"), "must lie in [0, 1]");
  } else {
    throw ParseError(r.at("kind"), "expected one of constant, linear, step_drop");
  }
  r.finish();
}

json to_json(const train::DTConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"batch_size", c.batch_size},
          {"lr", c.base_lr},
          {"lr_drop_fraction", c.lr_drop_fraction},
          {"lr_drop_factor", c.lr_drop_factor},
          {"weight_decay", c.optimizer.weight_decay},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"eps", c.optimizer.eps},
          {"lambda_align", c.lambda_align},
          {"lambda_transfer", to_json(c.lambda_transfer)},
          {"mask_ratio", to_json(c.mask_ratio)},
          {"feature_layers", c.feature_layers},
          {"mask_template", c.mask_template},
          {"detach_reference", c.detach_reference},
          {"lambda_cls", c.loss_weights.cls},
          {"lambda_iou", c.loss_weights.iou},
          {"lambda_l1", c.loss_weights.l1},
          {"crop",
           {{"template_factor", c.crop.template_factor},
            {"search_factor", c.crop.search_factor},
            {"center_jitter", c.crop.center_jitter},
            {"scale_jitter", c.crop.scale_jitter}}},
          {"max_frame_gap", c.max_frame_gap},
          {"seed", c.seed}};
}

void read_into(ObjectReader r, train::DTConfig& c) {
  r.get("epochs", c.epochs);
  r.get("steps_per_epoch", c.steps_per_epoch);
  r.get("batch_size", c.batch_size);
  r.get("lr", c.base_lr);
  r.get("lr_drop_fraction", c.lr_drop_fraction);
  r.get("lr_drop_factor", c.lr_drop_factor);
  r.get("weight_decay", c.optimizer.weight_decay);
  r.get("beta1", c.optimizer.beta1);
  r.get("beta2", c.optimizer.beta2);
  r.get("eps", c.optimizer.eps);
  r.get("lambda_align", c.lambda_align);
  if (r.has("lambda_transfer")) read_into(r.child("lambda_transfer"), c.lambda_transfer);
  else r.raw("lambda_transfer");
  if (r.has("mask_ratio")) read_into(r.child("mask_ratio"), c.mask_ratio);
  else r.raw("mask_ratio");
  r.get("feature_layers", c.feature_layers);
  r.get("mask_template", c.mask_template);
  r.get("detach_reference", c.detach_reference);
  r.get("lambda_cls", c.loss_weights.cls);
  r.get("lambda_iou", c.loss_weights.iou);
  r.get("lambda_l1", c.loss_weights.l1);
  if (r.has("crop")) {
    auto cr = r.child("crop");
    cr.get("template_factor", c.crop.template_factor);
    cr.get("search_factor", c.crop.search_factor);
    cr.get("center_jitter", c.crop.center_jitter);
    cr.get("scale_jitter", c.crop.scale_jitter);
    cr.finish();
  } else {
    r.raw("crop");
  }
  r.get("max_frame_gap", c.max_frame_gap);
  r.get("seed", c.seed);
  r.finish();
  checked(r.path(), [&] { c.validate(); });
}

json to_json(const data::DatasetSpec& d) {
  return {{"name", d.name},
          {"sequences", d.sequences},
          {"length", d.length},
          {"canvas", d.canvas},
          {"min_size", d.min_size},
          {"max_size", d.max_size},
          {"min_distractors", d.min_distractors},
          {"max_distractors", d.max_distractors},
          {"occluder_prob", d.occluder_prob},
          {"min_speed", d.min_speed},
          {"max_speed", d.max_speed},
          {"direction_change_prob", d.direction_change_prob},
          {"seed", d.seed}};
}

void read_into(ObjectReader r, data::DatasetSpec& d) {
  r.get("name", d.name);
  r.get("sequences", d.sequences);
  r.get("length", d.length);
  r.get("canvas", d.canvas);
  r.get("min_size", d.min_size);
  r.get("max_size", d.max_size);
  r.get("min_distractors", d.min_distractors);
  r.get("max_distractors", d.max_distractors);
  r.get("occluder_prob", d.occluder_prob);
  r.get("min_speed", d.min_speed);
  r.get("max_speed", d.max_speed);
  r.get("direction_change_prob", d.direction_change_prob);
  r.get("seed", d.seed);
  r.finish();
  checked(r.path(), [&] {
    if (d.name.empty()) throw ContractViolation("dataset name must not be empty");
    data::DatasetSpec probe = d;
    probe.sequences = 1;
    (void)data::expand(probe);
    if (d.sequences < 1) throw ContractViolation("sequences must be >= 1");
  });
}

json to_json(const eval::InferConfig& c) {
  return {{"gamma", c.gamma},
          {"template_factor", c.template_factor},
          {"search_factor", c.search_factor},
          {"min_box_px", c.min_box_px}};
}

void read_into(ObjectReader r, eval::InferConfig& c) {
  r.get("gamma", c.gamma);
  r.get("template_factor", c.template_factor);
  r.get("search_factor", c.search_factor);
  r.get("min_box_px", c.min_box_px);
  r.finish();
  if (!(c.gamma >= 0 && c.gamma <= 1)) throw ParseError(r.at("gamma"), "must lie in [0, 1]");
  if (!(c.template_factor > 1)) throw ParseError(r.at("template_factor"), "must be > 1");
  if (!(c.search_factor > 1)) throw ParseError(r.at("search_factor"), "must be > 1");
}

json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw ParseError("", "malformed JSON in " + path + ": " + e.what());
  }
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("write failed: " + path);
}

}  // namespace progtrack::io
