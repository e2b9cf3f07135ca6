#include "progtrack/cli/app.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "progtrack/digest.hpp"
#include "progtrack/errors.hpp"
#include "progtrack/io/json_io.hpp"

namespace progtrack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<data::DatasetSpec> default_eval_suites() {
  data::DatasetSpec plain;
  plain.name = "plain";
  plain.sequences = 16;
  plain.min_distractors = 0;
  plain.max_distractors = 0;
  plain.occluder_prob = 0.0;
  plain.seed = 501;
  data::DatasetSpec crowd = plain;
  crowd.name = "crowd";
  crowd.min_distractors = 2;
  crowd.max_distractors = 4;
  crowd.seed = 502;
  data::DatasetSpec occl = plain;
  occl.name = "occlusion";
  occl.max_distractors = 1;
  occl.occluder_prob = 0.1;
  occl.max_speed = 5.0;
  occl.seed = 503;
  return {plain, crowd, occl};
}

RunConfig default_config() {
  RunConfig c;
  data::DatasetSpec train;
  train.name = "train";
  train.sequences = 128;
  train.seed = 100;
  c.train_data = {train};
  c.eval_suites = default_eval_suites();
  return c;
}

namespace {

const char* precision_name(scale::Precision p) { return p == scale::Precision::F64 ? "f64" : "f32"; }

json datasets_json(const std::vector<data::DatasetSpec>& v) {
  json a = json::array();
  for (const auto& d : v) a.push_back(io::to_json(d));
  return a;
}

std::vector<data::DatasetSpec> read_datasets(const json& arr, const std::string& path, const std::string& default_name) {
  if (!arr.is_array()) throw ParseError(path, "expected an array of dataset specs");
  std::vector<data::DatasetSpec> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    data::DatasetSpec base;
    base.name = default_name + (arr.size() > 1 ? std::to_string(i) : "");
    out.push_back(io::parse<data::DatasetSpec>(arr[i], path + "[" + std::to_string(i) + "]", base));
  }
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t k = 0; k < i; ++k)
      if (out[i].name == out[k].name) throw ParseError(path + "[" + std::to_string(i) + "].name", "duplicate name");
  return out;
}

// Sets a dotted path inside a JSON object, creating intermediate objects.
void set_path(json& root, const std::string& dotted, const json& value) {
  json* cur = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ParseError(dotted, "empty path component");
    if (!cur->is_object()) throw ParseError(dotted, "cannot descend into a non-object");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key)) (*cur)[key] = json::object();
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

void ensure_linear_mask(json& j) {
  json& t = j["training"];
  if (!t.is_object()) t = json::object();
  if (!t.contains("mask_ratio")) t["mask_ratio"] = io::to_json(train::DTConfig{}.mask_ratio);
}

std::string fmt_value(double v) {
  char buf[32];
  if (v == std::floor(v) && std::abs(v) < 1e15) std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
  else std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["threads"] = threads;
  j["precision"] = precision_name(precision);
  j["model"] = io::to_json(model);
  j["training"] = io::to_json(training);
  j["data"] = {{"train", datasets_json(train_data)}, {"eval", datasets_json(eval_suites)}};
  j["inference"] = io::to_json(infer);
  j["teacher"] = teacher;
  j["checkpoint"] = checkpoint;
  j["plan"] = plan;
  j["sweep"] = {{"factor", sweep.factor}, {"values", sweep.values}};
  j["report"] = {{"inputs", report_inputs}};
  return j;
}

RunConfig parse_config(const json& file, const Overrides& ov) {
  if (!file.is_object()) throw ParseError("", "configuration must be a JSON object");
  json j = file;
  if (ov.seed) j["seed"] = *ov.seed;
  if (ov.threads) j["threads"] = *ov.threads;
  if (ov.precision) j["precision"] = *ov.precision;
  if (ov.output_dir) j["output_dir"] = *ov.output_dir;
  if (ov.mask_start) {
    ensure_linear_mask(j);
    j["training"]["mask_ratio"]["start"] = *ov.mask_start;
  }
  if (ov.mask_end) {
    ensure_linear_mask(j);
    j["training"]["mask_ratio"]["end"] = *ov.mask_end;
  }
  if (ov.lambda_align) set_path(j, "training.lambda_align", *ov.lambda_align);
  if (ov.epochs) set_path(j, "training.epochs", *ov.epochs);
  if (ov.steps) set_path(j, "training.steps_per_epoch", *ov.steps);
  if (ov.factor) {
    if (ov.factor->find(',') != std::string::npos)
      throw ParseError("sweep.factor", "a sweep varies exactly one factor");
    set_path(j, "sweep.factor", *ov.factor);
  }
  if (ov.values) {
    json vals = json::array();
    std::stringstream ss(*ov.values);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        std::size_t used = 0;
        const double v = std::stod(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        vals.push_back(v);
      } catch (const std::exception&) {
        throw ParseError("sweep.values", "not a number: '" + item + "'");
      }
    }
    set_path(j, "sweep.values", vals);
  }
  if (!ov.inputs.empty()) set_path(j, "report.inputs", ov.inputs);
  for (const auto& s : ov.set) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError(s, "--set expects key=value");
    set_path(j, s.substr(0, eq), parse_value(s.substr(eq + 1)));
  }

  RunConfig c = default_config();
  io::ObjectReader r(j, "");
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.get("threads", c.threads);
  if (c.threads < 0) throw ParseError("threads", "must be >= 0");
  std::string prec = precision_name(c.precision);
  r.get("precision", prec);
  if (prec == "f32") c.precision = scale::Precision::F32;
  else if (prec == "f64") c.precision = scale::Precision::F64;
  else throw ParseError("precision", "expected f32 or f64");
  if (r.has("model")) io::read_into(r.child("model"), c.model);
  else r.raw("model");
  if (r.has("training")) io::read_into(r.child("training"), c.training);
  else r.raw("training");
  {
    auto d = r.child("data");
    if (const json* t = d.raw("train")) c.train_data = read_datasets(*t, d.at("train"), "train");
    if (const json* e = d.raw("eval")) c.eval_suites = read_datasets(*e, d.at("eval"), "eval");
    d.finish();
  }
  if (r.has("inference")) io::read_into(r.child("inference"), c.infer);
  else r.raw("inference");
  r.get("teacher", c.teacher);
  r.get("checkpoint", c.checkpoint);
  if (const json* p = r.raw("plan")) {
    if (!p->is_object()) throw ParseError("plan", "expected an object");
    c.plan = *p;
  }
  {
    auto s = r.child("sweep");
    s.get("factor", c.sweep.factor);
    s.get("values", c.sweep.values);
    s.finish();
  }
  {
    auto rep = r.child("report");
    rep.get("inputs", c.report_inputs);
    rep.finish();
  }
  r.finish();
  if (c.train_data.empty()) throw ParseError("data.train", "at least one training dataset is required");
  if (!c.plan.empty()) (void)resolve_stages(c);  // surface plan errors at parse time
  return c;
}

RunConfig parse_config_file(const std::string& path, const Overrides& ov) {
  return parse_config(path.empty() ? json::object() : io::read_json_file(path), ov);
}

std::vector<scale::StageSpec> resolve_stages(const RunConfig& cfg) {
  io::ObjectReader r(cfg.plan, "plan");
  const json* stages = r.raw("stages");
  r.finish();
  if (stages == nullptr || !stages->is_array() || stages->empty())
    throw ParseError("plan.stages", "expected a non-empty array of stages");
  std::vector<scale::StageSpec> out;
  for (std::size_t k = 0; k < stages->size(); ++k) {
    const std::string path = "plan.stages[" + std::to_string(k) + "]";
    io::ObjectReader sr((*stages)[k], path);
    scale::StageSpec s;
    s.index = static_cast<int>(k);
    s.model = cfg.model;
    if (sr.has("model")) io::read_into(sr.child("model"), s.model);
    else sr.raw("model");
    s.training = cfg.training;
    if (sr.has("training")) io::read_into(sr.child("training"), s.training);
    else sr.raw("training");
    s.data = cfg.train_data;
    if (const json* d = sr.raw("data")) s.data = read_datasets(*d, sr.at("data"), "train");
    std::string teacher = k == 0 ? "none" : "previous";
    sr.get("teacher", teacher);
    if (teacher == "none") s.teacher = scale::TeacherSource::None;
    else if (teacher == "previous") s.teacher = scale::TeacherSource::Previous;
    else {
      s.teacher = scale::TeacherSource::Explicit;
      s.teacher_id = teacher;
    }
    std::vector<std::string> enl;
    sr.get("enlarges", enl);
    for (std::size_t i = 0; i < enl.size(); ++i) {
      try {
        s.enlarges.push_back(scale::parse_factor(enl[i]));
      } catch (const ContractViolation& e) {
        throw ParseError(sr.at("enlarges") + "[" + std::to_string(i) + "]", e.what());
      }
    }
    sr.finish();
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// commands

namespace {

struct Context {
  const RunConfig& cfg;
  fs::path dir;
  std::ostream& out;
};

fs::path output_root() {
  if (const char* env = std::getenv("PROGTRACK_OUT"); env != nullptr && *env != '\0') return env;
  return "runs";
}

fs::path prepare_run_dir(const std::string& command, const RunConfig& cfg, bool force) {
  fs::path dir = cfg.output_dir;
  if (dir.empty()) {
    Fnv1a h;
    h.update(command);
    h.update(cfg.to_json().dump());
    dir = output_root() / (command + "-" + h.hex().substr(0, 10));
  }
  if (fs::exists(dir) && !(fs::is_directory(dir) && fs::is_empty(dir))) {
    if (!force) throw IoError("run directory " + dir.string() + " already exists (use --force to replace it)");
    fs::remove_all(dir);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  return dir;
}

scale::RunOptions run_options(const RunConfig& cfg, const std::string& prefix) {
  scale::RunOptions o;
  o.precision = cfg.precision;
  o.eval_suites = cfg.eval_suites;
  o.infer = cfg.infer;
  o.id_prefix = prefix;
  o.threads = cfg.threads;
  return o;
}

void write_eval(const eval::EvalReport& rep, const fs::path& dir, const std::string& stem) {
  eval::write_report_csv(rep, dir / (stem + ".csv"));
  eval::write_curve_csv(rep, dir / (stem + "_curve.csv"));
}

void cmd_gen_data(Context& c) {
  const fs::path root = c.dir / "data";
  auto build = [&](const data::DatasetSpec& d) {
    const auto specs = data::expand(d);
    const auto m = data::build_dataset(d.name, specs, root, c.cfg.threads);
    c.out << "dataset " << m.name << ": " << m.files.size() << " sequences -> " << (root / d.name / "manifest.json").string()
          << "\n";
  };
  for (const auto& d : c.cfg.train_data) build(d);
  for (const auto& d : c.cfg.eval_suites) build(d);
}

void report_summary(std::ostream& out, const scale::Checkpoint& ck, const std::optional<eval::EvalReport>& rep) {
  out << "checkpoint " << ck.id << " digest " << ck.digest() << " params " << ad::count_parameters(ck.model.params);
  if (rep) out << " mean_auc " << std::fixed << std::setprecision(4) << rep->mean_auc << std::defaultfloat;
  out << "\n";
}

void cmd_train(Context& c) {
  std::optional<scale::Checkpoint> teacher;
  if (!c.cfg.teacher.empty()) teacher = scale::load_checkpoint(c.cfg.teacher);
  train::DTConfig training = c.cfg.training;
  if (!teacher) training.lambda_transfer = train::Schedule::constant(0.0);
  const auto r = scale::run_training(c.cfg.model, c.cfg.train_data, training, c.cfg.seed, teacher ? &*teacher : nullptr,
                                     run_options(c.cfg, "train"));
  scale::save_checkpoint(r.checkpoint, c.dir);
  train::write_log_csv(r.log, c.dir / "train_log.csv");
  if (r.report) write_eval(*r.report, c.dir, "eval");
  report_summary(c.out, r.checkpoint, r.report);
}

void cmd_plan_run(Context& c) {
  const auto plan = scale::plan_stages(resolve_stages(c.cfg), c.cfg.seed);
  const auto ckpts = scale::run_plan(plan, c.dir, run_options(c.cfg, "stage"));
  std::ofstream os(c.dir / "lineage.csv");
  os << "stage,checkpoint,teacher,lineage,mean_auc\n";
  for (std::size_t k = 0; k < ckpts.size(); ++k) {
    const auto& ck = ckpts[k];
    std::string lin;
    for (const auto& id : ck.lineage) lin += (lin.empty() ? "" : ";") + id;
    const double auc = ck.metrics.contains("mean_auc") ? ck.metrics["mean_auc"].get<double>() : std::nan("");
    os << k << ',' << ck.id << ',' << ck.teacher_id << ',' << lin << ',' << auc << '\n';
    report_summary(c.out, ck, std::nullopt);
  }
  if (!os) throw IoError("write failed: " + (c.dir / "lineage.csv").string());
}

void cmd_eval(Context& c) {
  if (c.cfg.checkpoint.empty()) throw ParseError("checkpoint", "eval needs a checkpoint (--checkpoint PATH)");
  if (c.cfg.eval_suites.empty()) throw ParseError("data.eval", "eval needs at least one suite");
  const auto ck = scale::load_checkpoint(c.cfg.checkpoint);
  const auto t0 = std::chrono::steady_clock::now();
  auto rep = scale::evaluate(ck.model, c.cfg.eval_suites, c.cfg.infer, c.cfg.threads);
  rep.checkpoint_id = ck.id;
  rep.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_eval(rep, c.dir, "eval");
  io::write_json_file({{"checkpoint", rep.checkpoint_id}, {"mean_auc", rep.mean_auc}, {"wall_clock_s", rep.wall_clock_s}},
                      (c.dir / "eval_meta.json").string());
  for (const auto& s : rep.suites)
    c.out << s.suite << " auc " << s.auc << " precision " << s.precision << " norm_precision " << s.norm_precision << "\n";
  c.out << "mean auc " << rep.mean_auc << "\n";
}

RunConfig sweep_member(const RunConfig& base, const std::string& factor, double v) {
  RunConfig c = base;
  const int iv = static_cast<int>(std::lround(v));
  if (factor != "data" && std::abs(v - iv) > 0) throw ParseError("sweep.values", factor + " values must be integers");
  if (factor == "layers") {
    c.model.num_layers = iv;
  } else if (factor == "dim") {
    c.model.embed_dim = iv;
  } else if (factor == "resolution") {
    c.model.search_res = iv;
    c.model.template_res = iv / 2;
  } else if (factor == "data") {
    if (c.train_data.size() != 1) throw ParseError("data.train", "a data sweep needs exactly one training dataset");
    if (std::abs(v - iv) > 0 || iv < 1) throw ParseError("sweep.values", "data values are sequence counts");
    c.train_data[0].sequences = iv;
  } else {
    throw ParseError("sweep.factor", "unknown factor '" + factor + "' (layers, dim, data, resolution)");
  }
  try {
    c.model.validate();
  } catch (const ContractViolation& e) {
    throw ParseError("sweep.values", fmt_value(v) + ": " + e.what());
  }
  return c;
}

void cmd_sweep(Context& c) {
  const auto& sw = c.cfg.sweep;
  if (sw.factor.empty()) throw ParseError("sweep.factor", "missing (--factor)");
  if (sw.values.empty()) throw ParseError("sweep.values", "missing (--values)");
  std::vector<RunConfig> members;
  for (double v : sw.values) members.push_back(sweep_member(c.cfg, sw.factor, v));
  std::ofstream trend(c.dir / "trend.csv");
  trend << "factor,value,checkpoint,mean_auc,mean_precision,mean_norm_precision\n";
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& m = members[i];
    const std::string tag = sw.factor + "-" + fmt_value(sw.values[i]);
    train::DTConfig training = m.training;
    training.lambda_transfer = train::Schedule::constant(0.0);
    const auto r = scale::run_training(m.model, m.train_data, training, m.seed, nullptr, run_options(m, tag));
    const fs::path sub = c.dir / tag;
    scale::save_checkpoint(r.checkpoint, sub);
    train::write_log_csv(r.log, sub / "train_log.csv");
    io::write_json_file(m.to_json(), (sub / "config.json").string());
    if (r.report) write_eval(*r.report, sub, "eval");
    char line[256];
    std::snprintf(line, sizeof line, "%s,%s,%s,%.6f,%.6f,%.6f\n", sw.factor.c_str(), fmt_value(sw.values[i]).c_str(),
                  r.checkpoint.id.c_str(), r.report ? r.report->mean_auc : std::nan(""),
                  r.report ? r.report->mean_precision : std::nan(""),
                  r.report ? r.report->mean_norm_precision : std::nan(""));
    trend << line;
    c.out << line;
  }
  if (!trend) throw IoError("write failed: " + (c.dir / "trend.csv").string());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

void cmd_report(Context& c) {
  if (c.cfg.report_inputs.empty()) throw ParseError("report.inputs", "no input CSVs given");
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"source", "suite", "trajectories", "auc", "precision", "norm_precision"});
  for (const auto& in : c.cfg.report_inputs) {
    std::ifstream is(in);
    if (!is) throw IoError("cannot open report input " + in);
    std::string header;
    std::getline(is, header);
    const auto cols = split_csv_line(header);
    const std::string source = fs::path(in).parent_path().filename().string() + "/" + fs::path(in).filename().string();
    std::string line;
    if (cols == std::vector<std::string>{"suite", "trajectories", "auc", "precision", "norm_precision"}) {
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 5) throw IoError("malformed row in " + in + ": " + line);
        cells.insert(cells.begin(), source);
        rows.push_back(cells);
      }
    } else if (cols.size() == 6 && cols[0] == "factor") {
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 6) throw IoError("malformed row in " + in + ": " + line);
        rows.push_back({source, cells[0] + "=" + cells[1], "", cells[3], cells[4], cells[5]});
      }
    } else {
      throw IoError("unrecognized CSV layout in " + in);
    }
  }
  std::ofstream csv(c.dir / "report.csv");
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) csv << (i ? "," : "") << r[i];
    csv << "\n";
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  std::ostringstream table;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t i = 0; i < rows[k].size(); ++i)
      table << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << std::left << rows[k][i];
    table << "\n";
    if (k == 0) {
      for (std::size_t i = 0; i < width.size(); ++i) table << (i ? "  " : "") << std::string(width[i], '-');
      table << "\n";
    }
  }
  std::ofstream txt(c.dir / "report.txt");
  txt << table.str();
  c.out << table.str();
  if (!csv || !txt) throw IoError("write failed in " + c.dir.string());
}

json error_record(const std::string& command, const std::string& type, const std::string& message,
                  const std::string& field = "") {
  json e = {{"command", command}, {"type", type}, {"message", message}};
  if (!field.empty()) e["field"] = field;
  return {{"error", e}};
}

}  // namespace

int run_command(const std::string& command, const RunConfig& cfg, bool force, std::ostream& out, std::ostream& err) {
  static const std::vector<std::string> known = {"gen-data", "train", "plan-run", "eval", "sweep", "report"};
  fs::path dir;
  auto fail = [&](int code, const json& rec) {
    err << rec.dump() << "\n";
    if (!dir.empty()) {
      std::ofstream os(dir / "error.json");
      os << rec.dump(2) << "\n";
    }
    return code;
  };
  try {
    if (std::find(known.begin(), known.end(), command) == known.end())
      throw ContractViolation("unknown command '" + command + "'");
    dir = prepare_run_dir(command, cfg, force);
    RunConfig resolved = cfg;
    resolved.output_dir = dir.string();
    io::write_json_file(resolved.to_json(), (dir / "config.json").string());
    Context c{resolved, dir, out};
    if (command == "gen-data") cmd_gen_data(c);
    else if (command == "train") cmd_train(c);
    else if (command == "plan-run") cmd_plan_run(c);
    else if (command == "eval") cmd_eval(c);
    else if (command == "sweep") cmd_sweep(c);
    else cmd_report(c);
    out << "run directory " << dir.string() << "\n";
    return 0;
  } catch (const ParseError& e) {
    return fail(2, error_record(command, "parse_error", e.what(), e.field()));
  } catch (const ContractViolation& e) {
    return fail(3, error_record(command, "contract_violation", e.what()));
  } catch (const PlanError& e) {
    return fail(3, error_record(command, "plan_error", e.what()));
  } catch (const IoError& e) {
    return fail(4, error_record(command, "io_error", e.what()));
  } catch (const IntegrityError& e) {
    return fail(5, error_record(command, "integrity_error", e.what()));
  } catch (const NumericFault& e) {
    return fail(6, error_record(command, "numeric_fault", e.what()));
  } catch (const std::exception& e) {
    return fail(1, error_record(command, "error", e.what()));
  }
}

int main_entry(int argc, char** argv) {
  CLI::App app{"progtrack: synthetic tracking, guided training and progressive scaling"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  Overrides ov;
  bool force = false;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string precision, out_dir, teacher, checkpoint, factor, values;
  double mask_start = 0, mask_end = 0, lambda_align = 0;
  int epochs = 0, steps = 0;

  app.add_option("-c,--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  auto* o_seed = app.add_option("--seed", seed, "global seed");
  auto* o_threads = app.add_option("--threads", threads, "worker threads for data generation (0 = all)");
  auto* o_prec = app.add_option("--precision", precision, "training precision")->check(CLI::IsMember({"f32", "f64"}));
  auto* o_out = app.add_option("-o,--out", out_dir, "run directory (default: $PROGTRACK_OUT or ./runs)");
  app.add_flag("--force", force, "replace an existing run directory");
  app.add_option("--set", ov.set, "override any config key: dotted.key=value");

  auto* gen = app.add_subcommand("gen-data", "write training and evaluation datasets");
  auto* tr = app.add_subcommand("train", "train one model (guided when --teacher is given)");
  auto* o_teacher = tr->add_option("--teacher", teacher, "teacher checkpoint manifest");
  auto* o_ms = tr->add_option("--mask-start", mask_start, "mask ratio at the first epoch");
  auto* o_me = tr->add_option("--mask-end", mask_end, "mask ratio at the last epoch");
  auto* o_la = tr->add_option("--lambda-align", lambda_align, "weight of the dual-branch alignment loss");
  auto* o_ep = tr->add_option("--epochs", epochs, "training epochs");
  auto* o_st = tr->add_option("--steps", steps, "steps per epoch");
  auto* plan = app.add_subcommand("plan-run", "run a progressive multi-stage plan");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the benchmark suites");
  auto* o_ck = ev->add_option("--checkpoint", checkpoint, "checkpoint manifest")->required();
  auto* sw = app.add_subcommand("sweep", "train one model per value of a single factor");
  auto* o_factor = sw->add_option("--factor", factor, "layers | dim | data | resolution");
  auto* o_values = sw->add_option("--values", values, "comma-separated values");
  auto* rep = app.add_subcommand("report", "merge evaluation or trend CSVs into one table");
  rep->add_option("inputs", ov.inputs, "CSV files");
  (void)gen;
  (void)plan;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (*o_seed) ov.seed = seed;
  if (*o_threads) ov.threads = threads;
  if (*o_prec) ov.precision = precision;
  if (*o_out) ov.output_dir = out_dir;
  if (*o_ms) ov.mask_start = mask_start;
  if (*o_me) ov.mask_end = mask_end;
  if (*o_la) ov.lambda_align = lambda_align;
  if (*o_ep) ov.epochs = epochs;
  if (*o_st) ov.steps = steps;
  if (*o_factor) ov.factor = factor;
  if (*o_values) ov.values = values;
  if (*o_teacher) ov.set.push_back("teacher=\"" + teacher + "\"");
  if (*o_ck) ov.set.push_back("checkpoint=\"" + checkpoint + "\"");

  const std::string command = app.get_subcommands().front()->get_name();
  RunConfig cfg;
  try {
    cfg = parse_config_file(config_path, ov);
  } catch (const ParseError& e) {
    std::cerr << error_record(command, "parse_error", e.what(), e.field()).dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << error_record(command, "error", e.what()).dump() << "\n";
    return 2;
  }
  return run_command(command, cfg, force, std::cout, std::cerr);
}

}  // namespace progtrack::cli
