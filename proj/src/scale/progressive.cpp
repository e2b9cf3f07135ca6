#include "progtrack/scale/progressive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "progtrack/digest.hpp"
#include "progtrack/errors.hpp"
#include "progtrack/io/json_io.hpp"

namespace progtrack::scale {

namespace fs = std::filesystem;
using nlohmann::json;

const char* factor_name(Factor f) {
  switch (f) {
    case Factor::Data: return "data";
    case Factor::Model: return "model";
    case Factor::Resolution: return "resolution";
  }
  return "?";
}

Factor parse_factor(const std::string& s) {
  if (s == "data") return Factor::Data;
  if (s == "model") return Factor::Model;
  if (s == "resolution") return Factor::Resolution;
  throw ContractViolation("unknown scaling factor '" + s + "' (expected data, model or resolution)");
}

const char* teacher_source_name(TeacherSource t) {
  switch (t) {
    case TeacherSource::None: return "none";
    case TeacherSource::Previous: return "previous";
    case TeacherSource::Explicit: return "explicit";
  }
  return "?";
}

int StageSpec::data_volume() const {
  int n = 0;
  for (const auto& d : data) n += d.sequences;
  return n;
}

namespace {

struct Field {
  const char* name;
  double prev, cur;
};

std::vector<Field> model_fields(const model::TrackerConfig& a, const model::TrackerConfig& b) {
  return {{"embed_dim", double(a.embed_dim), double(b.embed_dim)},
          {"num_layers", double(a.num_layers), double(b.num_layers)},
          {"num_heads", double(a.num_heads), double(b.num_heads)},
          {"mlp_ratio", a.mlp_ratio, b.mlp_ratio},
          {"head_hidden_dim", double(a.head_hidden_dim), double(b.head_hidden_dim)}};
}

std::vector<Field> resolution_fields(const model::TrackerConfig& a, const model::TrackerConfig& b) {
  return {{"template_res", double(a.template_res), double(b.template_res)},
          {"search_res", double(a.search_res), double(b.search_res)}};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

StagePlan plan_stages(std::vector<StageSpec> stages, std::uint64_t seed) {
  if (stages.empty()) throw PlanError("plan has no stages");
  for (std::size_t k = 0; k < stages.size(); ++k) {
    auto& s = stages[k];
    s.index = static_cast<int>(k);
    const std::string tag = "stage " + std::to_string(k);
    try {
      s.model.validate();
      s.training.validate();
    } catch (const ContractViolation& e) {
      throw PlanError(tag + ": " + e.what());
    }
    if (s.data.empty()) throw PlanError(tag + ": no training data");
    if (k == 0) {
      if (s.teacher == TeacherSource::Previous) throw PlanError(tag + ": first stage has no previous stage to learn from");
      if (!s.enlarges.empty()) throw PlanError(tag + ": first stage cannot enlarge anything");
      continue;
    }
    if (s.teacher == TeacherSource::Explicit && s.teacher_id.empty()) throw PlanError(tag + ": explicit teacher without id");
    const auto& p = stages[k - 1];
    std::vector<Factor> grew;
    auto check = [&](Factor f, const std::vector<Field>& fields) {
      bool up = false;
      for (const auto& fd : fields) {
        if (fd.cur < fd.prev) {
          throw PlanError(tag + " shrinks " + factor_name(f) + " (" + fd.name + " " + fmt(fd.prev) + " -> " +
                          fmt(fd.cur) + ")");
        }
        up = up || fd.cur > fd.prev;
      }
      if (up) grew.push_back(f);
    };
    check(Factor::Data, {{"sequences", double(p.data_volume()), double(s.data_volume())}});
    check(Factor::Model, model_fields(p.model, s.model));
    check(Factor::Resolution, resolution_fields(p.model, s.model));
    for (Factor f : {Factor::Data, Factor::Model, Factor::Resolution}) {
      const bool declared = std::find(s.enlarges.begin(), s.enlarges.end(), f) != s.enlarges.end();
      const bool actual = std::find(grew.begin(), grew.end(), f) != grew.end();
      if (declared && !actual) throw PlanError(tag + " declares " + factor_name(f) + " enlarged but it does not grow");
      if (!declared && actual) throw PlanError(tag + " enlarges " + factor_name(f) + " without declaring it");
    }
  }
  return {std::move(stages), seed};
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

struct BlobEntry {
  std::string name;
  const ad::Tensor<float>* tensor;
  bool inference;
};

std::vector<BlobEntry> blob_order(const Checkpoint& c) {
  std::vector<BlobEntry> out;
  for (const auto& [name, t] : c.model.params) out.push_back({name, &t, true});
  for (const auto& [name, t] : c.adapter) out.push_back({name, &t, false});
  return out;
}

}  // namespace

std::string Checkpoint::digest() const {
  Fnv1a h;
  for (const auto& e : blob_order(*this)) h.update_values(std::span<const float>(e.tensor->data));
  return h.hex();
}

fs::path manifest_path(const fs::path& dir, const std::string& id) { return dir / (id + ".manifest.json"); }

void save_checkpoint(const Checkpoint& c, const fs::path& dir) {
  if (c.id.empty()) throw ContractViolation("save_checkpoint: checkpoint without id");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const fs::path blob = dir / (c.id + ".params.bin");
  json index = json::array();
  std::uint64_t offset = 0;
  {
    std::ofstream os(blob, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + blob.string());
    for (const auto& e : blob_order(c)) {
      const auto bytes = e.tensor->data.size() * sizeof(float);
      os.write(reinterpret_cast<const char*>(e.tensor->data.data()), static_cast<std::streamsize>(bytes));
      index.push_back({{"name", e.name}, {"offset", offset}, {"shape", e.tensor->shape}, {"inference", e.inference}});
      offset += bytes;
    }
    if (!os) throw IoError("write failed: " + blob.string());
  }
  json m;
  m["format"] = "progtrack-checkpoint/1";
  m["id"] = c.id;
  m["model"] = io::to_json(c.model.config);
  m["training"] = io::to_json(c.training);
  m["lineage"] = c.lineage;
  m["teacher_id"] = c.teacher_id;
  m["dataset_digest"] = c.dataset_digest;
  m["metrics"] = c.metrics;
  m["params_digest"] = c.digest();
  m["parameter_count"] = ad::count_parameters(c.model.params);
  m["blob"] = blob.filename().string();
  m["blob_bytes"] = offset;
  m["tensors"] = index;
  io::write_json_file(m, manifest_path(dir, c.id).string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  fs::path mpath = path;
  if (mpath.extension() != ".json") mpath = fs::path(path.string() + ".manifest.json");
  const json m = io::read_json_file(mpath.string());
  Checkpoint c;
  try {
    c.id = m.at("id").get<std::string>();
    c.model.config = io::parse<model::TrackerConfig>(m.at("model"), "model");
    c.training = io::parse<train::DTConfig>(m.at("training"), "training");
    c.lineage = m.at("lineage").get<std::vector<std::string>>();
    c.teacher_id = m.at("teacher_id").get<std::string>();
    c.dataset_digest = m.at("dataset_digest").get<std::string>();
    c.metrics = m.at("metrics");
  } catch (const json::exception& e) {
    throw IntegrityError("malformed checkpoint manifest " + mpath.string() + ": " + e.what());
  }
  const fs::path blob = mpath.parent_path() / m.at("blob").get<std::string>();
  std::ifstream is(blob, std::ios::binary);
  if (!is) throw IoError("cannot open parameter blob " + blob.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto expected = m.at("blob_bytes").get<std::uint64_t>();
  if (bytes.size() != expected) {
    throw IntegrityError("parameter blob " + blob.string() + " has " + std::to_string(bytes.size()) +
                         " bytes, manifest says " + std::to_string(expected));
  }
  for (const auto& e : m.at("tensors")) {
    ad::Shape shape = e.at("shape").get<ad::Shape>();
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto n = static_cast<std::uint64_t>(ad::numel(shape));
    if (offset + n * sizeof(float) > bytes.size()) throw IntegrityError("tensor index runs past the blob end");
    std::vector<float> values(n);
    std::memcpy(values.data(), bytes.data() + offset, n * sizeof(float));
    auto& dst = e.at("inference").get<bool>() ? c.model.params : c.adapter;
    dst.emplace(e.at("name").get<std::string>(), ad::Tensor<float>(std::move(shape), std::move(values)));
  }
  if (c.digest() != m.at("params_digest").get<std::string>()) {
    throw IntegrityError("parameter digest mismatch for " + blob.string());
  }
  return c;
}

// ---------------------------------------------------------------------------
// growth and runs

std::uint64_t init_seed(std::uint64_t run_seed) { return seed_split(run_seed, 11); }
std::uint64_t training_seed(std::uint64_t run_seed) { return seed_split(run_seed, 12); }
std::uint64_t stage_seed(std::uint64_t plan_seed, int stage) {
  return stage == 0 ? plan_seed : seed_split(plan_seed, 1000 + static_cast<std::uint64_t>(stage));
}

GrowResult grow(const Checkpoint& prev, const StageSpec& spec, std::uint64_t seed) {
  spec.model.validate();
  prev.model.config.validate();
  GrowResult g;
  g.teacher.config = prev.model.config;
  g.teacher.params = prev.model.params;
  const auto layers = train::resolve_layers(spec.training.feature_layers, spec.model.num_layers);
  g.teacher.adapter = train::make_adapter(prev.model.config, spec.model, layers);
  g.student_init = model::init_params<float>(spec.model, seed);
  return g;
}

namespace {

std::string datasets_digest(const std::vector<data::DatasetSpec>& specs) {
  Fnv1a h;
  for (const auto& d : specs) h.update(data::digest(d));
  return h.hex();
}

}  // namespace

eval::EvalReport evaluate(const model::ModelSnapshot& model, const std::vector<data::DatasetSpec>& suites,
                          const eval::InferConfig& infer, int threads) {
  std::vector<eval::SuiteResult> results;
  for (const auto& s : suites) {
    const auto seqs = data::generate_dataset(s, threads);
    results.push_back(eval::evaluate_suite(model, s.name, seqs, infer));
  }
  return eval::bench_aggregate(std::move(results));
}

RunResult run_training(const model::TrackerConfig& cfg, const std::vector<data::DatasetSpec>& data,
                       train::DTConfig training, std::uint64_t run_seed, const Checkpoint* teacher,
                       const RunOptions& opt) {
  cfg.validate();
  if (data.empty()) throw ContractViolation("run_training: no training data");
  training.seed = training_seed(run_seed);

  std::vector<std::vector<data::Sequence>> sets;
  for (const auto& d : data) sets.push_back(data::generate_dataset(d, opt.threads));
  train::TrainingData td;
  for (const auto& s : sets) td.datasets.emplace_back(s);

  std::optional<GrowResult> grown;
  ad::ParamSet<float> init;
  if (teacher != nullptr) {
    StageSpec spec;
    spec.model = cfg;
    spec.training = training;
    grown = grow(*teacher, spec, init_seed(run_seed));
    init = grown->student_init;
  } else {
    init = model::init_params<float>(cfg, init_seed(run_seed));
  }
  const train::TeacherHandle* th = grown ? &grown->teacher : nullptr;
  const train::TrainResult tr = opt.precision == Precision::F64 ? train::train<double>(init, cfg, th, td, training)
                                                                 : train::train<float>(init, cfg, th, td, training);

  RunResult r;
  auto& c = r.checkpoint;
  c.model = {cfg, tr.params};
  c.adapter = tr.adapter;
  c.training = training;
  c.dataset_digest = datasets_digest(data);
  if (teacher != nullptr) {
    c.teacher_id = teacher->id;
    c.lineage = teacher->lineage;
  }
  c.id = opt.id_prefix + "-" + c.digest().substr(0, 12);
  c.lineage.push_back(c.id);
  r.log = tr.log;
  if (!opt.eval_suites.empty()) {
    r.report = evaluate(c.model, opt.eval_suites, opt.infer, opt.threads);
    r.report->checkpoint_id = c.id;
    json suites = json::array();
    for (const auto& s : r.report->suites) {
      suites.push_back({{"suite", s.suite},
                        {"trajectories", s.trajectories},
                        {"auc", s.auc},
                        {"precision", s.precision},
                        {"norm_precision", s.norm_precision}});
    }
    c.metrics = {{"mean_auc", r.report->mean_auc},
                 {"mean_precision", r.report->mean_precision},
                 {"mean_norm_precision", r.report->mean_norm_precision},
                 {"suites", suites}};
  }
  return r;
}

std::vector<Checkpoint> run_plan(const StagePlan& plan, const fs::path& out_dir, const RunOptions& opt) {
  std::vector<Checkpoint> done;
  for (const auto& stage : plan.stages) {
    try {
      std::optional<Checkpoint> explicit_teacher;
      const Checkpoint* teacher = nullptr;
      if (stage.teacher == TeacherSource::Previous) {
        teacher = &done.back();
      } else if (stage.teacher == TeacherSource::Explicit) {
        const fs::path local = manifest_path(out_dir, stage.teacher_id);
        explicit_teacher = load_checkpoint(fs::exists(local) ? local : fs::path(stage.teacher_id));
        teacher = &*explicit_teacher;
      }
      train::DTConfig training = stage.training;
      if (teacher == nullptr) training.lambda_transfer = train::Schedule::constant(0.0);
      RunOptions o = opt;
      o.id_prefix = "stage" + std::to_string(stage.index);
      RunResult r = run_training(stage.model, stage.data, training, stage_seed(plan.seed, stage.index), teacher, o);
      save_checkpoint(r.checkpoint, out_dir);
      train::write_log_csv(r.log, out_dir / (r.checkpoint.id + ".train.csv"));
      if (r.report) {
        eval::write_report_csv(*r.report, out_dir / (r.checkpoint.id + ".eval.csv"));
      }
      done.push_back(std::move(r.checkpoint));
    } catch (const PlanError&) {
      throw;
    } catch (const std::exception& e) {
      throw PlanError("stage " + std::to_string(stage.index) + " failed: " + e.what());
    }
  }
  return done;
}

}  // namespace progtrack::scale
