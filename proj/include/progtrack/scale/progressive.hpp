#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "progtrack/data/synth.hpp"
#include "progtrack/eval/bench.hpp"
#include "progtrack/model/snapshot.hpp"
#include "progtrack/train/dt.hpp"

namespace progtrack::scale {

enum class Factor { Data, Model, Resolution };
const char* factor_name(Factor f);
Factor parse_factor(const std::string& s);  // "data" | "model" | "resolution"

enum class TeacherSource { None, Previous, Explicit };
const char* teacher_source_name(TeacherSource t);

enum class Precision { F32, F64 };

struct StageSpec {
  int index = 0;
  model::TrackerConfig model;
  std::vector<data::DatasetSpec> data{data::DatasetSpec{}};
  train::DTConfig training;
  TeacherSource teacher = TeacherSource::Previous;
  std::string teacher_id;  // checkpoint manifest path for TeacherSource::Explicit
  std::vector<Factor> enlarges;

  int data_volume() const;
};

struct StagePlan {
  std::vector<StageSpec> stages;
  std::uint64_t seed = 0;
};

// Checks monotone growth (no stage shrinks data volume, any model width/depth field, or
// input resolution relative to its predecessor) and that each stage's declared
// `enlarges` set is exactly the set of factors that grew. Stage 0 may not use a
// previous-stage teacher. Failures are PlanErrors naming the stage and factor.
StagePlan plan_stages(std::vector<StageSpec> stages, std::uint64_t seed);

struct Checkpoint {
  std::string id;
  model::ModelSnapshot model;
  ad::ParamSet<float> adapter;  // training-only, never used for inference
  train::DTConfig training;
  std::vector<std::string> lineage;  // ancestors first, self last
  std::string teacher_id;
  std::string dataset_digest;
  nlohmann::json metrics = nlohmann::json::object();

  // FNV-1a over the parameter blob exactly as written to disk.
  std::string digest() const;
};

// <dir>/<id>.manifest.json and <dir>/<id>.params.bin (float32 little-endian, model
// tensors in name order followed by adapter tensors).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
// Accepts either the manifest path or "<dir>/<id>". Throws IntegrityError when the blob
// length or digest disagrees with the manifest.
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::filesystem::path manifest_path(const std::filesystem::path& dir, const std::string& id);

struct GrowResult {
  train::TeacherHandle teacher;
  ad::ParamSet<float> student_init;
};

// Teacher wraps prev (frozen); the student starts fresh at spec.model; adapters bridge
// the selected layers.
GrowResult grow(const Checkpoint& prev, const StageSpec& spec, std::uint64_t init_seed);

// Seeds used by a run seeded with `seed`. A plan's stage k runs with stage_seed(seed, k).
std::uint64_t init_seed(std::uint64_t run_seed);
std::uint64_t training_seed(std::uint64_t run_seed);
std::uint64_t stage_seed(std::uint64_t plan_seed, int stage);

struct RunOptions {
  Precision precision = Precision::F32;
  std::vector<data::DatasetSpec> eval_suites;  // empty: skip evaluation
  eval::InferConfig infer;
  std::string id_prefix = "run";
  int threads = 0;  // data generation; <= 0 means all hardware threads
};

struct RunResult {
  Checkpoint checkpoint;
  std::vector<train::LogRow> log;
  std::optional<eval::EvalReport> report;
};

// One training run (naive or guided) followed by evaluation; the building block of
// both the train command and each plan stage.
RunResult run_training(const model::TrackerConfig& cfg, const std::vector<data::DatasetSpec>& data,
                       train::DTConfig training, std::uint64_t run_seed, const Checkpoint* teacher,
                       const RunOptions& opt);

eval::EvalReport evaluate(const model::ModelSnapshot& model, const std::vector<data::DatasetSpec>& suites,
                          const eval::InferConfig& infer, int threads = 0);

// Runs stages in order, writing each checkpoint (plus its training log and eval CSV)
// to out_dir as soon as it is complete. A failing stage raises PlanError after the
// finished checkpoints are on disk.
std::vector<Checkpoint> run_plan(const StagePlan& plan, const std::filesystem::path& out_dir, const RunOptions& opt);

}  // namespace progtrack::scale
