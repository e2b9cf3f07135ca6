#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "progtrack/scale/progressive.hpp"

namespace progtrack::cli {

struct SweepConfig {
  std::string factor;  // layers | dim | data | resolution
  std::vector<double> values;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir;  // run directory; empty means <root>/<command>-<config digest>
  int threads = 1;
  scale::Precision precision = scale::Precision::F32;
  model::TrackerConfig model;
  train::DTConfig training;
  std::vector<data::DatasetSpec> train_data;
  std::vector<data::DatasetSpec> eval_suites;
  eval::InferConfig infer;
  std::string teacher;     // checkpoint for guided training
  std::string checkpoint;  // checkpoint to evaluate
  nlohmann::json plan = nlohmann::json::object();  // {"stages": [...]}, resolved by plan-run
  SweepConfig sweep;
  std::vector<std::string> report_inputs;

  nlohmann::json to_json() const;
};

RunConfig default_config();
std::vector<data::DatasetSpec> default_eval_suites();

// Command-line overrides, applied on top of the file before validation.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> precision;
  std::optional<std::string> output_dir;
  std::optional<double> mask_start, mask_end, lambda_align;
  std::optional<int> epochs, steps;
  std::optional<std::string> factor;
  std::optional<std::string> values;  // comma separated
  std::vector<std::string> inputs;
  std::vector<std::string> set;  // dotted.key=value, value parsed as JSON when possible
};

// Unknown keys, type mismatches and constraint violations raise ParseError with the
// dotted path of the offending field.
RunConfig parse_config(const nlohmann::json& file, const Overrides& overrides = {});
RunConfig parse_config_file(const std::string& path, const Overrides& overrides = {});

std::vector<scale::StageSpec> resolve_stages(const RunConfig& cfg);

// Executes one subcommand. Returns the process exit status; failures print a JSON
// error record on `err` (and into the run directory when it exists).
int run_command(const std::string& command, const RunConfig& cfg, bool force, std::ostream& out, std::ostream& err);

// Full command-line entry point.
int main_entry(int argc, char** argv);

}  // namespace progtrack::cli
