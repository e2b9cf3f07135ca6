#include <doctest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "progtrack/cli/app.hpp"
#include "progtrack/errors.hpp"
#include "progtrack/io/json_io.hpp"

using namespace progtrack;
using namespace progtrack::cli;
using nlohmann::json;

namespace {

// Desk-sized run: 1-layer width-8 tracker, a handful of steps, one small eval suite.
json tiny_config_json(const std::filesystem::path& out) {
  const json dataset = {{"sequences", 2}, {"length", 6}, {"canvas", 64}, {"min_size", 8}, {"max_size", 14}};
  json suite = dataset;
  suite["name"] = "plain";
  suite["seed"] = 9;
  return {{"seed", 3},
          {"output_dir", out.string()},
          {"model",
           {{"embed_dim", 8}, {"num_layers", 1}, {"num_heads", 2}, {"mlp_ratio", 2.0}, {"template_res", 16},
            {"search_res", 32}, {"head_hidden_dim", 8}}},
          {"training", {{"epochs", 2}, {"steps_per_epoch", 2}, {"batch_size", 2}, {"max_frame_gap", 3}}},
          {"data", {{"train", json::array({dataset})}, {"eval", json::array({suite})}}}};
}

std::string parse_error_field(const json& j, const Overrides& ov = {}) {
  try {
    parse_config(j, ov);
  } catch (const ParseError& e) {
    return e.field() + " | " + e.what();
  }
  return "";
}

int run(const std::string& cmd, const RunConfig& cfg, std::string* err = nullptr, bool force = false) {
  std::ostringstream out, e;
  const int code = run_command(cmd, cfg, force, out, e);
  if (err) *err = e.str();
  return code;
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::vector<std::string> v;
  for (std::string l; std::getline(is, l);) v.push_back(l);
  return v;
}

std::filesystem::path only_manifest(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> found;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().string().ends_with(".manifest.json")) found.push_back(e.path());
  REQUIRE(found.size() == 1);
  return found[0];
}

}  // namespace

TEST_CASE("an empty config resolves to the defaults") {
  const auto c = parse_config(json::object());
  CHECK(c.training.loss_weights.iou == 2.0);
  CHECK(c.training.loss_weights.l1 == 5.0);
  CHECK(c.training.loss_weights.cls == 1.0);
  CHECK(c.training.lambda_align == 0.1);
  CHECK(c.training.lambda_transfer == train::Schedule::step_drop(0.5, 0.0, 0.9));
  CHECK(c.training.mask_ratio == train::Schedule::linear(0.05, 0.4));
  CHECK(c.training.lr_drop_fraction == 0.8);
  CHECK(c.training.lr_drop_factor == 0.1);
  CHECK(c.training.crop.template_factor == 2.0);
  CHECK(c.training.crop.search_factor == 4.0);
  CHECK(c.model == model::TrackerConfig{});
  CHECK(c.infer.gamma == 1.0);
  CHECK(c.eval_suites.size() == 3);
  CHECK(c.precision == scale::Precision::F32);
}

TEST_CASE("overrides apply last") {
  Overrides ov;
  ov.mask_end = 0.5;
  ov.seed = 12;
  ov.lambda_align = 0.3;
  ov.epochs = 7;
  ov.set = {"model.num_layers=4"};
  const json file = {{"seed", 1}, {"training", {{"epochs", 2}}}};
  const auto c = parse_config(file, ov);
  CHECK(c.training.mask_ratio.end == 0.5);
  CHECK(c.training.mask_ratio.start == 0.05);
  CHECK(c.seed == 12);
  CHECK(c.training.lambda_align == 0.3);
  CHECK(c.training.epochs == 7);
  CHECK(c.model.num_layers == 4);
  CHECK(parse_config(file).training.epochs == 2);
}

TEST_CASE("unknown keys are rejected with a suggestion") {
  const auto msg = parse_error_field({{"training", {{"lamda_align", 0.2}}}});
  CHECK(msg.find("training.lamda_align") != std::string::npos);
  CHECK(msg.find("lambda_align") != std::string::npos);
  CHECK(parse_error_field({{"modle", json::object()}}).find("model") != std::string::npos);
}

TEST_CASE("type and constraint violations name the field") {
  CHECK(parse_error_field({{"seed", "three"}}).rfind("seed", 0) == 0);
  CHECK(parse_error_field({{"precision", "f16"}}).rfind("precision", 0) == 0);
  CHECK(parse_error_field({{"training", {{"lambda_align", -1}}}}).rfind("training", 0) == 0);
  CHECK(parse_error_field({{"model", {{"search_res", 60}}}}).rfind("model", 0) == 0);
  Overrides ov;
  ov.mask_end = 1.5;
  CHECK_FALSE(parse_error_field(json::object(), ov).empty());
}

TEST_CASE("resolved config round-trips through its JSON echo") {
  const auto c = parse_config({{"seed", 5}, {"model", {{"num_layers", 3}}}});
  const auto again = parse_config(c.to_json());
  CHECK(again.to_json() == c.to_json());
}

TEST_CASE("train is reproducible and writes its artifacts") {
  testing::TempDir dir("cli-train");
  const auto a = parse_config(tiny_config_json(dir.path() / "a"));
  const auto b = parse_config(tiny_config_json(dir.path() / "b"));
  REQUIRE(run("train", a) == 0);
  REQUIRE(run("train", b) == 0);
  const auto ma = only_manifest(dir.path() / "a");
  const auto mb = only_manifest(dir.path() / "b");
  CHECK(ma.filename() == mb.filename());
  CHECK(scale::load_checkpoint(ma).digest() == scale::load_checkpoint(mb).digest());
  for (const char* f : {"config.json", "train_log.csv", "eval.csv", "eval_curve.csv"})
    CHECK(std::filesystem::exists(dir.path() / "a" / f));
  CHECK(parse_config(io::read_json_file((dir.path() / "a" / "config.json").string())).to_json().at("model") ==
        a.to_json().at("model"));

  std::string err;
  CHECK(run("train", a, &err) == 4);
  CHECK(json::parse(err).at("error").at("type") == "io_error");
  CHECK(run("train", a, nullptr, true) == 0);

  auto guided = a;
  guided.output_dir = (dir.path() / "guided").string();
  guided.teacher = ma.string();
  REQUIRE(run("train", guided) == 0);
  CHECK(scale::load_checkpoint(only_manifest(dir.path() / "guided")).teacher_id ==
        scale::load_checkpoint(ma).id);

  auto ev = a;
  ev.output_dir = (dir.path() / "eval").string();
  ev.checkpoint = ma.string();
  REQUIRE(run("eval", ev) == 0);
  CHECK(lines(dir.path() / "eval" / "eval.csv").size() == 3);
}

TEST_CASE("sweep over three layer counts writes three trend rows") {
  testing::TempDir dir("cli-sweep");
  Overrides ov;
  ov.factor = "layers";
  ov.values = "1,2,4";
  const auto c = parse_config(tiny_config_json(dir.path() / "s"), ov);
  REQUIRE(run("sweep", c) == 0);
  const auto trend = lines(dir.path() / "s" / "trend.csv");
  REQUIRE(trend.size() == 4);
  CHECK(trend[0] == "factor,value,checkpoint,mean_auc,mean_precision,mean_norm_precision");
  CHECK(trend[1].rfind("layers,1,", 0) == 0);
  CHECK(trend[3].rfind("layers,4,", 0) == 0);
  for (const char* sub : {"layers-1", "layers-2", "layers-4"})
    CHECK(std::filesystem::exists(dir.path() / "s" / sub / "config.json"));

  auto report = c;
  report.output_dir = (dir.path() / "r").string();
  report.report_inputs = {(dir.path() / "s" / "trend.csv").string(), (dir.path() / "s" / "layers-1" / "eval.csv").string()};
  REQUIRE(run("report", report) == 0);
  // header, three trend rows, the suite row and the mean row
  CHECK(lines(dir.path() / "r" / "report.csv").size() == 6);
  CHECK(std::filesystem::exists(dir.path() / "r" / "report.txt"));

  Overrides bad = ov;
  bad.factor = "colour";
  auto wrong = parse_config(tiny_config_json(dir.path() / "bad"), bad);
  std::string err;
  CHECK(run("sweep", wrong, &err) == 2);
  CHECK(json::parse(err).at("error").at("field") == "sweep.factor");
}

TEST_CASE("plan-run with three stages records a lineage of three") {
  testing::TempDir dir("cli-plan");
  auto j = tiny_config_json(dir.path() / "p");
  const json small = {{"sequences", 2}, {"length", 6}, {"canvas", 64}, {"min_size", 8}, {"max_size", 14}};
  json more = small;
  more["sequences"] = 4;
  json wide = j["model"];
  wide["embed_dim"] = 16;
  j["plan"] = {{"stages",
                {{{"data", json::array({small})}, {"teacher", "none"}},
                 {{"data", json::array({more})}, {"enlarges", {"data"}}},
                 {{"data", json::array({more})}, {"model", wide}, {"enlarges", {"model"}}}}}};
  const auto c = parse_config(j);
  REQUIRE(run("plan-run", c) == 0);
  const auto rows = lines(dir.path() / "p" / "lineage.csv");
  REQUIRE(rows.size() == 4);
  for (int k = 1; k <= 3; ++k) {
    std::stringstream ss(rows[k]);
    std::vector<std::string> cells;
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    CHECK(std::count(cells[3].begin(), cells[3].end(), ';') == k - 1);
  }

  auto shrink = j;
  shrink["output_dir"] = (dir.path() / "shrink").string();
  shrink["plan"]["stages"][2]["data"] = json::array({small});
  shrink["plan"]["stages"][2]["enlarges"] = {"model"};
  std::string err;
  CHECK(run("plan-run", parse_config(shrink), &err) == 3);
}

TEST_CASE("error records carry the documented exit codes") {
  testing::TempDir dir("cli-errors");
  std::string err;
  auto c = parse_config(tiny_config_json(dir.path() / "e1"));
  CHECK(run("eval", c, &err) == 2);
  CHECK(json::parse(err).at("error").at("field") == "checkpoint");
  CHECK(std::filesystem::exists(dir.path() / "e1" / "error.json"));

  c.output_dir = (dir.path() / "e2").string();
  c.checkpoint = (dir.path() / "nowhere").string();
  CHECK(run("eval", c, &err) == 4);

  c.output_dir = (dir.path() / "e3").string();
  CHECK(run("bogus", c, &err) == 3);
}

TEST_CASE("main_entry maps command-line problems to exit 2") {
  testing::TempDir dir("cli-main");
  auto call = [](std::vector<std::string> args) {
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return main_entry(static_cast<int>(argv.size()), argv.data());
  };
  CHECK(call({"progtrack", "--no-such-flag", "train"}) == 2);
  CHECK(call({"progtrack", "--precision", "f16", "train"}) == 2);
  const auto cfg_path = dir.path() / "bad.json";
  std::ofstream(cfg_path) << R"({"training": {"lamda_align": 0.2}})";
  CHECK(call({"progtrack", "-c", cfg_path.string(), "-o", (dir.path() / "o").string(), "train"}) == 2);
}
