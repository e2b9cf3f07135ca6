#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "progtrack/box.hpp"
#include "progtrack/image.hpp"
#include "progtrack/rng.hpp"

namespace progtrack::data {

enum class ShapeKind { Disc, Rectangle, Triangle };

const char* shape_name(ShapeKind k);

struct TargetDescriptor {
  ShapeKind shape = ShapeKind::Disc;
  std::array<double, 3> color{0.9, 0.2, 0.2};
  double min_size = 12.0;  // pixels
  double max_size = 24.0;
};

struct MotionModel {
  double min_speed = 0.5;  // pixels per frame
  double max_speed = 3.0;
  double direction_change_prob = 0.05;
};

struct SequenceSpec {
  int length = 40;
  int canvas = 128;
  TargetDescriptor target;
  int distractors = 2;
  double occluder_prob = 0.05;
  MotionModel motion;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Sequence {
  std::string name;
  int canvas = 0;
  std::vector<std::vector<std::uint8_t>> frames;  // canvas x canvas x 3 RGB8
  std::vector<NormBox> boxes;                     // canvas-normalized
  std::vector<std::uint8_t> visible;
  std::vector<double> occlusion;  // generator's coverage record; empty when loaded from disk

  int length() const { return static_cast<int>(frames.size()); }
  Image frame_image(int t) const;
  std::array<double, 3> mean_color(int t) const;
};

// Deterministic under spec.seed. Targets reflect off the canvas border; frame 0 is never
// occluded; visible[t] is false exactly when the occluder covers more than half the target.
Sequence generate_sequence(const SequenceSpec& spec);

// Container: "DTSQ1", u32 frame count, u32 H, u32 W (little-endian), raw RGB8 frames,
// then a CSV block "frame,cx,cy,w,h,visible".
void write_sequence(const Sequence& seq, const std::filesystem::path& path);
Sequence read_sequence(const std::filesystem::path& path);

// Recipe for a family of sequences; expand() draws per-sequence specs from it. The
// sequence i spec depends only on (seed, i), so smaller counts are prefixes of larger ones.
struct DatasetSpec {
  std::string name = "synth";
  int sequences = 64;
  int length = 40;
  int canvas = 128;
  double min_size = 12.0;
  double max_size = 24.0;
  int min_distractors = 0;
  int max_distractors = 3;
  double occluder_prob = 0.05;
  double min_speed = 0.5;
  double max_speed = 3.0;
  double direction_change_prob = 0.05;
  std::uint64_t seed = 0;
};

std::vector<SequenceSpec> expand(const DatasetSpec& spec);
// threads <= 0 uses every hardware thread; output does not depend on the thread count.
std::vector<Sequence> generate_dataset(const DatasetSpec& spec, int threads = 0);
std::string digest(const DatasetSpec& spec);
std::string digest(std::span<const SequenceSpec> specs);

struct DatasetManifest {
  std::string name;
  std::vector<std::string> files;  // relative to the manifest's directory
  std::vector<int> lengths;
  std::string specs_digest;
};

// Writes <out_dir>/<name>/<name>_NNNN.seq plus <out_dir>/<name>/manifest.json.
DatasetManifest build_dataset(const std::string& name, std::span<const SequenceSpec> specs,
                              const std::filesystem::path& out_dir, int threads = 0);
DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
std::vector<Sequence> load_dataset(const std::filesystem::path& manifest_path);

struct SampleIndex {
  int dataset = 0;
  int trajectory = 0;
};

// Two-stage draw: dataset uniform (or by `weights`), then trajectory uniform within it.
SampleIndex balanced_sample(std::span<const int> dataset_sizes, Rng& rng, std::span<const double> weights = {});

// Square crop window in canvas pixels.
struct CropWindow {
  double cx = 0, cy = 0, side = 0;
};

CropWindow window_around(const NormBox& box, int canvas, double factor);
// Bilinear resample of the window to out_res x out_res; outside the canvas is the frame's mean color.
Image crop_resize(const Sequence& seq, int t, const CropWindow& window, int out_res);
NormBox to_crop(const NormBox& canvas_box, const CropWindow& window, int canvas);
NormBox from_crop(const NormBox& crop_box, const CropWindow& window, int canvas);

struct CropOptions {
  double template_factor = 2.0;
  double search_factor = 4.0;
  int template_res = 32;
  int search_res = 64;
  // Search-window jitter: center moves by up to +-center_jitter/2 target sides,
  // size scales by exp(N(0, scale_jitter)). Zero means centered on the target.
  double center_jitter = 0.0;
  double scale_jitter = 0.0;
};

struct CropPair {
  Image templ;
  Image search;
  NormBox gt;  // in search-crop units
  CropWindow template_window;
  CropWindow search_window;
};

// Empty when either frame is invisible (caller resamples). Jitter draws from `rng`
// and is only applied when the options ask for it.
std::optional<CropPair> crop_pair(const Sequence& seq, int t_template, int t_search, const CropOptions& opt,
                                  Rng* rng = nullptr);

}  // namespace progtrack::data
