#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "progtrack/autodiff/tensor.hpp"
#include "progtrack/rng.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("progtrack-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

template <class Real = double>
progtrack::ad::Tensor<Real> random_tensor(progtrack::ad::Shape shape, progtrack::Rng& rng, double lo = -1.0,
                                          double hi = 1.0) {
  progtrack::ad::Tensor<Real> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<Real>(progtrack::uniform(rng, lo, hi));
  return t;
}

}  // namespace testing
