#pragma once

#include "progtrack/autodiff/tensor.hpp"
#include "progtrack/model/tracker.hpp"

namespace progtrack::model {

// Inference-ready model: architecture plus 32-bit parameters.
struct ModelSnapshot {
  TrackerConfig config;
  ad::ParamSet<float> params;
};

}  // namespace progtrack::model
