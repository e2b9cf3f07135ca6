#pragma once

#include <algorithm>
#include <cmath>

namespace progtrack {

// Center/size box in normalized units of some reference frame (search crop or canvas).
struct NormBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  bool valid() const { return cx >= 0 && cx <= 1 && cy >= 0 && cy <= 1 && w > 0 && w <= 1 && h > 0 && h <= 1; }
  bool operator==(const NormBox&) const = default;
};

inline NormBox from_corners(double x1, double y1, double x2, double y2) {
  return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

// Plain IoU of two boxes in the same frame. Areas use corner differences so that
// identical boxes give exactly 1.
inline double iou(const NormBox& a, const NormBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (a.x2() - a.x1()) * (a.y2() - a.y1());
  const double area_b = (b.x2() - b.x1()) * (b.y2() - b.y1());
  const double uni = area_a + area_b - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace progtrack
