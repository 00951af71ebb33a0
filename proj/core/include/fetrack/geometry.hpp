#pragma once

#include <algorithm>
#include <cmath>

#include "fetrack/errors.hpp"

namespace fetrack {

/// Axis-aligned box, top-left convention, pixel units.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  bool valid() const { return w > 0.0 && h > 0.0; }

  bool operator==(const BBox& o) const = default;

  /// Clamp into [0,W]x[0,H] keeping a minimum extent.
  BBox clamped(double img_w, double img_h, double min_size = 1.0) const {
    BBox b = *this;
    b.w = std::clamp(b.w, min_size, img_w);
    b.h = std::clamp(b.h, min_size, img_h);
    b.x = std::clamp(b.x, 0.0, img_w - b.w);
    b.y = std::clamp(b.y, 0.0, img_h - b.h);
    return b;
  }
};

inline void require_valid(const BBox& b, const char* who) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) {
    throw BoxError(std::string(who) + ": degenerate box (w=" + std::to_string(b.w) +
                   ", h=" + std::to_string(b.h) + ")");
  }
}

}  // namespace fetrack
