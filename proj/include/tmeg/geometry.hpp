#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "tmeg/pmd.hpp"

namespace tmeg {

// Intersection over union of two axis-aligned boxes; 0 when disjoint.
inline Real iou(const BoundingBox& a, const BoundingBox& b) {
  const Real iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const Real ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0;
  const Real inter = iw * ih;
  const Real uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0;
}

inline Real euclidean(std::span<const Real> u, std::span<const Real> v) {
  if (u.size() != v.size())
    throw ShapeError("euclidean: dimension mismatch " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  Real s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - v[i]) * (u[i] - v[i]);
  return std::sqrt(s);
}

}  // namespace tmeg
