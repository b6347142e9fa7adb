#pragma once

// Test-only oracles, independent of the implementation paths they check.

#include <algorithm>
#include <cmath>
#include <vector>

#include "gridda/eval.hpp"
#include "gridda/geometry.hpp"

namespace oracles {

// Rasterized IoU: samples a resolution^2 grid over the joint bounding
// rectangle and counts cells whose centers fall inside both boxes; areas of
// the boxes themselves are analytic.
inline double rasterized_iou(const gridda::geom::OrientedBox& a, const gridda::geom::OrientedBox& b,
                             int resolution = 2048) {
  auto ca = a.corners();
  auto cb = b.corners();
  double lo_x = 1e30, hi_x = -1e30, lo_y = 1e30, hi_y = -1e30;
  for (const auto& c : ca) {
    lo_x = std::min(lo_x, c.x);
    hi_x = std::max(hi_x, c.x);
    lo_y = std::min(lo_y, c.y);
    hi_y = std::max(hi_y, c.y);
  }
  for (const auto& c : cb) {
    lo_x = std::min(lo_x, c.x);
    hi_x = std::max(hi_x, c.x);
    lo_y = std::min(lo_y, c.y);
    hi_y = std::max(hi_y, c.y);
  }
  const double dx = (hi_x - lo_x) / resolution;
  const double dy = (hi_y - lo_y) / resolution;
  if (dx <= 0 || dy <= 0) return 0.0;

  const double cos_a = std::cos(a.theta), sin_a = std::sin(a.theta);
  const double cos_b = std::cos(b.theta), sin_b = std::sin(b.theta);
  long long inter = 0;
  for (int iy = 0; iy < resolution; ++iy) {
    const double y = lo_y + (iy + 0.5) * dy;
    for (int ix = 0; ix < resolution; ++ix) {
      const double x = lo_x + (ix + 0.5) * dx;
      const double ax = x - a.x, ay = y - a.y;
      const double la = ax * cos_a + ay * sin_a, ma = -ax * sin_a + ay * cos_a;
      if (std::abs(la) > 0.5 * a.w || std::abs(ma) > 0.5 * a.h) continue;
      const double bx = x - b.x, by = y - b.y;
      const double lb = bx * cos_b + by * sin_b, mb = -bx * sin_b + by * cos_b;
      if (std::abs(lb) > 0.5 * b.w || std::abs(mb) > 0.5 * b.h) continue;
      ++inter;
    }
  }
  const double inter_area = static_cast<double>(inter) * dx * dy;
  const double uni = a.area() + b.area() - inter_area;
  return uni > 0 ? inter_area / uni : 0.0;
}

// AP40 from first principles: for every recall position scan every operating
// point of the PR staircase for the best precision at recall >= r_k.
inline double brute_force_ap40(std::vector<gridda::eval::ScoredFlag> seq, int num_gt) {
  std::stable_sort(seq.begin(), seq.end(),
                   [](const gridda::eval::ScoredFlag& x, const gridda::eval::ScoredFlag& y) { return x.score > y.score; });
  double acc = 0;
  for (int k = 1; k <= 40; ++k) {
    const double r = k / 40.0;
    double best = 0;
    int tp = 0, fp = 0;
    for (const auto& s : seq) {
      if (s.tp)
        ++tp;
      else
        ++fp;
      const double recall = static_cast<double>(tp) / num_gt;
      const double precision = static_cast<double>(tp) / (tp + fp);
      if (recall >= r) best = std::max(best, precision);
    }
    acc += best;
  }
  return 100.0 * acc / 40.0;
}

}  // namespace oracles
