#pragma once

// Rotated-box algebra: the 6-parameter box encoding, anchor grids, exact
// polygon-clipping IoU, NMS and anchor/ground-truth assignment.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gridda/common.hpp"

namespace gridda::geom {

constexpr double kPi = 3.14159265358979323846;

// Orientation is interpreted modulo pi: the encoding uses sin/cos of 2*theta
// and does not distinguish forward from backward.
inline double canonical_theta(double t) {
  t = std::fmod(t, kPi);
  if (t < 0) t += kPi;
  if (t >= kPi) t = 0;  // fmod rounding edge
  return t;
}

struct Vec2 {
  double x = 0, y = 0;
};

struct OrientedBox {
  double x = 0, y = 0;  // center, meters
  double w = 1, h = 1;  // extent along / across heading, meters
  double theta = 0;     // radians in [0, pi)

  OrientedBox() = default;
  OrientedBox(double x_, double y_, double w_, double h_, double theta_ = 0)
      : x(x_), y(y_), w(w_), h(h_), theta(canonical_theta(theta_)) {}

  double area() const { return w * h; }
  std::array<Vec2, 4> corners() const;
};

struct Anchor {
  double x = 0, y = 0;  // center, meters
  double w = 1, h = 1;  // meters
  int level = 0;        // pyramid index, 1-based (P1..P4)
  int cell_u = 0;       // feature-map column
  int cell_v = 0;       // feature-map row
  int slot = 0;         // anchor index within the cell, [0, A)
};

struct BoxEncoding {
  std::array<double, 6> t{};  // (t_x, t_y, t_w, t_h, t_s, t_c)
};

struct Detection {
  OrientedBox box;
  int class_id = 0;
  double score = 0;
};

BoxEncoding encode_box(const OrientedBox& b, const Anchor& a);
OrientedBox decode_box(const BoxEncoding& t, const Anchor& a);

double rotated_iou(const OrientedBox& a, const OrientedBox& b);

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

struct AnchorConfig {
  std::vector<int> basis = {8, 16, 32, 64};        // cells, per level P1..P4
  std::vector<int> strides = {2, 4, 8, 16};        // input cells per feature cell
  std::vector<double> scales = {1.0, 1.41421356237309515};
  std::vector<double> ratios = {0.5, 1.0, 2.0};    // w:h
  int per_cell() const { return static_cast<int>(scales.size() * ratios.size()); }
};

struct AnchorLevel {
  int level = 0;  // 1-based
  int fh = 0, fw = 0;
  std::vector<Anchor> anchors;  // row-major over (v, u, slot)
};

// Anchor sizes are defined in input-grid cells and converted to meters via the
// cell size; each anchor sits at the metric center of its feature-map cell.
std::vector<AnchorLevel> generate_anchors(const AnchorConfig& cfg, int grid_h, int grid_w, double cell_size);

struct AssignmentResult {
  // per anchor: >=0 matched gt index, -1 negative, -2 ignore
  std::vector<std::int32_t> labels;
  int n_pos = 0;

  static constexpr std::int32_t kNegative = -1;
  static constexpr std::int32_t kIgnore = -2;
};

// Positive if best IoU >= fg_thr (argmax gt, ties to lowest index), negative
// below bg_thr, ignore in between. Every gt without a positive claims its
// single best anchor (force match) when that IoU is > 0.
AssignmentResult assign_targets(const std::vector<Anchor>& anchors, const std::vector<OrientedBox>& gt_boxes,
                                double fg_thr, double bg_thr);

}  // namespace gridda::geom
