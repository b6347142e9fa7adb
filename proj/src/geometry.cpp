#include "gridda/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace gridda::geom {

std::array<Vec2, 4> OrientedBox::corners() const {
  const double c = std::cos(theta), s = std::sin(theta);
  const double hw = 0.5 * w, hh = 0.5 * h;
  // (+w/2,+h/2), (-w/2,+h/2), (-w/2,-h/2), (+w/2,-h/2) rotated then shifted
  std::array<Vec2, 4> out;
  const double lx[4] = {hw, -hw, -hw, hw};
  const double ly[4] = {hh, hh, -hh, -hh};
  for (int i = 0; i < 4; ++i) {
    out[i].x = x + lx[i] * c - ly[i] * s;
    out[i].y = y + lx[i] * s + ly[i] * c;
  }
  return out;
}

BoxEncoding encode_box(const OrientedBox& b, const Anchor& a) {
  if (b.w <= 0 || b.h <= 0) throw Error("encode_box: box extents must be positive");
  if (a.w <= 0 || a.h <= 0) throw Error("encode_box: anchor extents must be positive");
  BoxEncoding e;
  e.t[0] = (b.x - a.x) / a.w;
  e.t[1] = (b.y - a.y) / a.h;
  e.t[2] = std::log(b.w / a.w);
  e.t[3] = std::log(b.h / a.h);
  e.t[4] = std::sin(2.0 * b.theta);
  e.t[5] = std::cos(2.0 * b.theta);
  return e;
}

OrientedBox decode_box(const BoxEncoding& t, const Anchor& a) {
  constexpr double kLogClamp = 8.0;  // exp overflow guard for raw network outputs
  const double tw = std::clamp(t.t[2], -kLogClamp, kLogClamp);
  const double th = std::clamp(t.t[3], -kLogClamp, kLogClamp);
  OrientedBox b;
  b.x = t.t[0] * a.w + a.x;
  b.y = t.t[1] * a.h + a.y;
  b.w = a.w * std::exp(tw);
  b.h = a.h * std::exp(th);
  // atan2(0,0) = 0 maps the degenerate (t_s,t_c)=(0,0) to theta=0
  b.theta = canonical_theta(0.5 * std::atan2(t.t[4], t.t[5]));
  return b;
}

namespace {

double shoelace_area(const std::vector<Vec2>& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    acc += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(acc);
}

// Clips poly against the half-plane left of edge a->b (counter-clockwise box).
void clip_edge(std::vector<Vec2>& poly, const Vec2& a, const Vec2& b, std::vector<Vec2>& out) {
  out.clear();
  const double ex = b.x - a.x, ey = b.y - a.y;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    const double dp = ex * (p.y - a.y) - ey * (p.x - a.x);
    const double dq = ex * (q.y - a.y) - ey * (q.x - a.x);
    if (dp >= 0) out.push_back(p);
    if ((dp > 0 && dq < 0) || (dp < 0 && dq > 0)) {
      const double t = dp / (dp - dq);
      out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
    }
  }
  poly = out;
}

}  // namespace

double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
  // Quick reject on circumscribed circles.
  const double dx = a.x - b.x, dy = a.y - b.y;
  const double ra = 0.5 * std::hypot(a.w, a.h), rb = 0.5 * std::hypot(b.w, b.h);
  if (dx * dx + dy * dy > (ra + rb) * (ra + rb)) return 0.0;

  auto ca = a.corners();
  auto cb = b.corners();
  std::vector<Vec2> poly(ca.begin(), ca.end());
  std::vector<Vec2> scratch;
  scratch.reserve(8);
  for (int i = 0; i < 4 && !poly.empty(); ++i) clip_edge(poly, cb[i], cb[(i + 1) % 4], scratch);
  const double inter = shoelace_area(poly);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (iou_threshold < 0.0 || iou_threshold > 1.0)
    throw Error("nms: iou threshold " + std::to_string(iou_threshold) + " outside [0,1]");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (dets[i].score != dets[j].score) return dets[i].score > dets[j].score;
    return i < j;  // ties to lower original index
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& d = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id != d.class_id) continue;
      if (rotated_iou(k.box, d.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<AnchorLevel> generate_anchors(const AnchorConfig& cfg, int grid_h, int grid_w, double cell_size) {
  if (cfg.basis.size() != cfg.strides.size())
    throw Error("generate_anchors: basis/stride count mismatch");
  std::vector<AnchorLevel> levels;
  levels.reserve(cfg.basis.size());
  const double half_h = 0.5 * grid_h * cell_size;
  const double half_w = 0.5 * grid_w * cell_size;
  for (std::size_t li = 0; li < cfg.basis.size(); ++li) {
    const int stride = cfg.strides[li];
    if (grid_h % stride != 0 || grid_w % stride != 0)
      throw Error("generate_anchors: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                  " not divisible by stride " + std::to_string(stride));
    AnchorLevel lvl;
    lvl.level = static_cast<int>(li) + 1;
    lvl.fh = grid_h / stride;
    lvl.fw = grid_w / stride;
    lvl.anchors.reserve(static_cast<std::size_t>(lvl.fh) * lvl.fw * cfg.per_cell());
    for (int v = 0; v < lvl.fh; ++v) {
      for (int u = 0; u < lvl.fw; ++u) {
        const double cx = (u + 0.5) * stride * cell_size - half_w;
        const double cy = (v + 0.5) * stride * cell_size - half_h;
        int slot = 0;
        for (double ratio : cfg.ratios) {
          for (double scale : cfg.scales) {
            Anchor a;
            a.x = cx;
            a.y = cy;
            a.w = cfg.basis[li] * scale * std::sqrt(ratio) * cell_size;
            a.h = cfg.basis[li] * scale / std::sqrt(ratio) * cell_size;
            a.level = lvl.level;
            a.cell_u = u;
            a.cell_v = v;
            a.slot = slot++;
            lvl.anchors.push_back(a);
          }
        }
      }
    }
    levels.push_back(std::move(lvl));
  }
  return levels;
}

AssignmentResult assign_targets(const std::vector<Anchor>& anchors, const std::vector<OrientedBox>& gt_boxes,
                                double fg_thr, double bg_thr) {
  if (anchors.empty()) throw Error("assign_targets: empty anchor set");
  if (fg_thr < bg_thr) throw Error("assign_targets: fg_thr must be >= bg_thr");

  AssignmentResult res;
  res.labels.assign(anchors.size(), AssignmentResult::kNegative);
  if (gt_boxes.empty()) return res;

  const std::size_t ng = gt_boxes.size();
  std::vector<double> best_gt_iou(ng, 0.0);
  std::vector<std::int64_t> best_gt_anchor(ng, -1);

  for (std::size_t ai = 0; ai < anchors.size(); ++ai) {
    const Anchor& a = anchors[ai];
    const OrientedBox abox(a.x, a.y, a.w, a.h, 0.0);
    const double ar = 0.5 * std::hypot(a.w, a.h);
    double best = 0.0;
    std::int32_t best_gt = -1;
    for (std::size_t gi = 0; gi < ng; ++gi) {
      const OrientedBox& g = gt_boxes[gi];
      const double dx = g.x - a.x, dy = g.y - a.y;
      const double rr = ar + 0.5 * std::hypot(g.w, g.h);
      if (dx * dx + dy * dy > rr * rr) continue;
      const double iou = rotated_iou(abox, g);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<std::int32_t>(gi);
      }
      if (iou > best_gt_iou[gi]) {
        best_gt_iou[gi] = iou;
        best_gt_anchor[gi] = static_cast<std::int64_t>(ai);
      }
    }
    if (best >= fg_thr && best_gt >= 0)
      res.labels[ai] = best_gt;
    else if (best >= bg_thr)
      res.labels[ai] = AssignmentResult::kIgnore;
  }

  // Force match: a gt with no positive anchor claims its highest-IoU anchor
  // (IoU > 0). Anchors already positive for another gt are not stolen; the
  // claim falls to the best still-unclaimed anchor. Processed in gt order.
  std::vector<bool> has_pos(ng, false);
  for (auto l : res.labels)
    if (l >= 0) has_pos[static_cast<std::size_t>(l)] = true;
  for (std::size_t gi = 0; gi < ng; ++gi) {
    if (has_pos[gi] || best_gt_iou[gi] <= 0.0) continue;
    const std::int64_t first_choice = best_gt_anchor[gi];
    if (res.labels[static_cast<std::size_t>(first_choice)] < 0) {
      res.labels[static_cast<std::size_t>(first_choice)] = static_cast<std::int32_t>(gi);
      continue;
    }
    const OrientedBox& g = gt_boxes[gi];
    const double gr = 0.5 * std::hypot(g.w, g.h);
    double best = 0.0;
    std::int64_t best_ai = -1;
    for (std::size_t ai = 0; ai < anchors.size(); ++ai) {
      if (res.labels[ai] >= 0) continue;
      const Anchor& a = anchors[ai];
      const double dx = g.x - a.x, dy = g.y - a.y;
      const double rr = gr + 0.5 * std::hypot(a.w, a.h);
      if (dx * dx + dy * dy > rr * rr) continue;
      const double iou = rotated_iou(OrientedBox(a.x, a.y, a.w, a.h, 0.0), g);
      if (iou > best) {
        best = iou;
        best_ai = static_cast<std::int64_t>(ai);
      }
    }
    if (best_ai >= 0 && best > 0.0) res.labels[static_cast<std::size_t>(best_ai)] = static_cast<std::int32_t>(gi);
  }

  res.n_pos = 0;
  for (auto l : res.labels)
    if (l >= 0) ++res.n_pos;
  return res;
}

}  // namespace gridda::geom
