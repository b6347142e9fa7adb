#pragma once

// Both benchmark protocols: AP at 40 recall positions with rotated-IoU
// matching and difficulty bands, and center-distance mAP with ATE/ASE
// true-positive metrics. PR curves and AP-vs-IoU sweeps are exportable as
// tab-separated text.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridda/geometry.hpp"

namespace gridda::eval {

// 0 = easy, 1 = moderate, 2 = hard; 3 marks don't-care regions.
enum Difficulty : int { kEasy = 0, kModerate = 1, kHard = 2, kDontCare = 3 };

struct GtBox {
  geom::OrientedBox box;
  int class_id = 0;
  int difficulty = kHard;
};

struct Frame {
  std::vector<geom::Detection> dets;
  std::vector<GtBox> gts;
};

struct EvalConfig {
  std::map<int, double> iou_thr = {{0, 0.5}, {1, 0.5}, {2, 0.5}};  // per class
  std::array<double, 4> dist_thr = {0.5, 1.0, 2.0, 4.0};
  double tp_metric_thr = 2.0;
};

struct MatchResult {
  // per detection (input order): 1 TP, 0 FP, -1 absorbed by a don't-care gt
  std::vector<int> flags;
  std::vector<int> matched_gt;      // gt index or -1
  std::vector<double> match_dist;   // center distance of TPs (distance matching)
  int num_gt = 0;                   // countable gts at this difficulty
};

// Greedy per-frame matching by descending score: each detection takes the
// unmatched same-class gt with the highest rotated IoU >= thr (ties to the
// lowest gt index). Gts outside the difficulty band absorb matches without
// counting. max_difficulty selects the band (nested, KITTI-style).
MatchResult match_by_iou(const std::vector<geom::Detection>& dets, const std::vector<GtBox>& gts, int class_id,
                         double iou_thr, int max_difficulty);

// Greedy nearest-unmatched-gt matching with center distance <= d_thr.
MatchResult match_by_center_distance(const std::vector<geom::Detection>& dets, const std::vector<GtBox>& gts,
                                     int class_id, double d_thr);

struct ScoredFlag {
  double score = 0;
  bool tp = false;
};

// AP40 = (100/40) sum_{k=1..40} max precision at recall >= k/40.
// Undefined (absent) when num_gt = 0.
std::optional<double> ap40(std::vector<ScoredFlag> seq, int num_gt);

struct PrPoint {
  double recall = 0, precision = 0;
};
std::vector<PrPoint> pr_curve(std::vector<ScoredFlag> seq, int num_gt);

struct ApEntry {
  int class_id = 0;
  int difficulty = 0;
  double iou_thr = 0;
  std::optional<double> ap;
};

struct KittiStyleReport {
  std::vector<ApEntry> entries;
  std::optional<double> ap_for(int class_id, int difficulty) const;
};

KittiStyleReport evaluate_kitti_style(const std::vector<Frame>& frames, const EvalConfig& cfg);

// Pooled score/TP sequence for one (class, difficulty, IoU), for curves.
std::pair<std::vector<ScoredFlag>, int> pooled_iou_matches(const std::vector<Frame>& frames, int class_id,
                                                           double iou_thr, int max_difficulty);

struct NuScenesReport {
  std::optional<double> map;  // percent
  double ate = 0;             // meters, over TPs at the tp-metric threshold
  double ase = 0;             // 1 - center/yaw-aligned footprint IoU
  std::map<int, double> per_class_ap;
};

NuScenesReport evaluate_nuscenes_style(const std::vector<Frame>& frames, const EvalConfig& cfg);

// (IoU threshold, AP) sweep over IoU in {0.2 .. 0.9 step 0.1}.
std::vector<std::pair<double, std::optional<double>>> ap_vs_iou_sweep(const std::vector<Frame>& frames, int class_id,
                                                                      int max_difficulty);

std::string format_pr_table(const std::vector<PrPoint>& curve);
std::string format_ap_iou_table(const std::vector<std::pair<double, std::optional<double>>>& sweep);
std::string format_report(const KittiStyleReport& kitti, const NuScenesReport& nusc);

// Largest recall among operating points with precision >= min_precision.
double recall_at_knee(const std::vector<PrPoint>& curve, double min_precision = 0.5);

}  // namespace gridda::eval
