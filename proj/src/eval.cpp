#include "gridda/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace gridda::eval {

namespace {

std::vector<std::size_t> score_order(const std::vector<geom::Detection>& dets, int class_id) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == class_id) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  return order;
}

}  // namespace

MatchResult match_by_iou(const std::vector<geom::Detection>& dets, const std::vector<GtBox>& gts, int class_id,
                         double iou_thr, int max_difficulty) {
  MatchResult res;
  res.flags.assign(dets.size(), 0);
  res.matched_gt.assign(dets.size(), -1);

  std::vector<int> countable;   // gt indices inside the difficulty band
  std::vector<int> dontcare;    // harder gts and explicit don't-care regions
  for (std::size_t gi = 0; gi < gts.size(); ++gi) {
    if (gts[gi].class_id != class_id && gts[gi].difficulty != kDontCare) continue;
    if (gts[gi].difficulty <= max_difficulty)
      countable.push_back(static_cast<int>(gi));
    else
      dontcare.push_back(static_cast<int>(gi));
  }
  res.num_gt = static_cast<int>(countable.size());

  std::vector<bool> taken(gts.size(), false);
  for (std::size_t di : score_order(dets, class_id)) {
    const geom::Detection& d = dets[di];
    double best = 0;
    int best_gi = -1;
    for (int gi : countable) {
      if (taken[static_cast<std::size_t>(gi)]) continue;
      const double iou = geom::rotated_iou(d.box, gts[static_cast<std::size_t>(gi)].box);
      if (iou >= iou_thr && iou > best) {
        best = iou;
        best_gi = gi;
      }
    }
    if (best_gi >= 0) {
      taken[static_cast<std::size_t>(best_gi)] = true;
      res.flags[di] = 1;
      res.matched_gt[di] = best_gi;
      continue;
    }
    // don't-care absorption: the detection is neither TP nor FP
    bool absorbed = false;
    for (int gi : dontcare) {
      if (geom::rotated_iou(d.box, gts[static_cast<std::size_t>(gi)].box) >= iou_thr) {
        absorbed = true;
        break;
      }
    }
    res.flags[di] = absorbed ? -1 : 0;
  }
  return res;
}

MatchResult match_by_center_distance(const std::vector<geom::Detection>& dets, const std::vector<GtBox>& gts,
                                     int class_id, double d_thr) {
  MatchResult res;
  res.flags.assign(dets.size(), 0);
  res.matched_gt.assign(dets.size(), -1);
  res.match_dist.assign(dets.size(), 0.0);

  std::vector<int> countable;
  for (std::size_t gi = 0; gi < gts.size(); ++gi)
    if (gts[gi].class_id == class_id && gts[gi].difficulty != kDontCare) countable.push_back(static_cast<int>(gi));
  res.num_gt = static_cast<int>(countable.size());

  std::vector<bool> taken(gts.size(), false);
  for (std::size_t di : score_order(dets, class_id)) {
    const geom::Detection& d = dets[di];
    double best = d_thr;
    int best_gi = -1;
    for (int gi : countable) {
      if (taken[static_cast<std::size_t>(gi)]) continue;
      const GtBox& g = gts[static_cast<std::size_t>(gi)];
      const double dist = std::hypot(d.box.x - g.box.x, d.box.y - g.box.y);
      if (dist <= best && (best_gi < 0 || dist < best)) {
        best = dist;
        best_gi = gi;
      }
    }
    if (best_gi >= 0) {
      taken[static_cast<std::size_t>(best_gi)] = true;
      res.flags[di] = 1;
      res.matched_gt[di] = best_gi;
      res.match_dist[di] = best;
    }
  }
  return res;
}

namespace {

void sort_by_score(std::vector<ScoredFlag>& seq) {
  std::stable_sort(seq.begin(), seq.end(), [](const ScoredFlag& a, const ScoredFlag& b) { return a.score > b.score; });
}

}  // namespace

std::vector<PrPoint> pr_curve(std::vector<ScoredFlag> seq, int num_gt) {
  sort_by_score(seq);
  std::vector<PrPoint> pts;
  if (num_gt <= 0) return pts;
  int tp = 0, fp = 0;
  for (const auto& s : seq) {
    if (s.tp)
      ++tp;
    else
      ++fp;
    pts.push_back({static_cast<double>(tp) / num_gt, static_cast<double>(tp) / (tp + fp)});
  }
  return pts;
}

std::optional<double> ap40(std::vector<ScoredFlag> seq, int num_gt) {
  if (num_gt <= 0) return std::nullopt;  // undefined, reported as absent
  auto pts = pr_curve(std::move(seq), num_gt);
  // suffix max of precision over the operating points (recall is monotone)
  std::vector<double> best_from(pts.size() + 1, 0.0);
  for (std::size_t i = pts.size(); i-- > 0;) best_from[i] = std::max(best_from[i + 1], pts[i].precision);
  double acc = 0;
  std::size_t idx = 0;
  for (int k = 1; k <= 40; ++k) {
    const double r = static_cast<double>(k) / 40.0;
    while (idx < pts.size() && pts[idx].recall < r) ++idx;
    acc += idx < pts.size() ? best_from[idx] : 0.0;
  }
  return 100.0 * acc / 40.0;
}

std::pair<std::vector<ScoredFlag>, int> pooled_iou_matches(const std::vector<Frame>& frames, int class_id,
                                                           double iou_thr, int max_difficulty) {
  std::vector<ScoredFlag> seq;
  int num_gt = 0;
  for (const Frame& f : frames) {
    auto m = match_by_iou(f.dets, f.gts, class_id, iou_thr, max_difficulty);
    num_gt += m.num_gt;
    for (std::size_t di = 0; di < f.dets.size(); ++di) {
      if (f.dets[di].class_id != class_id || m.flags[di] < 0) continue;
      seq.push_back({f.dets[di].score, m.flags[di] == 1});
    }
  }
  return {std::move(seq), num_gt};
}

std::optional<double> KittiStyleReport::ap_for(int class_id, int difficulty) const {
  for (const auto& e : entries)
    if (e.class_id == class_id && e.difficulty == difficulty) return e.ap;
  return std::nullopt;
}

KittiStyleReport evaluate_kitti_style(const std::vector<Frame>& frames, const EvalConfig& cfg) {
  KittiStyleReport report;
  for (const auto& [class_id, thr] : cfg.iou_thr) {
    for (int diff = kEasy; diff <= kHard; ++diff) {
      auto [seq, num_gt] = pooled_iou_matches(frames, class_id, thr, diff);
      ApEntry e;
      e.class_id = class_id;
      e.difficulty = diff;
      e.iou_thr = thr;
      e.ap = ap40(std::move(seq), num_gt);
      report.entries.push_back(e);
    }
  }
  return report;
}

NuScenesReport evaluate_nuscenes_style(const std::vector<Frame>& frames, const EvalConfig& cfg) {
  NuScenesReport report;
  std::vector<int> classes;
  for (const auto& [cid, thr] : cfg.iou_thr) classes.push_back(cid);

  std::vector<double> class_aps;
  double ate_sum = 0, ase_sum = 0;
  int tp_count = 0;
  for (int cid : classes) {
    std::vector<double> thr_aps;
    bool class_has_gt = false;
    for (double d_thr : cfg.dist_thr) {
      std::vector<ScoredFlag> seq;
      int num_gt = 0;
      for (const Frame& f : frames) {
        auto m = match_by_center_distance(f.dets, f.gts, cid, d_thr);
        num_gt += m.num_gt;
        for (std::size_t di = 0; di < f.dets.size(); ++di) {
          if (f.dets[di].class_id != cid) continue;
          seq.push_back({f.dets[di].score, m.flags[di] == 1});
        }
        // true-positive metrics at the dedicated threshold
        if (d_thr == cfg.tp_metric_thr) {
          for (std::size_t di = 0; di < f.dets.size(); ++di) {
            if (f.dets[di].class_id != cid || m.flags[di] != 1) continue;
            const GtBox& g = f.gts[static_cast<std::size_t>(m.matched_gt[di])];
            ate_sum += m.match_dist[di];
            const geom::OrientedBox& db = f.dets[di].box;
            const double inter = std::min(db.w, g.box.w) * std::min(db.h, g.box.h);
            const double uni = db.w * db.h + g.box.w * g.box.h - inter;
            ase_sum += 1.0 - inter / uni;
            ++tp_count;
          }
        }
      }
      if (num_gt > 0) {
        class_has_gt = true;
        auto ap = ap40(std::move(seq), num_gt);
        thr_aps.push_back(ap.value_or(0.0));
      } else {
        thr_aps.push_back(0.0);
      }
    }
    if (class_has_gt) {
      const double mean = std::accumulate(thr_aps.begin(), thr_aps.end(), 0.0) / thr_aps.size();
      report.per_class_ap[cid] = mean;
      class_aps.push_back(mean);
    }
  }
  if (!class_aps.empty())
    report.map = std::accumulate(class_aps.begin(), class_aps.end(), 0.0) / class_aps.size();
  report.ate = tp_count > 0 ? ate_sum / tp_count : 0.0;
  report.ase = tp_count > 0 ? ase_sum / tp_count : 0.0;
  return report;
}

std::vector<std::pair<double, std::optional<double>>> ap_vs_iou_sweep(const std::vector<Frame>& frames, int class_id,
                                                                      int max_difficulty) {
  std::vector<std::pair<double, std::optional<double>>> out;
  for (int i = 2; i <= 9; ++i) {
    const double thr = i / 10.0;
    auto [seq, num_gt] = pooled_iou_matches(frames, class_id, thr, max_difficulty);
    out.emplace_back(thr, ap40(std::move(seq), num_gt));
  }
  return out;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace

std::string format_pr_table(const std::vector<PrPoint>& curve) {
  std::string s = "recall\tprecision\n";
  for (const auto& p : curve) s += fmt(p.recall) + "\t" + fmt(p.precision) + "\n";
  return s;
}

std::string format_ap_iou_table(const std::vector<std::pair<double, std::optional<double>>>& sweep) {
  std::string s = "iou\tap\n";
  for (const auto& [thr, ap] : sweep) s += fmt(thr) + "\t" + (ap ? fmt(*ap) : std::string("absent")) + "\n";
  return s;
}

std::string format_report(const KittiStyleReport& kitti, const NuScenesReport& nusc) {
  std::string s = "protocol\tclass\tdifficulty\tiou\tvalue\n";
  const char* diff_names[3] = {"easy", "moderate", "hard"};
  for (const auto& e : kitti.entries) {
    s += "ap40\t" + std::to_string(e.class_id) + "\t" + diff_names[e.difficulty] + "\t" + fmt(e.iou_thr) + "\t" +
         (e.ap ? fmt(*e.ap) : std::string("absent")) + "\n";
  }
  s += "nuscenes_map\t-\t-\t-\t" + (nusc.map ? fmt(*nusc.map) : std::string("absent")) + "\n";
  s += "nuscenes_ate\t-\t-\t-\t" + fmt(nusc.ate) + "\n";
  s += "nuscenes_ase\t-\t-\t-\t" + fmt(nusc.ase) + "\n";
  return s;
}

double recall_at_knee(const std::vector<PrPoint>& curve, double min_precision) {
  double best = 0;
  for (const auto& p : curve)
    if (p.precision >= min_precision) best = std::max(best, p.recall);
  return best;
}

}  // namespace gridda::eval
