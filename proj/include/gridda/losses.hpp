#pragma once

// Loss terms of the adversarial training objective: focal classification
// loss, smooth-L1 box regression, patchwise domain cross-entropy, consistency
// regularization, and the assembled minimax total
//   total = L_det + lambda1 * L_DA
// where the adversarial inputs pass through gradient reversal, so descending
// the total lets the classifiers minimize L_DA while the detector maximizes
// the reversed terms.

#include <array>
#include <string>
#include <vector>

#include "gridda/domain_adapt.hpp"
#include "gridda/geometry.hpp"
#include "gridda/model.hpp"

namespace gridda::loss {

struct LossConfig {
  double lambda1 = 0.5;
  double lambda2 = 1.0;
  double gamma = 2.0;
  double alpha = 0.25;  // < 0 disables the alpha weighting
  double smooth_l1_delta = 1.0;
  double prob_clamp = 1e-7;
  bool literal_domain_bce = false;  // the printed (1-d)(1-log p) variant, inspection only
  bool cons_in_grl = false;         // consistency through the reversal (literal grouping)
  double grl_lambda = 1.0;
};

LossConfig loss_config_from(const Config& cfg);

struct LabeledBox {
  geom::OrientedBox box;
  int class_id = 0;
};

template <typename T>
struct LevelTargets {
  ad::Tensor<T> cls_y;      // [N, A*K, H, W] one-hot class targets
  ad::Tensor<T> cls_mask;   // 1 where the anchor is not ignored and the sample is source
  ad::Tensor<T> box_t;      // [N, A*6, H, W] encoded regression targets
  ad::Tensor<T> box_mask;   // 1 on positive-anchor coordinates
};

template <typename T>
struct DetTargets {
  std::vector<LevelTargets<T>> levels;
  int n_pos = 0;
};

// Builds per-level constant target maps for a batch. Detection supervision
// only comes from source-domain samples; target samples are masked out unless
// require_source_only is set, in which case they are rejected.
template <typename T>
DetTargets<T> build_det_targets(const std::vector<geom::AnchorLevel>& anchor_levels,
                                const std::vector<std::vector<LabeledBox>>& batch_gts,
                                const std::vector<int>& domains,
                                const std::vector<geom::AssignmentResult>& assignments, int classes,
                                bool require_source_only = false) {
  const int n = static_cast<int>(batch_gts.size());
  if (n == 0) throw Error("build_det_targets: empty batch");
  if (domains.size() != batch_gts.size() || assignments.size() != batch_gts.size())
    throw Error("build_det_targets: batch size mismatch");
  if (require_source_only)
    for (int d : domains)
      if (d != 0) throw Error("detection loss: target-domain sample passed in; caller must filter");

  DetTargets<T> out;
  out.levels.reserve(anchor_levels.size());
  const int A = anchor_levels.empty() ? 0 : static_cast<int>(anchor_levels[0].anchors.size() /
                                                             (static_cast<std::size_t>(anchor_levels[0].fh) *
                                                              anchor_levels[0].fw));
  for (const auto& al : anchor_levels) {
    LevelTargets<T> lt;
    lt.cls_y = ad::Tensor<T>({n, A * classes, al.fh, al.fw});
    lt.cls_mask = ad::Tensor<T>({n, A * classes, al.fh, al.fw});
    lt.box_t = ad::Tensor<T>({n, A * 6, al.fh, al.fw});
    lt.box_mask = ad::Tensor<T>({n, A * 6, al.fh, al.fw});
    out.levels.push_back(std::move(lt));
  }

  for (int s = 0; s < n; ++s) {
    if (domains[static_cast<std::size_t>(s)] != 0) continue;  // target samples give no detection supervision
    const auto& assign = assignments[static_cast<std::size_t>(s)];
    std::size_t offset = 0;
    for (std::size_t li = 0; li < anchor_levels.size(); ++li) {
      const auto& al = anchor_levels[li];
      LevelTargets<T>& lt = out.levels[li];
      for (std::size_t ai = 0; ai < al.anchors.size(); ++ai) {
        const geom::Anchor& anc = al.anchors[ai];
        const std::int32_t label = assign.labels[offset + ai];
        if (label == geom::AssignmentResult::kIgnore) continue;
        for (int k = 0; k < classes; ++k)
          lt.cls_mask.at(s, anc.slot * classes + k, anc.cell_v, anc.cell_u) = T(1);
        if (label >= 0) {
          const LabeledBox& gt = batch_gts[static_cast<std::size_t>(s)][static_cast<std::size_t>(label)];
          lt.cls_y.at(s, anc.slot * classes + gt.class_id, anc.cell_v, anc.cell_u) = T(1);
          const geom::BoxEncoding enc = geom::encode_box(gt.box, anc);
          for (int c = 0; c < 6; ++c) {
            lt.box_t.at(s, anc.slot * 6 + c, anc.cell_v, anc.cell_u) = static_cast<T>(enc.t[static_cast<std::size_t>(c)]);
            lt.box_mask.at(s, anc.slot * 6 + c, anc.cell_v, anc.cell_u) = T(1);
          }
          ++out.n_pos;
        }
      }
      offset += al.anchors.size();
    }
  }
  // n_pos counted per (sample, anchor); divide by nothing further.
  return out;
}

// Sum over non-ignored anchors and classes of
//   FL(p_t) = -alpha_t (1-p_t)^gamma log(p_t), sigmoid per class.
template <typename T>
ad::Value<T> focal_loss(ad::Graph<T>& g, const ad::Value<T>& cls_logits, const ad::Tensor<T>& y,
                        const ad::Tensor<T>& mask, const LossConfig& cfg) {
  if (cls_logits.tensor().numel() == 0) throw Error("focal_loss: empty anchor set");
  if (!cls_logits.tensor().same_shape(y))
    throw ShapeError("focal_loss: target shape mismatch");
  const T c = static_cast<T>(cfg.prob_clamp);
  // alpha_t folded together with the ignore/source mask into one weight map
  ad::Tensor<T> weight(mask.shape());
  for (std::int64_t i = 0; i < weight.numel(); ++i) {
    T a = T(1);
    if (cfg.alpha >= 0) a = y[i] > T(0.5) ? static_cast<T>(cfg.alpha) : static_cast<T>(1.0 - cfg.alpha);
    weight[i] = a * mask[i];
  }
  ad::Tensor<T> ycopy = y;
  ad::Tensor<T> yneg(y.shape());
  for (std::int64_t i = 0; i < yneg.numel(); ++i) yneg[i] = T(1) - y[i];

  auto p = ad::ops::clamp(ad::ops::sigmoid(cls_logits), c, T(1) - c);
  auto one_minus_p = ad::ops::affine(p, T(-1), T(1));
  auto pt = ad::ops::add(ad::ops::mul(p, g.constant(std::move(ycopy))),
                         ad::ops::mul(one_minus_p, g.constant(std::move(yneg))));
  auto log_pt = ad::ops::log(pt);
  ad::Value<T> weighted;
  if (cfg.gamma == 0.0) {
    weighted = ad::ops::mul(log_pt, g.constant(std::move(weight)));
  } else {
    auto focal = ad::ops::pow_scalar(ad::ops::affine(pt, T(-1), T(1)), static_cast<T>(cfg.gamma));
    weighted = ad::ops::mul(ad::ops::mul(focal, log_pt), g.constant(std::move(weight)));
  }
  return ad::ops::affine(ad::ops::reduce_sum(weighted), T(-1), T(0));
}

// Sum over positive anchors and their 6 coordinates of the Huber form
//   0.5 x^2/delta for |x| < delta, |x| - 0.5 delta otherwise.
template <typename T>
ad::Value<T> smooth_l1(ad::Graph<T>& g, const ad::Value<T>& box_reg, const ad::Tensor<T>& box_t,
                       const ad::Tensor<T>& box_mask, double delta) {
  if (!box_reg.tensor().same_shape(box_t)) throw ShapeError("smooth_l1: target shape mismatch");
  const T d = static_cast<T>(delta);
  // branch select is a constant of the current residuals; masked-out entries
  // have x = 0 and fall in the quadratic branch, contributing exactly 0
  ad::Tensor<T> quad_sel(box_t.shape()), lin_sel(box_t.shape());
  const auto& pred = box_reg.tensor();
  for (std::int64_t i = 0; i < quad_sel.numel(); ++i) {
    const T x = (pred[i] - box_t[i]) * box_mask[i];
    const bool quad = std::abs(static_cast<double>(x)) < delta;
    quad_sel[i] = quad ? T(1) : T(0);
    lin_sel[i] = quad ? T(0) : T(1);
  }
  ad::Tensor<T> tcopy = box_t;
  ad::Tensor<T> mcopy = box_mask;
  auto x = ad::ops::mul(ad::ops::sub(box_reg, g.constant(std::move(tcopy))), g.constant(std::move(mcopy)));
  auto quad = ad::ops::affine(ad::ops::square(x), T(0.5) / d, T(0));
  auto lin = ad::ops::affine(ad::ops::abs(x), T(1), T(-0.5) * d);
  auto branch = ad::ops::add(ad::ops::mul(quad, g.constant(std::move(quad_sel))),
                             ad::ops::mul(lin, g.constant(std::move(lin_sel))));
  return ad::ops::reduce_sum(branch);
}

template <typename T>
struct DetLoss {
  ad::Value<T> l_det, l_cls, l_box;
  int n_pos = 0;
};

// L_det = (1/N_pos)(L_cls + lambda2 L_box); N_pos = 0 normalizes by 1 and
// contributes only the classification term.
template <typename T>
DetLoss<T> detection_loss(ad::Graph<T>& g, const model::ForwardOutputs<T>& fwd, const DetTargets<T>& targets,
                          const LossConfig& cfg) {
  DetLoss<T> out;
  out.n_pos = targets.n_pos;
  ad::Value<T> l_cls, l_box;
  for (std::size_t l = 0; l < targets.levels.size(); ++l) {
    const auto& lt = targets.levels[l];
    auto fc = focal_loss(g, fwd.levels[l].cls_logits, lt.cls_y, lt.cls_mask, cfg);
    l_cls = l_cls.valid() ? ad::ops::add(l_cls, fc) : fc;
    if (targets.n_pos > 0) {
      auto sl = smooth_l1(g, fwd.levels[l].box_reg, lt.box_t, lt.box_mask, cfg.smooth_l1_delta);
      l_box = l_box.valid() ? ad::ops::add(l_box, sl) : sl;
    }
  }
  if (!l_box.valid()) l_box = g.constant(ad::Tensor<T>::scalar(T(0)));
  out.l_cls = l_cls;
  out.l_box = l_box;
  const T norm = T(1) / static_cast<T>(std::max(1, targets.n_pos));
  auto combined = ad::ops::add(l_cls, ad::ops::affine(l_box, static_cast<T>(cfg.lambda2), T(0)));
  out.l_det = ad::ops::affine(combined, norm, T(0));
  return out;
}

// Patchwise binary cross-entropy, normalized by N*H_l*W_l. The printed paper
// variant (1-d)(1 - log p) is available behind literal_domain_bce.
template <typename T>
ad::Value<T> domain_bce(ad::Graph<T>& g, const ad::Value<T>& p, const std::vector<int>& domains,
                        const LossConfig& cfg) {
  const auto& shape = p.shape();
  if (shape.size() != 4 || shape[1] != 1) throw ShapeError("domain_bce: expected [N,1,H,W] probabilities");
  if (shape[0] != static_cast<int>(domains.size())) throw Error("domain_bce: domain label count mismatch");
  if (domains.empty()) throw Error("domain_bce: empty batch");
  const T c = static_cast<T>(cfg.prob_clamp);
  const std::int64_t plane = static_cast<std::int64_t>(shape[2]) * shape[3];
  ad::Tensor<T> d(p.shape()), dneg(p.shape());
  for (int n = 0; n < shape[0]; ++n) {
    const T dv = domains[static_cast<std::size_t>(n)] ? T(1) : T(0);
    for (std::int64_t i = 0; i < plane; ++i) {
      d[n * plane + i] = dv;
      dneg[n * plane + i] = T(1) - dv;
    }
  }
  auto pc = ad::ops::clamp(p, c, T(1) - c);
  auto log_p = ad::ops::log(pc);
  ad::Value<T> neg_term;
  if (cfg.literal_domain_bce) {
    neg_term = ad::ops::affine(log_p, T(-1), T(1));  // (1 - log p)
  } else {
    neg_term = ad::ops::log(ad::ops::affine(pc, T(-1), T(1)));  // log(1 - p)
  }
  auto terms = ad::ops::add(ad::ops::mul(log_p, g.constant(std::move(d))),
                            ad::ops::mul(neg_term, g.constant(std::move(dneg))));
  return ad::ops::affine(ad::ops::reduce_mean(terms), T(-1), T(0));
}

// (1/(N H W)) sum (p_img - p_ins)^2.
template <typename T>
ad::Value<T> consistency_loss(ad::Graph<T>& /*g*/, const ad::Value<T>& p_img, const ad::Value<T>& p_ins) {
  return ad::ops::reduce_mean(ad::ops::square(ad::ops::sub(p_img, p_ins)));
}

// L_DA = (1/L) sum_l (L_img + L_ins + L_cons); missing components enter as 0.
template <typename T>
ad::Value<T> da_total(ad::Graph<T>& g, const std::array<ad::Value<T>, 4>* img, const std::array<ad::Value<T>, 4>* ins,
                      const std::array<ad::Value<T>, 4>* cons) {
  ad::Value<T> acc;
  for (int l = 0; l < 4; ++l) {
    for (const auto* part : {img, ins, cons}) {
      if (!part) continue;
      const ad::Value<T>& v = (*part)[static_cast<std::size_t>(l)];
      if (!v.valid()) throw Error("da_total: missing level term");
      acc = acc.valid() ? ad::ops::add(acc, v) : v;
    }
  }
  if (!acc.valid()) return g.constant(ad::Tensor<T>::scalar(T(0)));
  return ad::ops::affine(acc, T(0.25), T(0));
}

}  // namespace gridda::loss
