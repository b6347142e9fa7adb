#pragma once

// Normalization primitives. Group norm is the default everywhere (small-batch
// stability, no cross-domain statistics leakage); batch norm is available as
// a config alternative and carries running statistics outside the graph.

#include <cmath>
#include <memory>
#include <vector>

#include "gridda/graph.hpp"

namespace gridda::ad::ops {

// y = gamma_c * (x - mean)/sqrt(var + eps) + beta_c, statistics per (sample, group).
template <typename T>
Value<T> group_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta, int groups, T eps = T(1e-5)) {
  detail::require_4d("group_norm", x.tensor());
  const Tensor<T>& xt = x.tensor();
  const int N = xt.dim(0), C = xt.dim(1), H = xt.dim(2), W = xt.dim(3);
  if (groups < 1 || C % groups != 0)
    throw ShapeError("group_norm: channels " + std::to_string(C) + " not divisible by groups " + std::to_string(groups));
  if (gamma.tensor().numel() != C || beta.tensor().numel() != C)
    throw ShapeError("group_norm: gamma/beta must have C=" + std::to_string(C) + " entries");

  const int cg = C / groups;
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t m = cg * plane;

  Tensor<T> out(xt.shape());
  auto mu = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * groups);
  auto inv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N) * groups);

  for (int n = 0; n < N; ++n)
    for (int g = 0; g < groups; ++g) {
      const T* base = &xt.at(n, g * cg, 0, 0);
      T s = 0;
      for (std::int64_t i = 0; i < m; ++i) s += base[i];
      const T mean = s / static_cast<T>(m);
      T v = 0;
      for (std::int64_t i = 0; i < m; ++i) {
        const T dd = base[i] - mean;
        v += dd * dd;
      }
      const T istd = T(1) / std::sqrt(v / static_cast<T>(m) + eps);
      (*mu)[static_cast<std::size_t>(n) * groups + g] = mean;
      (*inv)[static_cast<std::size_t>(n) * groups + g] = istd;
      for (int cc = 0; cc < cg; ++cc) {
        const int c = g * cg + cc;
        const T ga = gamma.tensor()[c], be = beta.tensor()[c];
        const T* src = &xt.at(n, c, 0, 0);
        T* dst = &out.at(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) dst[i] = ga * (src[i] - mean) * istd + be;
      }
    }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  bool rg = xn->requires_grad || gn->requires_grad || bn->requires_grad;
  auto backward = [xn, gn, bn, mu, inv, N, C, H, W, groups, cg, plane, m](Node<T>& self) {
    const Tensor<T>& xv = xn->value;
    const Tensor<T>& gav = gn->value;
    Tensor<T>* gx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
    Tensor<T>* gg = gn->requires_grad ? &gn->ensure_grad() : nullptr;
    Tensor<T>* gb = bn->requires_grad ? &bn->ensure_grad() : nullptr;
    for (int n = 0; n < N; ++n)
      for (int g = 0; g < groups; ++g) {
        const T mean = (*mu)[static_cast<std::size_t>(n) * groups + g];
        const T istd = (*inv)[static_cast<std::size_t>(n) * groups + g];
        // h = dy * gamma; dx = istd * (h - mean(h) - xhat * mean(h*xhat))
        T sum_h = 0, sum_hx = 0;
        for (int cc = 0; cc < cg; ++cc) {
          const int c = g * cg + cc;
          const T ga = gav[c];
          const T* dy = &self.grad.at(n, c, 0, 0);
          const T* xp = &xv.at(n, c, 0, 0);
          T sg = 0, sgx = 0;
          for (std::int64_t i = 0; i < plane; ++i) {
            const T xhat = (xp[i] - mean) * istd;
            sg += dy[i];
            sgx += dy[i] * xhat;
          }
          if (gb) (*gb)[c] += sg;
          if (gg) (*gg)[c] += sgx;
          sum_h += ga * sg;
          sum_hx += ga * sgx;
        }
        if (gx) {
          const T mh = sum_h / static_cast<T>(m);
          const T mhx = sum_hx / static_cast<T>(m);
          for (int cc = 0; cc < cg; ++cc) {
            const int c = g * cg + cc;
            const T ga = gav[c];
            const T* dy = &self.grad.at(n, c, 0, 0);
            const T* xp = &xv.at(n, c, 0, 0);
            T* dst = &gx->at(n, c, 0, 0);
            for (std::int64_t i = 0; i < plane; ++i) {
              const T xhat = (xp[i] - mean) * istd;
              dst[i] += istd * (dy[i] * ga - mh - xhat * mhx);
            }
          }
        }
      }
  };
  return Value<T>(xn->graph->append("group_norm", std::move(out), {xn, gn, bn}, backward, rg));
}

// Training-mode batch norm: statistics per channel over (N,H,W). Batch
// mean/var are written to *stats so the layer can maintain running averages.
template <typename T>
struct BatchStats {
  std::vector<T> mean, var;
};

template <typename T>
Value<T> batch_norm_train(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta, T eps,
                          BatchStats<T>* stats) {
  detail::require_4d("batch_norm", x.tensor());
  const Tensor<T>& xt = x.tensor();
  const int N = xt.dim(0), C = xt.dim(1), H = xt.dim(2), W = xt.dim(3);
  if (gamma.tensor().numel() != C || beta.tensor().numel() != C)
    throw ShapeError("batch_norm: gamma/beta must have C entries");
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  const std::int64_t m = static_cast<std::int64_t>(N) * plane;

  Tensor<T> out(xt.shape());
  auto mu = std::make_shared<std::vector<T>>(C);
  auto inv = std::make_shared<std::vector<T>>(C);
  for (int c = 0; c < C; ++c) {
    T s = 0;
    for (int n = 0; n < N; ++n) {
      const T* src = &xt.at(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) s += src[i];
    }
    const T mean = s / static_cast<T>(m);
    T v = 0;
    for (int n = 0; n < N; ++n) {
      const T* src = &xt.at(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) {
        const T dd = src[i] - mean;
        v += dd * dd;
      }
    }
    v /= static_cast<T>(m);
    const T istd = T(1) / std::sqrt(v + eps);
    (*mu)[c] = mean;
    (*inv)[c] = istd;
    if (stats) {
      if (static_cast<int>(stats->mean.size()) != C) {
        stats->mean.assign(C, T(0));
        stats->var.assign(C, T(0));
      }
      stats->mean[c] = mean;
      stats->var[c] = v;
    }
    const T ga = gamma.tensor()[c], be = beta.tensor()[c];
    for (int n = 0; n < N; ++n) {
      const T* src = &xt.at(n, c, 0, 0);
      T* dst = &out.at(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = ga * (src[i] - mean) * istd + be;
    }
  }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  bool rg = xn->requires_grad || gn->requires_grad || bn->requires_grad;
  auto backward = [xn, gn, bn, mu, inv, N, C, plane, m](Node<T>& self) {
    const Tensor<T>& xv = xn->value;
    const Tensor<T>& gav = gn->value;
    Tensor<T>* gx = xn->requires_grad ? &xn->ensure_grad() : nullptr;
    Tensor<T>* gg = gn->requires_grad ? &gn->ensure_grad() : nullptr;
    Tensor<T>* gb = bn->requires_grad ? &bn->ensure_grad() : nullptr;
    for (int c = 0; c < C; ++c) {
      const T mean = (*mu)[c], istd = (*inv)[c], ga = gav[c];
      T sg = 0, sgx = 0;
      for (int n = 0; n < N; ++n) {
        const T* dy = &self.grad.at(n, c, 0, 0);
        const T* xp = &xv.at(n, c, 0, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
          const T xhat = (xp[i] - mean) * istd;
          sg += dy[i];
          sgx += dy[i] * xhat;
        }
      }
      if (gb) (*gb)[c] += sg;
      if (gg) (*gg)[c] += sgx;
      if (gx) {
        const T mh = ga * sg / static_cast<T>(m);
        const T mhx = ga * sgx / static_cast<T>(m);
        for (int n = 0; n < N; ++n) {
          const T* dy = &self.grad.at(n, c, 0, 0);
          const T* xp = &xv.at(n, c, 0, 0);
          T* dst = &gx->at(n, c, 0, 0);
          for (std::int64_t i = 0; i < plane; ++i) {
            const T xhat = (xp[i] - mean) * istd;
            dst[i] += istd * (dy[i] * ga - mh - xhat * mhx);
          }
        }
      }
    }
  };
  return Value<T>(xn->graph->append("batch_norm", std::move(out), {xn, gn, bn}, backward, rg));
}

// y = x * scale_c + shift_c (per channel); used for batch-norm inference with
// frozen running statistics folded into scale/shift constants.
template <typename T>
Value<T> channel_affine(const Value<T>& x, const Value<T>& scale, const Value<T>& shift) {
  detail::require_4d("channel_affine", x.tensor());
  const Tensor<T>& xt = x.tensor();
  const int N = xt.dim(0), C = xt.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(xt.dim(2)) * xt.dim(3);
  if (scale.tensor().numel() != C || shift.tensor().numel() != C)
    throw ShapeError("channel_affine: scale/shift must have C entries");
  Tensor<T> out(xt.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T s = scale.tensor()[c], t = shift.tensor()[c];
      const T* src = &xt.at(n, c, 0, 0);
      T* dst = &out.at(n, c, 0, 0);
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = src[i] * s + t;
    }
  auto xn = x.node();
  auto sn = scale.node();
  auto tn = shift.node();
  bool rg = xn->requires_grad || sn->requires_grad || tn->requires_grad;
  auto backward = [xn, sn, tn, N, C, plane](Node<T>& self) {
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T s = sn->value[c];
          const T* dy = &self.grad.at(n, c, 0, 0);
          T* dst = &g.at(n, c, 0, 0);
          for (std::int64_t i = 0; i < plane; ++i) dst[i] += dy[i] * s;
        }
    }
    if (sn->requires_grad || tn->requires_grad) {
      for (int c = 0; c < C; ++c) {
        T ds = 0, dt = 0;
        for (int n = 0; n < N; ++n) {
          const T* dy = &self.grad.at(n, c, 0, 0);
          const T* xp = &xn->value.at(n, c, 0, 0);
          for (std::int64_t i = 0; i < plane; ++i) {
            ds += dy[i] * xp[i];
            dt += dy[i];
          }
        }
        if (sn->requires_grad) sn->ensure_grad()[c] += ds;
        if (tn->requires_grad) tn->ensure_grad()[c] += dt;
      }
    }
  };
  return Value<T>(xn->graph->append("channel_affine", std::move(out), {xn, sn, tn}, backward, rg));
}

}  // namespace gridda::ad::ops
