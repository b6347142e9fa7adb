#pragma once

// Convolution primitives: im2col + GEMM (Eigen) for the dense conv, direct
// loops for the depthwise stem. Weight-gradient accumulation across the batch
// happens in fixed sample order so results are independent of scheduling.

#include <Eigen/Core>

#include "gridda/common.hpp"
#include "gridda/graph.hpp"

namespace gridda::ad::ops {

namespace detail {

struct ConvDims {
  int N, Ci, H, W, Co, kh, kw, stride, pad, Ho, Wo;
};

template <typename T>
inline ConvDims conv_dims(const char* op, const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError(std::string(op) + ": expected 4-d input/kernel, got " + Tensor<T>::shape_str(x.shape()) + " and " +
                     Tensor<T>::shape_str(w.shape()));
  if (stride < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
  if (pad < 0) throw ShapeError(std::string(op) + ": pad must be >= 0");
  ConvDims d;
  d.N = x.dim(0);
  d.Ci = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Co = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  if (d.Ho <= 0 || d.Wo <= 0) throw ShapeError(std::string(op) + ": kernel larger than padded input");
  return d;
}

// col is [Ci*kh*kw x Ho*Wo], row-major, pre-zeroed by the caller.
template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
  const std::int64_t owo = d.Wo;
  for (int ci = 0; ci < d.Ci; ++ci) {
    const T* xc = x + static_cast<std::int64_t>(ci) * d.H * d.W;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        T* row = col + ((static_cast<std::int64_t>(ci) * d.kh + ky) * d.kw + kx) * (d.Ho * owo);
        for (int oy = 0; oy < d.Ho; ++oy) {
          const int iy = oy * d.stride + ky - d.pad;
          T* dst = row + static_cast<std::int64_t>(oy) * owo;
          if (iy < 0 || iy >= d.H) continue;  // stays zero
          const T* src = xc + static_cast<std::int64_t>(iy) * d.W;
          if (d.stride == 1) {
            const int ox_lo = std::max(0, d.pad - kx);
            const int ox_hi = std::min(d.Wo, d.W - kx + d.pad);
            for (int ox = ox_lo; ox < ox_hi; ++ox) dst[ox] = src[ox + kx - d.pad];
          } else {
            for (int ox = 0; ox < d.Wo; ++ox) {
              const int ix = ox * d.stride + kx - d.pad;
              if (ix >= 0 && ix < d.W) dst[ox] = src[ix];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* gx) {
  for (int ci = 0; ci < d.Ci; ++ci) {
    T* gc = gx + static_cast<std::int64_t>(ci) * d.H * d.W;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const T* row = col + ((static_cast<std::int64_t>(ci) * d.kh + ky) * d.kw + kx) *
                                 (static_cast<std::int64_t>(d.Ho) * d.Wo);
        for (int oy = 0; oy < d.Ho; ++oy) {
          const int iy = oy * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.H) continue;
          const T* src = row + static_cast<std::int64_t>(oy) * d.Wo;
          T* dst = gc + static_cast<std::int64_t>(iy) * d.W;
          for (int ox = 0; ox < d.Wo; ++ox) {
            const int ix = ox * d.stride + kx - d.pad;
            if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-d convolution with zero padding. x: [N,Ci,H,W], w: [Co,Ci,kh,kw],
// optional bias: [Co].
template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>* bias, int stride, int pad) {
  using detail::ConvDims;
  const Tensor<T>& xt = x.tensor();
  const Tensor<T>& wt = w.tensor();
  ConvDims d = detail::conv_dims("conv2d", xt, wt, stride, pad);
  if (wt.dim(1) != d.Ci)
    throw ShapeError("conv2d: kernel channels " + std::to_string(wt.dim(1)) + " do not match input channels " +
                     std::to_string(d.Ci));
  if (bias && (bias->tensor().ndim() != 1 || bias->tensor().dim(0) != d.Co))
    throw ShapeError("conv2d: bias shape " + Tensor<T>::shape_str(bias->tensor().shape()) + " does not match Co=" +
                     std::to_string(d.Co));

  const std::int64_t ck = static_cast<std::int64_t>(d.Ci) * d.kh * d.kw;
  const std::int64_t hw = static_cast<std::int64_t>(d.Ho) * d.Wo;
  Tensor<T> out({d.N, d.Co, d.Ho, d.Wo});

  parallel_for(d.N, [&](std::int64_t nb, std::int64_t ne) {
    std::vector<T> col(static_cast<std::size_t>(ck * hw));
    for (std::int64_t n = nb; n < ne; ++n) {
      std::fill(col.begin(), col.end(), T(0));
      detail::im2col(xt.data() + n * d.Ci * d.H * d.W, d, col.data());
      ConstMatMap<T> wm(wt.data(), d.Co, ck);
      ConstMatMap<T> cm(col.data(), ck, hw);
      MatMap<T> ym(out.data() + n * d.Co * hw, d.Co, hw);
      ym.noalias() = wm * cm;
      if (bias) {
        const Tensor<T>& bt = bias->tensor();
        for (int co = 0; co < d.Co; ++co) {
          T* row = out.data() + (n * d.Co + co) * hw;
          const T b = bt[co];
          for (std::int64_t i = 0; i < hw; ++i) row[i] += b;
        }
      }
    }
  });

  auto xn = x.node();
  auto wn = w.node();
  std::vector<std::shared_ptr<Node<T>>> ins = {xn, wn};
  std::shared_ptr<Node<T>> bn = bias ? bias->node() : nullptr;
  if (bn) ins.push_back(bn);
  bool rg = xn->requires_grad || wn->requires_grad || (bn && bn->requires_grad);

  auto backward = [xn, wn, bn, d, ck, hw](Node<T>& self) {
    const Tensor<T>& xv = xn->value;
    const Tensor<T>& wv = wn->value;
    const bool need_dx = xn->requires_grad;
    const bool need_dw = wn->requires_grad;
    const bool need_db = bn && bn->requires_grad;

    // Per-sample weight/bias partials merged in fixed order after the loop.
    std::vector<T> dw_part;
    std::vector<T> db_part;
    if (need_dw) dw_part.assign(static_cast<std::size_t>(d.N * d.Co * ck), T(0));
    if (need_db) db_part.assign(static_cast<std::size_t>(d.N * d.Co), T(0));
    Tensor<T>* gx = need_dx ? &xn->ensure_grad() : nullptr;

    parallel_for(d.N, [&](std::int64_t nb, std::int64_t ne) {
      std::vector<T> col(static_cast<std::size_t>(ck * hw));
      std::vector<T> dcol(need_dx ? static_cast<std::size_t>(ck * hw) : std::size_t(0));
      for (std::int64_t n = nb; n < ne; ++n) {
        ConstMatMap<T> dym(self.grad.data() + n * d.Co * hw, d.Co, hw);
        if (need_dw) {
          std::fill(col.begin(), col.end(), T(0));
          detail::im2col(xv.data() + n * d.Ci * d.H * d.W, d, col.data());
          ConstMatMap<T> cm(col.data(), ck, hw);
          MatMap<T> dwm(dw_part.data() + n * d.Co * ck, d.Co, ck);
          dwm.noalias() = dym * cm.transpose();
        }
        if (need_db) {
          for (int co = 0; co < d.Co; ++co) {
            T acc = 0;
            const T* row = self.grad.data() + (n * d.Co + co) * hw;
            for (std::int64_t i = 0; i < hw; ++i) acc += row[i];
            db_part[static_cast<std::size_t>(n * d.Co + co)] = acc;
          }
        }
        if (need_dx) {
          ConstMatMap<T> wm(wv.data(), d.Co, ck);
          MatMap<T> dcm(dcol.data(), ck, hw);
          dcm.noalias() = wm.transpose() * dym;
          detail::col2im_add(dcol.data(), d, gx->data() + n * d.Ci * d.H * d.W);
        }
      }
    });

    if (need_dw) {
      auto& gw = wn->ensure_grad();
      for (std::int64_t n = 0; n < d.N; ++n) {
        const T* part = dw_part.data() + n * d.Co * ck;
        for (std::int64_t i = 0; i < d.Co * ck; ++i) gw[i] += part[i];
      }
    }
    if (need_db) {
      auto& gb = bn->ensure_grad();
      for (std::int64_t n = 0; n < d.N; ++n)
        for (int co = 0; co < d.Co; ++co) gb[co] += db_part[static_cast<std::size_t>(n * d.Co + co)];
    }
  };
  return Value<T>(xn->graph->append("conv2d", std::move(out), std::move(ins), backward, rg));
}

template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>& bias, int stride, int pad) {
  return conv2d(x, w, &bias, stride, pad);
}

template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, int stride, int pad) {
  return conv2d(x, w, static_cast<const Value<T>*>(nullptr), stride, pad);
}

// Depthwise convolution: one kernel per input channel. w: [C,1,kh,kw].
template <typename T>
Value<T> depthwise_conv2d(const Value<T>& x, const Value<T>& w, const Value<T>* bias, int stride, int pad) {
  const Tensor<T>& xt = x.tensor();
  const Tensor<T>& wt = w.tensor();
  detail::ConvDims d = detail::conv_dims("depthwise_conv2d", xt, wt, stride, pad);
  if (wt.dim(0) != d.Ci || wt.dim(1) != 1)
    throw ShapeError("depthwise_conv2d: kernel must be [C,1,kh,kw] with C=" + std::to_string(d.Ci) + ", got " +
                     Tensor<T>::shape_str(wt.shape()));
  if (bias && (bias->tensor().ndim() != 1 || bias->tensor().dim(0) != d.Ci))
    throw ShapeError("depthwise_conv2d: bias does not match channel count");

  Tensor<T> out({d.N, d.Ci, d.Ho, d.Wo});
  parallel_for(static_cast<std::int64_t>(d.N) * d.Ci, [&](std::int64_t b, std::int64_t e) {
    for (std::int64_t nc = b; nc < e; ++nc) {
      const int n = static_cast<int>(nc / d.Ci), c = static_cast<int>(nc % d.Ci);
      const T* xp = &xt.at(n, c, 0, 0);
      const T* wp = &wt.at(c, 0, 0, 0);
      const T bv = bias ? bias->tensor()[c] : T(0);
      for (int oy = 0; oy < d.Ho; ++oy)
        for (int ox = 0; ox < d.Wo; ++ox) {
          T acc = bv;
          for (int ky = 0; ky < d.kh; ++ky) {
            const int iy = oy * d.stride + ky - d.pad;
            if (iy < 0 || iy >= d.H) continue;
            for (int kx = 0; kx < d.kw; ++kx) {
              const int ix = ox * d.stride + kx - d.pad;
              if (ix < 0 || ix >= d.W) continue;
              acc += xp[iy * d.W + ix] * wp[ky * d.kw + kx];
            }
          }
          out.at(n, c, oy, ox) = acc;
        }
    }
  });

  auto xn = x.node();
  auto wn = w.node();
  std::vector<std::shared_ptr<Node<T>>> ins = {xn, wn};
  std::shared_ptr<Node<T>> bnode = bias ? bias->node() : nullptr;
  if (bnode) ins.push_back(bnode);
  bool rg = xn->requires_grad || wn->requires_grad || (bnode && bnode->requires_grad);

  auto backward = [xn, wn, bnode, d](Node<T>& self) {
    const Tensor<T>& xv = xn->value;
    const Tensor<T>& wv = wn->value;
    const bool need_dx = xn->requires_grad;
    const bool need_dw = wn->requires_grad;
    const bool need_db = bnode && bnode->requires_grad;
    Tensor<T>* gx = need_dx ? &xn->ensure_grad() : nullptr;
    Tensor<T>* gw = need_dw ? &wn->ensure_grad() : nullptr;
    Tensor<T>* gb = need_db ? &bnode->ensure_grad() : nullptr;

    // Serial over the batch: dW/db are shared accumulators.
    for (int n = 0; n < d.N; ++n)
      for (int c = 0; c < d.Ci; ++c) {
        const T* xp = &xv.at(n, c, 0, 0);
        const T* wp = &wv.at(c, 0, 0, 0);
        const T* dy = &self.grad.at(n, c, 0, 0);
        for (int oy = 0; oy < d.Ho; ++oy)
          for (int ox = 0; ox < d.Wo; ++ox) {
            const T dv = dy[oy * d.Wo + ox];
            if (need_db) (*gb)[c] += dv;
            for (int ky = 0; ky < d.kh; ++ky) {
              const int iy = oy * d.stride + ky - d.pad;
              if (iy < 0 || iy >= d.H) continue;
              for (int kx = 0; kx < d.kw; ++kx) {
                const int ix = ox * d.stride + kx - d.pad;
                if (ix < 0 || ix >= d.W) continue;
                if (need_dw) (*gw).at(c, 0, ky, kx) += dv * xp[iy * d.W + ix];
                if (need_dx) (*gx).at(n, c, iy, ix) += dv * wp[ky * d.kw + kx];
              }
            }
          }
      }
  };
  return Value<T>(xn->graph->append("depthwise_conv2d", std::move(out), std::move(ins), backward, rg));
}

template <typename T>
Value<T> depthwise_conv2d(const Value<T>& x, const Value<T>& w, const Value<T>& bias, int stride, int pad) {
  return depthwise_conv2d(x, w, &bias, stride, pad);
}

}  // namespace gridda::ad::ops
