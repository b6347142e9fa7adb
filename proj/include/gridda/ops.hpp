#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "gridda/graph.hpp"

// Primitive forward/backward catalog: exactly what the detector needs.
// No general broadcasting; shapes are validated per op and mismatches are
// rejected with the op name and offending dims.
namespace gridda::ad::ops {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

template <typename T>
[[noreturn]] inline void shape_fail(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + Tensor<T>::shape_str(a.shape()) + " vs " +
                   Tensor<T>::shape_str(b.shape()));
}

template <typename T>
inline void require_4d(const char* op, const Tensor<T>& t) {
  if (t.ndim() != 4) throw ShapeError(std::string(op) + ": expected 4-d NCHW, got " + Tensor<T>::shape_str(t.shape()));
}

template <typename T, typename FwdFn, typename BwdFn>
Value<T> unary_elementwise(const char* op, const Value<T>& x, FwdFn fwd, BwdFn bwd_factor) {
  const Tensor<T>& xt = x.tensor();
  Tensor<T> out(xt.shape());
  const std::int64_t n = xt.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(xt[i]);
  auto xn = x.node();
  auto backward = [xn, bwd_factor](Node<T>& self) {
    if (!xn->requires_grad) return;
    auto& gx = xn->ensure_grad();
    const Tensor<T>& xv = xn->value;
    const Tensor<T>& yv = self.value;
    const std::int64_t m = xv.numel();
    for (std::int64_t i = 0; i < m; ++i) gx[i] += self.grad[i] * bwd_factor(xv[i], yv[i]);
  };
  return Value<T>(x.node()->graph->append(op, std::move(out), {xn}, backward, xn->requires_grad));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
  if (!a.tensor().same_shape(b.tensor())) detail::shape_fail("add", a.tensor(), b.tensor());
  Tensor<T> out(a.tensor().shape());
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.tensor()[i] + b.tensor()[i];
  auto an = a.node(), bn = b.node();
  auto backward = [an, bn](Node<T>& self) {
    for (auto& in : {an, bn}) {
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    }
  };
  return Value<T>(an->graph->append("add", std::move(out), {an, bn}, backward, an->requires_grad || bn->requires_grad));
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
  if (!a.tensor().same_shape(b.tensor())) detail::shape_fail("sub", a.tensor(), b.tensor());
  Tensor<T> out(a.tensor().shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.tensor()[i] - b.tensor()[i];
  auto an = a.node(), bn = b.node();
  auto backward = [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[i] -= self.grad[i];
    }
  };
  return Value<T>(an->graph->append("sub", std::move(out), {an, bn}, backward, an->requires_grad || bn->requires_grad));
}

template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) {
  if (!a.tensor().same_shape(b.tensor())) detail::shape_fail("mul", a.tensor(), b.tensor());
  Tensor<T> out(a.tensor().shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.tensor()[i] * b.tensor()[i];
  auto an = a.node(), bn = b.node();
  auto backward = [an, bn](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i] * an->value[i];
    }
  };
  return Value<T>(an->graph->append("mul", std::move(out), {an, bn}, backward, an->requires_grad || bn->requires_grad));
}

template <typename T>
Value<T> relu(const Value<T>& x) {
  return detail::unary_elementwise<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T xv, T) { return xv > T(0) ? T(1) : T(0); });
}

template <typename T>
Value<T> sigmoid(const Value<T>& x) {
  return detail::unary_elementwise<T>(
      "sigmoid", x,
      [](T v) {
        // split by sign to avoid overflow in exp
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T yv) { return yv * (T(1) - yv); });
}

template <typename T>
Value<T> exp(const Value<T>& x) {
  return detail::unary_elementwise<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T yv) { return yv; });
}

template <typename T>
Value<T> log(const Value<T>& x) {
  return detail::unary_elementwise<T>(
      "log", x, [](T v) { return std::log(v); }, [](T xv, T) { return T(1) / xv; });
}

template <typename T>
Value<T> square(const Value<T>& x) {
  return detail::unary_elementwise<T>(
      "square", x, [](T v) { return v * v; }, [](T xv, T) { return T(2) * xv; });
}

template <typename T>
Value<T> abs(const Value<T>& x) {
  return detail::unary_elementwise<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T xv, T) { return xv > T(0) ? T(1) : (xv < T(0) ? T(-1) : T(0)); });
}

// x^p for scalar exponent; base must stay positive for fractional p.
template <typename T>
Value<T> pow_scalar(const Value<T>& x, T p) {
  return detail::unary_elementwise<T>(
      "pow", x, [p](T v) { return std::pow(v, p); },
      [p](T xv, T) { return p * std::pow(xv, p - T(1)); });
}

// a*x + b with scalar a, b.
template <typename T>
Value<T> affine(const Value<T>& x, T a, T b) {
  return detail::unary_elementwise<T>(
      "affine", x, [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
}

template <typename T>
Value<T> clamp(const Value<T>& x, T lo, T hi) {
  return detail::unary_elementwise<T>(
      "clamp", x, [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](T xv, T) { return (xv >= lo && xv <= hi) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Gradient reversal: identity forward, upstream grad scaled by -lambda.
// ---------------------------------------------------------------------------

template <typename T>
Value<T> grad_reverse(const Value<T>& x, T lambda) {
  if (lambda < T(0)) throw Error("grad_reverse: lambda must be >= 0");
  Tensor<T> out = x.tensor();
  auto xn = x.node();
  auto backward = [xn, lambda](Node<T>& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[i] += -lambda * self.grad[i];
  };
  return Value<T>(xn->graph->append("grad_reverse", std::move(out), {xn}, backward, xn->requires_grad));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Value<T> reduce_sum(const Value<T>& x) {
  T acc = 0;
  for (std::int64_t i = 0; i < x.tensor().numel(); ++i) acc += x.tensor()[i];
  auto xn = x.node();
  auto backward = [xn](Node<T>& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const T d = self.grad[0];
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += d;
  };
  return Value<T>(xn->graph->append("reduce_sum", Tensor<T>::scalar(acc), {xn}, backward, xn->requires_grad));
}

template <typename T>
Value<T> reduce_mean(const Value<T>& x) {
  const std::int64_t n = x.tensor().numel();
  T acc = 0;
  for (std::int64_t i = 0; i < n; ++i) acc += x.tensor()[i];
  acc /= static_cast<T>(n);
  auto xn = x.node();
  auto backward = [xn, n](Node<T>& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    const T d = self.grad[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += d;
  };
  return Value<T>(xn->graph->append("reduce_mean", Tensor<T>::scalar(acc), {xn}, backward, xn->requires_grad));
}

// Max over one axis (no keepdim); gradient routes to the first maximum.
template <typename T>
Value<T> max_over_axis(const Value<T>& x, int axis) {
  const Tensor<T>& xt = x.tensor();
  if (axis < 0 || axis >= xt.ndim()) throw ShapeError("max_over_axis: axis out of range");
  std::vector<int> oshape;
  for (int i = 0; i < xt.ndim(); ++i)
    if (i != axis) oshape.push_back(xt.dim(i));
  if (oshape.empty()) oshape.push_back(1);

  std::int64_t outer = 1, axis_n = xt.dim(axis), inner = 1;
  for (int i = 0; i < axis; ++i) outer *= xt.dim(i);
  for (int i = axis + 1; i < xt.ndim(); ++i) inner *= xt.dim(i);

  Tensor<T> out(oshape);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(outer * inner));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      std::int64_t best = o * axis_n * inner + in;
      T bv = xt[best];
      for (std::int64_t a = 1; a < axis_n; ++a) {
        std::int64_t idx = (o * axis_n + a) * inner + in;
        if (xt[idx] > bv) {
          bv = xt[idx];
          best = idx;
        }
      }
      out[o * inner + in] = bv;
      (*argmax)[static_cast<std::size_t>(o * inner + in)] = best;
    }
  }
  auto xn = x.node();
  auto backward = [xn, argmax](Node<T>& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
  };
  return Value<T>(xn->graph->append("max_over_axis", std::move(out), {xn}, backward, xn->requires_grad));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Value<T> nearest_upsample2(const Value<T>& x) {
  detail::require_4d("nearest_upsample2", x.tensor());
  const Tensor<T>& xt = x.tensor();
  const int N = xt.dim(0), C = xt.dim(1), H = xt.dim(2), W = xt.dim(3);
  Tensor<T> out({N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h) {
        const T* row = &xt.at(n, c, h, 0);
        T* r0 = &out.at(n, c, 2 * h, 0);
        T* r1 = &out.at(n, c, 2 * h + 1, 0);
        for (int w = 0; w < W; ++w) {
          r0[2 * w] = r0[2 * w + 1] = row[w];
          r1[2 * w] = r1[2 * w + 1] = row[w];
        }
      }
  auto xn = x.node();
  auto backward = [xn, N, C, H, W](Node<T>& self) {
    if (!xn->requires_grad) return;
    auto& g = xn->ensure_grad();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h) {
          T* grow = &g.at(n, c, h, 0);
          const T* s0 = &self.grad.at(n, c, 2 * h, 0);
          const T* s1 = &self.grad.at(n, c, 2 * h + 1, 0);
          for (int w = 0; w < W; ++w) grow[w] += s0[2 * w] + s0[2 * w + 1] + s1[2 * w] + s1[2 * w + 1];
        }
  };
  return Value<T>(xn->graph->append("nearest_upsample2", std::move(out), {xn}, backward, xn->requires_grad));
}

template <typename T>
Value<T> concat_channels(const Value<T>& a, const Value<T>& b) {
  detail::require_4d("concat_channels", a.tensor());
  detail::require_4d("concat_channels", b.tensor());
  const Tensor<T>& at = a.tensor();
  const Tensor<T>& bt = b.tensor();
  if (at.dim(0) != bt.dim(0) || at.dim(2) != bt.dim(2) || at.dim(3) != bt.dim(3))
    detail::shape_fail("concat_channels", at, bt);
  const int N = at.dim(0), Ca = at.dim(1), Cb = bt.dim(1), H = at.dim(2), W = at.dim(3);
  Tensor<T> out({N, Ca + Cb, H, W});
  const std::int64_t plane = static_cast<std::int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    std::copy_n(&at.at(n, 0, 0, 0), Ca * plane, &out.at(n, 0, 0, 0));
    std::copy_n(&bt.at(n, 0, 0, 0), Cb * plane, &out.at(n, Ca, 0, 0));
  }
  auto an = a.node(), bn = b.node();
  auto backward = [an, bn, N, Ca, Cb, plane](Node<T>& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const T* src = &self.grad.at(n, 0, 0, 0);
        T* dst = &g.at(n, 0, 0, 0);
        for (std::int64_t i = 0; i < Ca * plane; ++i) dst[i] += src[i];
      }
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (int n = 0; n < N; ++n) {
        const T* src = &self.grad.at(n, Ca, 0, 0);
        T* dst = &g.at(n, 0, 0, 0);
        for (std::int64_t i = 0; i < Cb * plane; ++i) dst[i] += src[i];
      }
    }
  };
  return Value<T>(
      an->graph->append("concat_channels", std::move(out), {an, bn}, backward, an->requires_grad || bn->requires_grad));
}

}  // namespace gridda::ad::ops

#include "gridda/ops_conv.hpp"
#include "gridda/ops_norm.hpp"
