#pragma once

// Single-stage detector: depthwise stem over the five grid-map channels,
// residual backbone with reduced widths, FPN emitting P1..P4 at strides
// 2/4/8/16, and one shared detection head applied at every level.

#include <array>
#include <cmath>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "gridda/config.hpp"
#include "gridda/geometry.hpp"
#include "gridda/gridmap.hpp"
#include "gridda/graph.hpp"
#include "gridda/ops.hpp"

namespace gridda::model {

enum class NormKind { Group, Batch };

struct ModelConfig {
  int in_channels = 5;
  std::vector<int> widths = {16, 32, 64, 128};  // stage widths (4 stages -> P1..P4)
  std::vector<int> blocks = {2, 2, 2, 2};
  int fpn_channels = 64;
  int head_channels = 64;
  int head_convs = 2;
  int classes = 3;
  NormKind norm = NormKind::Group;
  int gn_groups = 8;
  int da_channels = 64;  // domain classifier width
  double prior_pi = 0.01;

  geom::AnchorConfig anchors;

  int anchors_per_cell() const { return anchors.per_cell(); }

  void validate() const {
    if (widths.size() != 4 || blocks.size() != 4) throw Error("model config: expected 4 stage widths and block counts");
    for (int w : widths)
      if (w <= 0) throw Error("model config: non-positive stage width");
    for (int b : blocks)
      if (b <= 0) throw Error("model config: non-positive block count");
    if (fpn_channels <= 0 || head_channels <= 0 || head_convs <= 0 || classes <= 0)
      throw Error("model config: non-positive dimension");
    if (norm == NormKind::Group) {
      auto check = [&](int c, const char* what) {
        if (c % gn_groups != 0)
          throw Error(std::string("model config: ") + what + " " + std::to_string(c) +
                      " not divisible by gn_groups " + std::to_string(gn_groups));
      };
      for (int w : widths) check(w, "stage width");
    }
  }
};

ModelConfig model_config_from(const Config& cfg);

namespace detail {

template <typename T>
class ParamStore {
 public:
  ad::Parameter<T>& add(const std::string& name, ad::Tensor<T> t, bool trainable = true) {
    params_.emplace_back(name, std::move(t));
    params_.back().trainable = trainable;
    return params_.back();
  }
  std::vector<ad::Parameter<T>*> all() {
    std::vector<ad::Parameter<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p);
    return out;
  }

 private:
  std::deque<ad::Parameter<T>> params_;
};

template <typename T>
struct Init {
  Rng rng;
  explicit Init(std::uint64_t seed) : rng(seed) {}

  ad::Tensor<T> kaiming(std::vector<int> shape, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    ad::Tensor<T> t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
    return t;
  }
};

template <typename T>
struct ConvLayer {
  ad::Parameter<T>* w = nullptr;
  ad::Parameter<T>* b = nullptr;
  int stride = 1, pad = 1;

  static ConvLayer make(ParamStore<T>& store, Init<T>& init, const std::string& name, int ci, int co, int k,
                        int stride, int pad, bool bias = true) {
    ConvLayer l;
    l.w = &store.add(name + "/w", init.kaiming({co, ci, k, k}, ci * k * k));
    if (bias) l.b = &store.add(name + "/b", ad::Tensor<T>({co}));
    l.stride = stride;
    l.pad = pad;
    return l;
  }

  ad::Value<T> operator()(ad::Graph<T>& g, const ad::Value<T>& x) const {
    auto wv = g.leaf(*w);
    if (b) {
      auto bv = g.leaf(*b);
      return ad::ops::conv2d(x, wv, bv, stride, pad);
    }
    return ad::ops::conv2d(x, wv, stride, pad);
  }
};

template <typename T>
struct NormLayer {
  ad::Parameter<T>* gamma = nullptr;
  ad::Parameter<T>* beta = nullptr;
  ad::Parameter<T>* run_mean = nullptr;  // batch norm only
  ad::Parameter<T>* run_var = nullptr;
  NormKind kind = NormKind::Group;
  int groups = 8;
  T momentum = T(0.1);

  static NormLayer make(ParamStore<T>& store, const std::string& name, int c, NormKind kind, int groups) {
    NormLayer n;
    n.kind = kind;
    n.groups = groups;
    n.gamma = &store.add(name + "/gamma", ad::Tensor<T>::full({c}, T(1)));
    n.beta = &store.add(name + "/beta", ad::Tensor<T>({c}));
    if (kind == NormKind::Batch) {
      n.run_mean = &store.add(name + "/running_mean", ad::Tensor<T>({c}), false);
      n.run_var = &store.add(name + "/running_var", ad::Tensor<T>::full({c}, T(1)), false);
    }
    return n;
  }

  ad::Value<T> forward(ad::Graph<T>& g, const ad::Value<T>& x, bool training) {
    if (kind == NormKind::Group) return ad::ops::group_norm(x, g.leaf(*gamma), g.leaf(*beta), groups);
    const T eps = T(1e-5);
    if (training) {
      ad::ops::BatchStats<T> stats;
      auto y = ad::ops::batch_norm_train(x, g.leaf(*gamma), g.leaf(*beta), eps, &stats);
      const int c = gamma->value.dim(0);
      for (int i = 0; i < c; ++i) {
        run_mean->value[i] = (T(1) - momentum) * run_mean->value[i] + momentum * stats.mean[i];
        run_var->value[i] = (T(1) - momentum) * run_var->value[i] + momentum * stats.var[i];
      }
      return y;
    }
    const int c = gamma->value.dim(0);
    ad::Tensor<T> scale({c}), shift({c});
    for (int i = 0; i < c; ++i) {
      const T s = gamma->value[i] / std::sqrt(run_var->value[i] + eps);
      scale[i] = s;
      shift[i] = beta->value[i] - run_mean->value[i] * s;
    }
    return ad::ops::channel_affine(x, g.constant(std::move(scale)), g.constant(std::move(shift)));
  }
};

template <typename T>
struct ResBlock {
  ConvLayer<T> conv1, conv2;
  NormLayer<T> n1, n2;
  bool has_proj = false;
  ConvLayer<T> proj;
  NormLayer<T> proj_norm;

  static ResBlock make(ParamStore<T>& store, Init<T>& init, const std::string& name, int ci, int co, int stride,
                       NormKind kind, int groups) {
    ResBlock b;
    b.conv1 = ConvLayer<T>::make(store, init, name + "/conv1", ci, co, 3, stride, 1, false);
    b.n1 = NormLayer<T>::make(store, name + "/norm1", co, kind, groups);
    b.conv2 = ConvLayer<T>::make(store, init, name + "/conv2", co, co, 3, 1, 1, false);
    b.n2 = NormLayer<T>::make(store, name + "/norm2", co, kind, groups);
    if (stride != 1 || ci != co) {
      b.has_proj = true;
      b.proj = ConvLayer<T>::make(store, init, name + "/proj", ci, co, 1, stride, 0, false);
      b.proj.pad = 0;
      b.proj_norm = NormLayer<T>::make(store, name + "/proj_norm", co, kind, groups);
    }
    return b;
  }

  ad::Value<T> forward(ad::Graph<T>& g, const ad::Value<T>& x, bool training) {
    auto y = ad::ops::relu(n1.forward(g, conv1(g, x), training));
    y = n2.forward(g, conv2(g, y), training);
    auto sc = has_proj ? proj_norm.forward(g, proj(g, x), training) : x;
    return ad::ops::relu(ad::ops::add(y, sc));
  }
};

}  // namespace detail

template <typename T>
struct LevelOutputs {
  ad::Value<T> pyramid;     // P_l, fpn_channels
  ad::Value<T> cls_logits;  // A*K channels
  ad::Value<T> box_reg;     // A*6 channels
  ad::Value<T> cls_feat;    // pre-output classification features
  ad::Value<T> reg_feat;    // pre-output regression features
};

template <typename T>
struct ForwardOutputs {
  std::array<LevelOutputs<T>, 4> levels;
};

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    detail::Init<T> init(seed);
    auto& st = store_;
    const int w0 = cfg_.widths[0];

    // depthwise kernel is [C,1,3,3]: one 3x3 filter per grid-map feature
    stem_dw_ = detail::ConvLayer<T>::make(st, init, "stem/dw", 1, cfg_.in_channels, 3, 1, 1, true);
    stem_pw_ = detail::ConvLayer<T>::make(st, init, "stem/pw", cfg_.in_channels, w0, 1, 1, 0, false);
    stem_pw_.pad = 0;
    stem_norm0_ = detail::NormLayer<T>::make(st, "stem/norm0", w0, cfg_.norm, cfg_.gn_groups);
    stem_conv_ = detail::ConvLayer<T>::make(st, init, "stem/conv", w0, w0, 3, 2, 1, false);
    stem_norm1_ = detail::NormLayer<T>::make(st, "stem/norm1", w0, cfg_.norm, cfg_.gn_groups);

    int ci = w0;
    for (int s = 0; s < 4; ++s) {
      const int co = cfg_.widths[static_cast<std::size_t>(s)];
      std::vector<detail::ResBlock<T>> stage;
      for (int b = 0; b < cfg_.blocks[static_cast<std::size_t>(s)]; ++b) {
        const int stride = (b == 0 && s > 0) ? 2 : 1;
        const std::string name = "backbone/s" + std::to_string(s) + "/b" + std::to_string(b);
        stage.push_back(detail::ResBlock<T>::make(st, init, name, b == 0 ? ci : co, co, stride, cfg_.norm,
                                                  cfg_.gn_groups));
      }
      stages_.push_back(std::move(stage));
      ci = co;
    }

    for (int l = 0; l < 4; ++l) {
      lateral_[static_cast<std::size_t>(l)] = detail::ConvLayer<T>::make(
          st, init, "fpn/lateral" + std::to_string(l + 1), cfg_.widths[static_cast<std::size_t>(l)],
          cfg_.fpn_channels, 1, 1, 0);
      smooth_[static_cast<std::size_t>(l)] = detail::ConvLayer<T>::make(
          st, init, "fpn/smooth" + std::to_string(l + 1), cfg_.fpn_channels, cfg_.fpn_channels, 3, 1, 1);
    }

    const int hc = cfg_.head_channels;
    for (int i = 0; i < cfg_.head_convs; ++i) {
      const int in = i == 0 ? cfg_.fpn_channels : hc;
      cls_convs_.push_back(detail::ConvLayer<T>::make(st, init, "head/cls/conv" + std::to_string(i), in, hc, 3, 1, 1));
      reg_convs_.push_back(detail::ConvLayer<T>::make(st, init, "head/reg/conv" + std::to_string(i), in, hc, 3, 1, 1));
    }
    const int a = cfg_.anchors_per_cell();
    cls_out_ = detail::ConvLayer<T>::make(st, init, "head/cls/out", hc, a * cfg_.classes, 3, 1, 1);
    reg_out_ = detail::ConvLayer<T>::make(st, init, "head/reg/out", hc, a * 6, 3, 1, 1);
    // focal-loss stability: background-prior bias on the classification output
    const T prior_bias = static_cast<T>(-std::log((1.0 - cfg_.prior_pi) / cfg_.prior_pi));
    for (std::int64_t i = 0; i < cls_out_.b->value.numel(); ++i) cls_out_.b->value[i] = prior_bias;
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<ad::Parameter<T>*> params() { return store_.all(); }

  std::int64_t param_count() {
    std::int64_t n = 0;
    for (auto* p : store_.all()) n += p->value.numel();
    return n;
  }

  ForwardOutputs<T> forward(ad::Graph<T>& g, const ad::Value<T>& input, bool training) {
    const auto& shape = input.shape();
    if (shape.size() != 4 || shape[1] != cfg_.in_channels)
      throw ShapeError("model forward: expected [N," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                       ad::Tensor<T>::shape_str(shape));
    if (shape[2] % 16 != 0 || shape[3] % 16 != 0)
      throw ShapeError("model forward: H and W must be divisible by 16");

    auto dw_w = g.leaf(*stem_dw_.w);
    auto dw_b = g.leaf(*stem_dw_.b);
    auto x = ad::ops::depthwise_conv2d(input, dw_w, dw_b, 1, 1);
    x = ad::ops::relu(stem_norm0_.forward(g, stem_pw_(g, x), training));
    x = ad::ops::relu(stem_norm1_.forward(g, stem_conv_(g, x), training));

    std::array<ad::Value<T>, 4> c;
    for (int s = 0; s < 4; ++s) {
      for (auto& blk : stages_[static_cast<std::size_t>(s)]) x = blk.forward(g, x, training);
      c[static_cast<std::size_t>(s)] = x;
    }

    std::array<ad::Value<T>, 4> p;
    ad::Value<T> top = lateral_[3](g, c[3]);
    p[3] = smooth_[3](g, top);
    for (int l = 2; l >= 0; --l) {
      auto lat = lateral_[static_cast<std::size_t>(l)](g, c[static_cast<std::size_t>(l)]);
      top = ad::ops::add(lat, ad::ops::nearest_upsample2(top));
      p[static_cast<std::size_t>(l)] = smooth_[static_cast<std::size_t>(l)](g, top);
    }

    ForwardOutputs<T> out;
    for (int l = 0; l < 4; ++l) {
      LevelOutputs<T>& lo = out.levels[static_cast<std::size_t>(l)];
      lo.pyramid = p[static_cast<std::size_t>(l)];
      auto cf = lo.pyramid;
      for (auto& conv : cls_convs_) cf = ad::ops::relu(conv(g, cf));
      auto rf = lo.pyramid;
      for (auto& conv : reg_convs_) rf = ad::ops::relu(conv(g, rf));
      lo.cls_feat = cf;
      lo.reg_feat = rf;
      lo.cls_logits = cls_out_(g, cf);
      lo.box_reg = reg_out_(g, rf);
    }
    return out;
  }

 private:
  ModelConfig cfg_;
  detail::ParamStore<T> store_;
  detail::ConvLayer<T> stem_dw_, stem_pw_, stem_conv_;
  detail::NormLayer<T> stem_norm0_, stem_norm1_;
  std::vector<std::vector<detail::ResBlock<T>>> stages_;
  std::array<detail::ConvLayer<T>, 4> lateral_, smooth_;
  std::vector<detail::ConvLayer<T>> cls_convs_, reg_convs_;
  detail::ConvLayer<T> cls_out_, reg_out_;
};

using ModelF = Model<float>;
using ModelD = Model<double>;

// [N,5,H,W] batch tensor from grid maps.
ad::TensorF batch_from_gridmaps(const std::vector<const gridmap::GridMap*>& maps);
template <typename T>
ad::Tensor<T> gridmap_to_tensor(const gridmap::GridMap& map) {
  ad::Tensor<T> t({1, gridmap::kChannels, map.height(), map.width()});
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(map.data()[static_cast<std::size_t>(i)]);
  return t;
}

// Sigmoid scores + box decoding against the anchor grid, per-class NMS,
// top max_dets by score.
std::vector<geom::Detection> predict(Model<float>& model, const gridmap::GridMap& map,
                                     const std::vector<geom::AnchorLevel>& anchors, double score_thr, double nms_thr,
                                     int max_dets);

}  // namespace gridda::model
