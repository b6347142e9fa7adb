#pragma once

// Adversarial domain classifiers: one image-level classifier per pyramid
// level (unshared) on P_l, and a single instance-level classifier shared
// across levels on concatenated head features. Each sits behind a gradient
// reversal layer during adversarial training.

#include <array>
#include <string>

#include "gridda/model.hpp"

namespace gridda::da {

template <typename T>
struct DomainClassifier {
  model::detail::ConvLayer<T> conv1, conv2, out;

  static DomainClassifier make(model::detail::ParamStore<T>& store, model::detail::Init<T>& init,
                               const std::string& name, int in_channels, int width) {
    DomainClassifier c;
    c.conv1 = model::detail::ConvLayer<T>::make(store, init, name + "/conv1", in_channels, width, 3, 1, 1);
    c.conv2 = model::detail::ConvLayer<T>::make(store, init, name + "/conv2", width, width, 3, 1, 1);
    c.out = model::detail::ConvLayer<T>::make(store, init, name + "/out", width, 1, 1, 1, 0);
    c.out.pad = 0;
    // zero-init final 1x1: domain predictions start at 0.5 and adversarial
    // pressure ramps up smoothly
    std::fill(c.out.w->value.vec().begin(), c.out.w->value.vec().end(), T(0));
    return c;
  }

  // N x 1 x H x W probabilities in (0,1), same spatial dims as the input patch.
  ad::Value<T> forward(ad::Graph<T>& g, const ad::Value<T>& x) const {
    auto y = ad::ops::relu(conv1(g, x));
    y = ad::ops::relu(conv2(g, y));
    return ad::ops::sigmoid(out(g, y));
  }
};

template <typename T>
class DomainAdapter {
 public:
  DomainAdapter(int fpn_channels, int head_channels, int da_channels, std::uint64_t seed) {
    model::detail::Init<T> init(seed);
    for (int l = 0; l < 4; ++l)
      img_[static_cast<std::size_t>(l)] = DomainClassifier<T>::make(
          store_, init, "da/img/" + std::to_string(l + 1), fpn_channels, da_channels);
    ins_ = DomainClassifier<T>::make(store_, init, "da/ins", 2 * head_channels, da_channels);
  }

  std::vector<ad::Parameter<T>*> params() { return store_.all(); }

  // p_img[l] = classifier_l(grad_reverse(P_l, lambda)); use_grl=false applies
  // the classifier directly (consistency path and the reversal contract test).
  std::array<ad::Value<T>, 4> image_forward(ad::Graph<T>& g, const model::ForwardOutputs<T>& fwd, T lambda,
                                            bool use_grl) const {
    std::array<ad::Value<T>, 4> out;
    for (int l = 0; l < 4; ++l) {
      auto x = fwd.levels[static_cast<std::size_t>(l)].pyramid;
      if (use_grl) x = ad::ops::grad_reverse(x, lambda);
      out[static_cast<std::size_t>(l)] = img_[static_cast<std::size_t>(l)].forward(g, x);
    }
    return out;
  }

  // Single shared classifier over concat(cls_feat, reg_feat) at every level.
  std::array<ad::Value<T>, 4> instance_forward(ad::Graph<T>& g, const model::ForwardOutputs<T>& fwd, T lambda,
                                               bool use_grl) const {
    std::array<ad::Value<T>, 4> out;
    for (int l = 0; l < 4; ++l) {
      const auto& lo = fwd.levels[static_cast<std::size_t>(l)];
      auto x = ad::ops::concat_channels(lo.cls_feat, lo.reg_feat);
      if (use_grl) x = ad::ops::grad_reverse(x, lambda);
      out[static_cast<std::size_t>(l)] = ins_.forward(g, x);
    }
    return out;
  }

  const DomainClassifier<T>& image_classifier(int level) const { return img_[static_cast<std::size_t>(level)]; }
  const DomainClassifier<T>& instance_classifier() const { return ins_; }

 private:
  model::detail::ParamStore<T> store_;
  std::array<DomainClassifier<T>, 4> img_;
  DomainClassifier<T> ins_;
};

using DomainAdapterF = DomainAdapter<float>;

}  // namespace gridda::da
