#include "gridda/model.hpp"

#include <algorithm>

namespace gridda::model {

ModelConfig model_config_from(const Config& cfg) {
  ModelConfig m;
  m.widths = cfg.get_int_list("model.widths", m.widths);
  m.blocks = cfg.get_int_list("model.blocks", m.blocks);
  m.fpn_channels = cfg.get_int("model.fpn_channels", m.fpn_channels);
  m.head_channels = cfg.get_int("model.head_channels", m.head_channels);
  m.head_convs = cfg.get_int("model.head_convs", m.head_convs);
  m.classes = cfg.get_int("model.classes", m.classes);
  m.gn_groups = cfg.get_int("model.gn_groups", m.gn_groups);
  m.da_channels = cfg.get_int("model.da_channels", m.fpn_channels);
  const std::string norm = cfg.get_string("model.norm", "group");
  if (norm == "group")
    m.norm = NormKind::Group;
  else if (norm == "batch")
    m.norm = NormKind::Batch;
  else
    throw ParseError("config: model.norm must be 'group' or 'batch', got '" + norm + "'");
  m.anchors.basis = cfg.get_int_list("anchors.basis", m.anchors.basis);
  m.anchors.scales = cfg.get_double_list("anchors.scales", m.anchors.scales);
  m.anchors.ratios = cfg.get_double_list("anchors.ratios", m.anchors.ratios);
  m.validate();
  return m;
}

ad::TensorF batch_from_gridmaps(const std::vector<const gridmap::GridMap*>& maps) {
  if (maps.empty()) throw Error("batch_from_gridmaps: empty batch");
  const int h = maps[0]->height(), w = maps[0]->width();
  ad::TensorF t({static_cast<int>(maps.size()), gridmap::kChannels, h, w});
  const std::size_t per = static_cast<std::size_t>(gridmap::kChannels) * h * w;
  for (std::size_t n = 0; n < maps.size(); ++n) {
    if (maps[n]->height() != h || maps[n]->width() != w) throw ShapeError("batch_from_gridmaps: mixed map sizes");
    std::copy_n(maps[n]->data().data(), per, t.data() + n * per);
  }
  return t;
}

std::vector<geom::Detection> predict(Model<float>& model, const gridmap::GridMap& map,
                                     const std::vector<geom::AnchorLevel>& anchors, double score_thr, double nms_thr,
                                     int max_dets) {
  ad::GraphF g;
  auto input = g.input(gridmap_to_tensor<float>(map), false);
  auto out = model.forward(g, input, false);

  const int K = model.config().classes;
  const int A = model.config().anchors_per_cell();
  std::vector<geom::Detection> raw;
  for (int l = 0; l < 4; ++l) {
    const auto& lo = out.levels[static_cast<std::size_t>(l)];
    const auto& cls = lo.cls_logits.tensor();
    const auto& reg = lo.box_reg.tensor();
    const geom::AnchorLevel& al = anchors[static_cast<std::size_t>(l)];
    const int fh = cls.dim(2), fw = cls.dim(3);
    if (fh != al.fh || fw != al.fw) throw ShapeError("predict: anchor grid does not match feature map");
    for (int v = 0; v < fh; ++v)
      for (int u = 0; u < fw; ++u)
        for (int a = 0; a < A; ++a) {
          const geom::Anchor& anchor = al.anchors[(static_cast<std::size_t>(v) * fw + u) * A + a];
          for (int k = 0; k < K; ++k) {
            const float logit = cls.at(0, a * K + k, v, u);
            const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(logit)));
            if (score < score_thr) continue;
            geom::BoxEncoding enc;
            for (int c = 0; c < 6; ++c) enc.t[static_cast<std::size_t>(c)] = reg.at(0, a * 6 + c, v, u);
            geom::Detection det;
            det.box = geom::decode_box(enc, anchor);
            det.class_id = k;
            det.score = score;
            raw.push_back(det);
          }
        }
  }
  std::vector<geom::Detection> kept = geom::nms(raw, nms_thr);
  if (static_cast<int>(kept.size()) > max_dets) kept.resize(static_cast<std::size_t>(max_dets));
  return kept;
}

}  // namespace gridda::model
