#include "gridda/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

namespace gridda::train {

namespace {
constexpr std::uint64_t kSourceSalt = 0x5ec1a75005ULL;
constexpr std::uint64_t kTargetSalt = 0x7a96e7ba11ULL;
constexpr std::uint64_t kFlipSalt = 0xf11b0a57ULL;
}  // namespace

TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.steps_source = cfg.get_int("train.steps_source", t.steps_source);
  t.steps_adapt = cfg.get_int("train.steps_adapt", t.steps_adapt);
  t.lr1 = cfg.get_double("train.lr1", t.lr1);
  t.lr2 = cfg.get_double("train.lr2", t.lr2);
  t.lr_boundary = cfg.get_int("train.lr_boundary", -1);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.batch_size = cfg.get_int("train.batch_size", t.batch_size);
  t.clip_norm = cfg.get_double("train.clip_norm", t.clip_norm);
  t.flip = cfg.get_bool("train.flip", t.flip);
  t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 1));
  t.log_every = cfg.get_int("train.log_every", t.log_every);
  t.img_da = cfg.get_bool("train.img_da", t.img_da);
  t.ins_da = cfg.get_bool("train.ins_da", t.ins_da);
  t.cons = cfg.get_bool("train.cons", t.cons);
  t.fg_thr = cfg.get_double("assign.fg_thr", t.fg_thr);
  t.bg_thr = cfg.get_double("assign.bg_thr", t.bg_thr);
  return t;
}

loss::LossConfig loss_config_from_cfg(const Config& cfg) {
  loss::LossConfig l;
  l.lambda1 = cfg.get_double("loss.lambda1", l.lambda1);
  l.lambda2 = cfg.get_double("loss.lambda2", l.lambda2);
  l.gamma = cfg.get_double("loss.gamma", l.gamma);
  l.alpha = cfg.get_double("loss.alpha", l.alpha);
  l.smooth_l1_delta = cfg.get_double("loss.smooth_l1_delta", l.smooth_l1_delta);
  l.literal_domain_bce = cfg.get_bool("loss.literal_domain_bce", l.literal_domain_bce);
  l.cons_in_grl = cfg.get_bool("loss.cons_in_grl", l.cons_in_grl);
  l.grl_lambda = cfg.get_double("loss.grl_lambda", l.grl_lambda);
  return l;
}

Sample Sample::flipped(bool with_labels) const {
  gridmap::GridMap m(map_.cell_size(), map_.extent(), map_.height(), map_.width());
  const int w = map_.width();
  for (int c = 0; c < gridmap::kChannels; ++c)
    for (int v = 0; v < map_.height(); ++v)
      for (int u = 0; u < w; ++u) m.at(c, v, u) = map_.at(c, v, w - 1 - u);
  std::vector<loss::LabeledBox> boxes;
  if (with_labels) {
    boxes = boxes_;
    for (auto& b : boxes) {
      b.box.x = -b.box.x;
      b.box.theta = geom::canonical_theta(geom::kPi - b.box.theta);
    }
  }
  return Sample(std::move(m), std::move(boxes), domain_);
}

double lr_at(std::int64_t step, const TrainConfig& cfg) {
  if (step < 0) throw Error("lr_at: negative step");
  const std::int64_t boundary = cfg.lr_boundary >= 0 ? cfg.lr_boundary : cfg.steps_source;
  return step < boundary ? cfg.lr1 : cfg.lr2;
}

OptimState make_optim_state(const std::vector<ad::ParamF*>& params) {
  OptimState s;
  for (auto* p : params)
    if (p->trainable) s.velocity.emplace(p->name, ad::TensorF(p->value.shape()));
  return s;
}

void merge_optim_state(OptimState& into, const OptimState& from) {
  for (const auto& [name, buf] : from.velocity) {
    auto it = into.velocity.find(name);
    if (it != into.velocity.end() && it->second.shape() == buf.shape()) it->second = buf;
  }
  into.step = from.step;
}

void sgd_step(const std::vector<ad::ParamF*>& params, OptimState& state, double lr, double momentum,
              double weight_decay) {
  const float m = static_cast<float>(momentum);
  const float wd = static_cast<float>(weight_decay);
  const float lrf = static_cast<float>(lr);
  for (ad::ParamF* pp : params) {
    ad::ParamF& p = *pp;
    if (!p.trainable) continue;
    if (!p.grad.all_finite()) throw NumericError("sgd_step: non-finite gradient in parameter '" + p.name + "'");
    auto it = state.velocity.find(p.name);
    if (it == state.velocity.end()) throw Error("sgd_step: no optimizer state for parameter '" + p.name + "'");
    ad::TensorF& v = it->second;
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      v[i] = m * v[i] + (p.grad[i] + wd * p.value[i]);
      p.value[i] -= lrf * v[i];
    }
  }
  ++state.step;
}

void clip_gradients(const std::vector<ad::ParamF*>& params, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (auto* p : params) {
    if (!p->trainable) continue;
    for (std::int64_t i = 0; i < p->grad.numel(); ++i) sq += static_cast<double>(p->grad[i]) * p->grad[i];
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const float scale = static_cast<float>(max_norm / norm);
  for (auto* p : params) {
    if (!p->trainable) continue;
    for (std::int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= scale;
  }
}

std::vector<int> draw_without_replacement(Rng& rng, int pool_size, int k) {
  if (pool_size <= 0) throw Error("make_batch: empty pool");
  if (k > pool_size) throw Error("make_batch: batch larger than pool");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  std::uniform_int_distribution<int> dist(0, pool_size - 1);
  while (static_cast<int>(out.size()) < k) {
    const int idx = dist(rng);
    bool dup = false;
    for (int o : out) dup = dup || (o == idx);
    if (!dup) out.push_back(idx);
  }
  return out;
}

std::vector<BatchSlot> make_batch_plan(std::uint64_t seed, std::int64_t step, int source_pool, int target_pool,
                                       int batch_size, bool with_flip) {
  const int n_src = target_pool > 0 ? batch_size / 2 : batch_size;
  const int n_tgt = target_pool > 0 ? batch_size - n_src : 0;
  Rng src_rng(substream_seed(seed ^ kSourceSalt, static_cast<std::uint64_t>(step)));
  std::vector<BatchSlot> plan;
  plan.reserve(static_cast<std::size_t>(batch_size));
  for (int idx : draw_without_replacement(src_rng, source_pool, n_src)) plan.push_back({idx, false, false});
  if (n_tgt > 0) {
    Rng tgt_rng(substream_seed(seed ^ kTargetSalt, static_cast<std::uint64_t>(step)));
    for (int idx : draw_without_replacement(tgt_rng, target_pool, n_tgt)) plan.push_back({idx, true, false});
  }
  if (with_flip) {
    for (std::size_t slot = 0; slot < plan.size(); ++slot)
      plan[slot].flipped =
          (substream_seed(seed ^ kFlipSalt, static_cast<std::uint64_t>(step) * 16 + slot) & 1ULL) != 0;
  }
  return plan;
}

std::string metrics_header() {
  std::string h = "#step\ttotal\tL_det\tL_cls\tL_box\tL_DA";
  for (int l = 1; l <= 4; ++l) h += "\timg" + std::to_string(l);
  for (int l = 1; l <= 4; ++l) h += "\tins" + std::to_string(l);
  for (int l = 1; l <= 4; ++l) h += "\tcons" + std::to_string(l);
  return h;
}

namespace {
void append_num(std::string& s, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "\t%.9g", v);
  s += buf;
}
}  // namespace

std::string metrics_line(std::int64_t step, const LossReport& r) {
  std::string s = std::to_string(step);
  append_num(s, r.total);
  append_num(s, r.l_det);
  append_num(s, r.l_cls);
  append_num(s, r.l_box);
  append_num(s, r.l_da);
  for (double v : r.img) append_num(s, v);
  for (double v : r.ins) append_num(s, v);
  for (double v : r.cons) append_num(s, v);
  return s;
}

namespace {

struct SampleView {
  const gridmap::GridMap* map = nullptr;
  const std::vector<loss::LabeledBox>* boxes = nullptr;  // null for target samples
  int domain = 0;
  std::uint64_t cache_key = 0;
};

// Flipped samples and anchor assignments are pure functions of the pool entry;
// cached across steps within one training run.
struct RunCache {
  std::unordered_map<std::uint64_t, Sample> flipped;
  std::unordered_map<std::uint64_t, geom::AssignmentResult> assignments;
};

std::uint64_t slot_key(const BatchSlot& s) {
  return (static_cast<std::uint64_t>(s.index) << 2) | (s.from_target ? 2u : 0u) | (s.flipped ? 1u : 0u);
}

SampleView resolve_slot(const BatchSlot& slot, const std::vector<Sample>& src, const std::vector<Sample>& tgt,
                        RunCache& cache) {
  const std::vector<Sample>& pool = slot.from_target ? tgt : src;
  const Sample& base = pool[static_cast<std::size_t>(slot.index)];
  SampleView view;
  view.domain = base.domain();
  view.cache_key = slot_key(slot);
  if (!slot.flipped) {
    view.map = &base.map();
    if (!slot.from_target) view.boxes = &base.gt();
    return view;
  }
  auto it = cache.flipped.find(view.cache_key);
  if (it == cache.flipped.end()) {
    // target labels are never materialized in flipped views: the firewall
    // guarantees the adaptation phase cannot read them
    it = cache.flipped.emplace(view.cache_key, base.flipped(!slot.from_target)).first;
  }
  view.map = &it->second.map();
  if (!slot.from_target) view.boxes = &it->second.gt();
  return view;
}

struct TrainerCore {
  model::ModelF& model;
  da::DomainAdapterF* adapter;
  const TrainConfig& cfg;
  const loss::LossConfig& lcfg;
  const std::vector<geom::AnchorLevel>& anchors;
  std::vector<geom::Anchor> flat_anchors;
  std::vector<ad::ParamF*> params;
  OptimState state;
  RunCache cache;
  double fg_thr, bg_thr;

  TrainerCore(model::ModelF& m, da::DomainAdapterF* a, const TrainConfig& c, const loss::LossConfig& lc,
              const std::vector<geom::AnchorLevel>& anc, double fg, double bg)
      : model(m), adapter(a), cfg(c), lcfg(lc), anchors(anc), fg_thr(fg), bg_thr(bg) {
    for (const auto& lvl : anchors) flat_anchors.insert(flat_anchors.end(), lvl.anchors.begin(), lvl.anchors.end());
    params = model.params();
    if (adapter) {
      auto ap = adapter->params();
      params.insert(params.end(), ap.begin(), ap.end());
    }
    state = make_optim_state(params);
  }

  const geom::AssignmentResult& assignment_for(const SampleView& view) {
    auto it = cache.assignments.find(view.cache_key);
    if (it != cache.assignments.end()) return it->second;
    std::vector<geom::OrientedBox> boxes;
    for (const auto& lb : *view.boxes) boxes.push_back(lb.box);
    auto res = geom::assign_targets(flat_anchors, boxes, fg_thr, bg_thr);
    return cache.assignments.emplace(view.cache_key, std::move(res)).first->second;
  }

  LossReport step(std::int64_t global_step, const std::vector<SampleView>& batch) {
    ad::GraphF g;
    std::vector<const gridmap::GridMap*> maps;
    std::vector<int> domains;
    std::vector<std::vector<loss::LabeledBox>> gts;
    std::vector<geom::AssignmentResult> assigns;
    for (const auto& view : batch) {
      maps.push_back(view.map);
      domains.push_back(view.domain);
      if (view.domain == 0 && view.boxes) {
        gts.push_back(*view.boxes);
        assigns.push_back(assignment_for(view));
      } else {
        gts.emplace_back();
        assigns.emplace_back();
      }
    }

    for (auto* p : params) p->zero_grad();
    auto input = g.input(model::batch_from_gridmaps(maps), false);
    auto fwd = model.forward(g, input, true);
    auto targets = loss::build_det_targets<float>(anchors, gts, domains, assigns, model.config().classes);
    auto det = loss::detection_loss(g, fwd, targets, lcfg);

    LossReport rep;
    ad::ValueF total = det.l_det;
    const bool use_img = adapter && cfg.img_da;
    const bool use_ins = adapter && cfg.ins_da;
    const bool use_cons = adapter && cfg.cons && use_img && use_ins;
    if (adapter && lcfg.lambda1 > 0 && (use_img || use_ins)) {
      const float lam = static_cast<float>(lcfg.grl_lambda);
      std::array<ad::ValueF, 4> l_img{}, l_ins{}, l_cons{};
      std::array<ad::ValueF, 4> img_adv{}, ins_adv{};
      if (use_img) {
        img_adv = adapter->image_forward(g, fwd, lam, true);
        for (int l = 0; l < 4; ++l) l_img[l] = loss::domain_bce(g, img_adv[l], domains, lcfg);
      }
      if (use_ins) {
        ins_adv = adapter->instance_forward(g, fwd, lam, true);
        for (int l = 0; l < 4; ++l) l_ins[l] = loss::domain_bce(g, ins_adv[l], domains, lcfg);
      }
      if (use_cons) {
        // consistency stays outside the reversal unless configured otherwise:
        // feature extractor, head and classifiers all minimize it
        std::array<ad::ValueF, 4> pi = lcfg.cons_in_grl ? img_adv : adapter->image_forward(g, fwd, lam, false);
        std::array<ad::ValueF, 4> pn = lcfg.cons_in_grl ? ins_adv : adapter->instance_forward(g, fwd, lam, false);
        for (int l = 0; l < 4; ++l) l_cons[l] = loss::consistency_loss(g, pi[l], pn[l]);
      }
      auto l_da = loss::da_total(g, use_img ? &l_img : nullptr, use_ins ? &l_ins : nullptr,
                                 use_cons ? &l_cons : nullptr);
      total = ad::ops::add(det.l_det, ad::ops::affine(l_da, static_cast<float>(lcfg.lambda1), 0.0f));
      rep.l_da = l_da.item();
      for (int l = 0; l < 4; ++l) {
        if (use_img) rep.img[static_cast<std::size_t>(l)] = l_img[l].item();
        if (use_ins) rep.ins[static_cast<std::size_t>(l)] = l_ins[l].item();
        if (use_cons) rep.cons[static_cast<std::size_t>(l)] = l_cons[l].item();
      }
    }

    g.backward(total);
    clip_gradients(params, cfg.clip_norm);
    sgd_step(params, state, lr_at(global_step, cfg), cfg.momentum, cfg.weight_decay);

    rep.total = total.item();
    rep.l_det = det.l_det.item();
    rep.l_cls = det.l_cls.item();
    rep.l_box = det.l_box.item();
    return rep;
  }
};

}  // namespace

void save_train_checkpoint(const std::string& path, const std::vector<ad::ParamF*>& params, const OptimState& state) {
  std::deque<ad::ParamF> extra;
  std::vector<ad::ParamF*> entries = params;
  for (const auto* p : params) {
    if (!p->trainable) continue;
    auto it = state.velocity.find(p->name);
    if (it == state.velocity.end()) continue;
    extra.emplace_back("optim/" + p->name, it->second);
    entries.push_back(&extra.back());
  }
  ad::TensorF step({1});
  step[0] = static_cast<float>(state.step);
  extra.emplace_back("meta/step", step);
  entries.push_back(&extra.back());
  checkpoint::save(path, entries);
}

std::int64_t load_train_checkpoint(const std::string& path, const std::vector<ad::ParamF*>& params,
                                   OptimState* state) {
  auto entries = checkpoint::load(path);
  checkpoint::assign(params, entries, true);
  if (state) {
    *state = make_optim_state(params);
    for (auto* p : params) {
      auto it = entries.find("optim/" + p->name);
      auto vit = state->velocity.find(p->name);
      if (it != entries.end() && vit != state->velocity.end() && it->second.shape() == vit->second.shape())
        vit->second = it->second;
    }
    auto st = entries.find("meta/step");
    if (st != entries.end()) state->step = static_cast<std::int64_t>(st->second[0]);
  }
  auto st = entries.find("meta/step");
  return st != entries.end() ? static_cast<std::int64_t>(st->second[0]) : 0;
}

namespace {

void run_phase(TrainerCore& core, const std::vector<Sample>& src, const std::vector<Sample>& tgt,
               std::int64_t start_step, int steps, const std::string& metrics_path, const std::string& ckpt_path) {
  std::ofstream log;
  if (!metrics_path.empty()) {
    log.open(metrics_path);
    if (!log) throw IoError("train: cannot open metrics log " + metrics_path);
    log << metrics_header() << "\n";
  }
  core.state.step = start_step;
  for (std::int64_t s = start_step; s < start_step + steps; ++s) {
    auto plan = make_batch_plan(core.cfg.seed, s, static_cast<int>(src.size()), static_cast<int>(tgt.size()),
                                core.cfg.batch_size, core.cfg.flip);
    std::vector<SampleView> batch;
    batch.reserve(plan.size());
    for (const auto& slot : plan) batch.push_back(resolve_slot(slot, src, tgt, core.cache));
    LossReport rep = core.step(s, batch);
    if (log.is_open() && (s % core.cfg.log_every == 0 || s + 1 == start_step + steps))
      log << metrics_line(s, rep) << "\n";
  }
  if (log.is_open()) log.close();
  if (!ckpt_path.empty()) save_train_checkpoint(ckpt_path, core.params, core.state);
}

}  // namespace

Phase1Result train_source(model::ModelF& model, const std::vector<Sample>& source_pool, const TrainConfig& cfg,
                          const loss::LossConfig& lcfg, const std::vector<geom::AnchorLevel>& anchors,
                          const std::string& metrics_path, const std::string& checkpoint_path,
                          std::int64_t start_step, std::optional<int> steps_override, const OptimState* resume) {
  for (const auto& s : source_pool)
    if (s.domain() != 0) throw Error("train_source: pool contains non-source samples");
  TrainerCore core(model, nullptr, cfg, lcfg, anchors, cfg.fg_thr, cfg.bg_thr);
  if (resume) merge_optim_state(core.state, *resume);
  const int steps = steps_override.value_or(cfg.steps_source);
  run_phase(core, source_pool, {}, start_step, steps, metrics_path, checkpoint_path);
  return {start_step + steps};
}

Phase1Result adapt_domains(model::ModelF& model, da::DomainAdapterF& adapter, const std::vector<Sample>& source_pool,
                           const std::vector<Sample>& target_pool, const TrainConfig& cfg,
                           const loss::LossConfig& lcfg, const std::vector<geom::AnchorLevel>& anchors,
                           const std::string& metrics_path, const std::string& checkpoint_path,
                           std::int64_t start_step, const OptimState* resume) {
  if (source_pool.empty() || target_pool.empty()) throw Error("adapt_domains: both pools must be non-empty");
  std::vector<std::int64_t> reads_before;
  reads_before.reserve(target_pool.size());
  for (const auto& s : target_pool) reads_before.push_back(s.label_reads());

  TrainerCore core(model, &adapter, cfg, lcfg, anchors, cfg.fg_thr, cfg.bg_thr);
  if (resume) merge_optim_state(core.state, *resume);
  run_phase(core, source_pool, target_pool, start_step, cfg.steps_adapt, metrics_path, checkpoint_path);

  for (std::size_t i = 0; i < target_pool.size(); ++i)
    if (target_pool[i].label_reads() != reads_before[i])
      throw Error("adapt_domains: target-label firewall tripped: labels of a target sample were read");
  return {start_step + cfg.steps_adapt};
}

}  // namespace gridda::train
