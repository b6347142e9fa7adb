#pragma once

// Two-phase optimization: source-only pretraining, then adversarial
// fine-tuning on mixed half-source/half-target batches. SGD with momentum and
// coupled weight decay, step-wise learning rate, optional global-norm clip.
//
// Batches and flip augmentation are stateless functions of (seed, step), so a
// resumed run from a checkpoint (params + momentum + step counter) continues
// the exact same trajectory.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridda/checkpoint.hpp"
#include "gridda/domain_adapt.hpp"
#include "gridda/losses.hpp"
#include "gridda/model.hpp"

namespace gridda::train {

struct TrainConfig {
  int steps_source = 3000;
  int steps_adapt = 2000;
  double lr1 = 1e-4;
  double lr2 = 1e-5;
  std::int64_t lr_boundary = -1;  // global step where lr2 takes over; -1 = steps_source
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 4;  // adaptation batches are half source, half target
  double clip_norm = 10.0;
  bool flip = true;
  std::uint64_t seed = 1;
  int log_every = 1;
  bool img_da = true;
  bool ins_da = true;
  bool cons = true;
  double fg_thr = 0.5;  // anchor assignment thresholds with an ignore band
  double bg_thr = 0.4;
};

TrainConfig train_config_from(const Config& cfg);
loss::LossConfig loss_config_from_cfg(const Config& cfg);

// One training example. Ground truth sits behind an accessor that counts
// reads: the adaptation phase asserts target labels were never read.
class Sample {
 public:
  Sample() = default;
  Sample(gridmap::GridMap map, std::vector<loss::LabeledBox> boxes, int domain)
      : map_(std::move(map)), boxes_(std::move(boxes)), domain_(domain) {}

  const gridmap::GridMap& map() const { return map_; }
  int domain() const { return domain_; }
  const std::vector<loss::LabeledBox>& gt() const {
    ++label_reads_;
    return boxes_;
  }
  std::int64_t label_reads() const { return label_reads_; }

  // Mirror along the x axis: columns reversed, x -> -x, theta -> pi - theta.
  Sample flipped(bool with_labels) const;

 private:
  gridmap::GridMap map_;
  std::vector<loss::LabeledBox> boxes_;
  int domain_ = 0;
  mutable std::int64_t label_reads_ = 0;
};

double lr_at(std::int64_t step, const TrainConfig& cfg);

struct OptimState {
  std::map<std::string, ad::TensorF> velocity;  // one buffer per trainable parameter
  std::int64_t step = 0;
};

OptimState make_optim_state(const std::vector<ad::ParamF*>& params);
// Copies matching velocity buffers and the step counter from a restored state.
void merge_optim_state(OptimState& into, const OptimState& from);

// v <- momentum v + (grad + weight_decay param); param <- param - lr v.
// Rejects non-finite gradients, reporting the parameter name.
void sgd_step(const std::vector<ad::ParamF*>& params, OptimState& state, double lr, double momentum,
              double weight_decay);

// Global-norm clip over all trainable grads; no-op when max_norm <= 0.
void clip_gradients(const std::vector<ad::ParamF*>& params, double max_norm);

// k distinct uniform indices from [0, pool_size).
std::vector<int> draw_without_replacement(Rng& rng, int pool_size, int k);

struct BatchSlot {
  int index = 0;       // into its pool
  bool from_target = false;
  bool flipped = false;
};

// Stateless batch plan for one step: sources first, then targets. The source
// half depends only on (seed, step), never on the target pool, so a lambda1=0
// adaptation matches a continued source-only run drawing half-size batches.
std::vector<BatchSlot> make_batch_plan(std::uint64_t seed, std::int64_t step, int source_pool, int target_pool,
                                       int batch_size, bool with_flip);

struct LossReport {
  double total = 0, l_det = 0, l_cls = 0, l_box = 0, l_da = 0;
  std::array<double, 4> img{}, ins{}, cons{};
};

std::string metrics_header();
std::string metrics_line(std::int64_t step, const LossReport& r);

struct Phase1Result {
  std::int64_t final_step = 0;
};

// Source-only pretraining: optimizes L_det, logs one metrics line per step,
// writes checkpoint (params + optimizer state + step).
Phase1Result train_source(model::ModelF& model, const std::vector<Sample>& source_pool, const TrainConfig& cfg,
                          const loss::LossConfig& lcfg, const std::vector<geom::AnchorLevel>& anchors,
                          const std::string& metrics_path, const std::string& checkpoint_path,
                          std::int64_t start_step = 0, std::optional<int> steps_override = std::nullopt,
                          const OptimState* resume = nullptr);

// Adversarial fine-tuning from a pretrained detector. DA classifiers are
// created fresh by the caller. The detection loss never touches the target
// half; a firewall asserts target labels stay unread.
Phase1Result adapt_domains(model::ModelF& model, da::DomainAdapterF& adapter, const std::vector<Sample>& source_pool,
                           const std::vector<Sample>& target_pool, const TrainConfig& cfg,
                           const loss::LossConfig& lcfg, const std::vector<geom::AnchorLevel>& anchors,
                           const std::string& metrics_path, const std::string& checkpoint_path,
                           std::int64_t start_step, const OptimState* resume = nullptr);

void save_train_checkpoint(const std::string& path, const std::vector<ad::ParamF*>& params, const OptimState& state);
// Restores params and optimizer state; returns the stored step counter.
std::int64_t load_train_checkpoint(const std::string& path, const std::vector<ad::ParamF*>& params, OptimState* state);

}  // namespace gridda::train
