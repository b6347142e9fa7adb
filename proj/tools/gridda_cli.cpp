// gridda command-line entry point: dataset synthesis, KITTI ingestion,
// two-phase training, evaluation, inference, rendering and the gradient
// check suite. Logs go to stderr, machine-readable outputs to files.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "gridda/checkpoint.hpp"
#include "gridda/config.hpp"
#include "gridda/data.hpp"
#include "gridda/domain_adapt.hpp"
#include "gridda/eval.hpp"
#include "gridda/gradcheck.hpp"
#include "gridda/model.hpp"
#include "gridda/render.hpp"
#include "gridda/train.hpp"

namespace fs = std::filesystem;
using namespace gridda;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  long seed = -1;
};

Config load_config(const CommonArgs& args) {
  Config cfg;
  if (!args.config_path.empty()) cfg.merge_file(args.config_path);
  for (const auto& kv : args.overrides) cfg.set_kv(kv);
  if (args.seed >= 0) cfg.set("train.seed", std::to_string(args.seed));
  return cfg;
}

gridmap::GridSpec grid_from(const Config& cfg) {
  return gridmap::GridSpec(cfg.get_double("grid.cell_size", 0.15), cfg.get_double("grid.extent", 60.0));
}

int run_synth(const CommonArgs& common, const std::string& out_dir) {
  Config cfg = load_config(common);
  const int n = cfg.get_int("synth.count", 10);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("synth.seed", 1));
  const std::string domain = cfg.get_string("synth.domain", "source");
  const int tag = domain == "target" ? 1 : 0;
  auto spec = data::domain_spec_from(cfg, domain);
  auto priors = data::scene_priors_from(cfg);
  const std::string manifest = data::synth_dataset(out_dir, n, priors, spec, grid_from(cfg), seed, tag);
  std::cerr << "synth: wrote " << n << " " << domain << " samples, manifest " << manifest << "\n";
  return 0;
}

int run_ingest(const CommonArgs& common, const std::string& velo, const std::string& labels, const std::string& calib,
               const std::string& out_dir) {
  Config cfg = load_config(common);
  auto stats = data::ingest_kitti(velo, labels, calib, grid_from(cfg), out_dir);
  std::cerr << "ingest-kitti: " << stats.frames << " frames, " << stats.skipped << " skipped, manifest "
            << stats.manifest_path << "\n";
  return 0;
}

int run_train(const CommonArgs& common, const std::string& manifest, const std::string& out_dir) {
  Config cfg = load_config(common);
  auto samples = data::load_samples(manifest);
  auto mdl_cfg = model::model_config_from(cfg);
  auto tcfg = train::train_config_from(cfg);
  auto lcfg = train::loss_config_from_cfg(cfg);
  model::ModelF mdl(mdl_cfg, tcfg.seed);
  if (samples.empty()) throw Error("train: empty manifest");
  auto anchors = geom::generate_anchors(mdl_cfg.anchors, samples[0].map().height(), samples[0].map().width(),
                                        samples[0].map().cell_size());
  fs::create_directories(out_dir);
  const std::string metrics = (fs::path(out_dir) / "metrics_source.tsv").string();
  const std::string ckpt = (fs::path(out_dir) / "source.gdck").string();
  train::train_source(mdl, samples, tcfg, lcfg, anchors, metrics, ckpt);
  std::cerr << "train: wrote " << ckpt << "\n";
  return 0;
}

int run_adapt(const CommonArgs& common, const std::string& ckpt_path, const std::string& source_manifest,
              const std::string& target_manifest, const std::string& out_dir) {
  Config cfg = load_config(common);
  auto source = data::load_samples(source_manifest);
  auto target = data::load_samples(target_manifest);
  auto mdl_cfg = model::model_config_from(cfg);
  auto tcfg = train::train_config_from(cfg);
  auto lcfg = train::loss_config_from_cfg(cfg);
  model::ModelF mdl(mdl_cfg, tcfg.seed);
  train::OptimState restored;
  const std::int64_t start = train::load_train_checkpoint(ckpt_path, mdl.params(), &restored);
  da::DomainAdapterF adapter(mdl_cfg.fpn_channels, mdl_cfg.head_channels, mdl_cfg.da_channels, tcfg.seed + 17);
  if (source.empty() || target.empty()) throw Error("adapt: empty manifest");
  auto anchors = geom::generate_anchors(mdl_cfg.anchors, source[0].map().height(), source[0].map().width(),
                                        source[0].map().cell_size());
  fs::create_directories(out_dir);
  const std::string metrics = (fs::path(out_dir) / "metrics_adapt.tsv").string();
  const std::string out_ckpt = (fs::path(out_dir) / "adapted.gdck").string();
  train::adapt_domains(mdl, adapter, source, target, tcfg, lcfg, anchors, metrics, out_ckpt, start, &restored);
  std::cerr << "adapt: wrote " << out_ckpt << "\n";
  return 0;
}

model::ModelF load_model(const Config& cfg, const std::string& ckpt_path) {
  auto mdl_cfg = model::model_config_from(cfg);
  model::ModelF mdl(mdl_cfg, 0);
  auto entries = checkpoint::load(ckpt_path);
  // DA classifier and optimizer entries are training-only and may be absent
  checkpoint::assign(mdl.params(), entries, true);
  return mdl;
}

int run_eval(const CommonArgs& common, const std::string& ckpt_path, const std::string& manifest,
             const std::string& out_dir) {
  Config cfg = load_config(common);
  model::ModelF mdl = load_model(cfg, ckpt_path);
  auto samples = data::load_samples(manifest);
  if (samples.empty()) throw Error("eval: empty manifest");
  auto anchors = geom::generate_anchors(mdl.config().anchors, samples[0].map().height(), samples[0].map().width(),
                                        samples[0].map().cell_size());
  const double score_thr = cfg.get_double("predict.score_thr", 0.05);
  const double nms_thr = cfg.get_double("predict.nms_thr", 0.3);
  const int max_dets = cfg.get_int("predict.max_dets", 100);

  data::DifficultyBands bands;
  bands.easy_range = cfg.get_double("eval.easy_range", bands.easy_range);
  bands.moderate_range = cfg.get_double("eval.moderate_range", bands.moderate_range);
  bands.easy_points = cfg.get_int("eval.easy_points", bands.easy_points);
  bands.moderate_points = cfg.get_int("eval.moderate_points", bands.moderate_points);

  eval::EvalConfig ecfg;
  ecfg.iou_thr[data::kCar] = cfg.get_double("eval.iou_car", 0.5);
  ecfg.iou_thr[data::kPedestrian] = cfg.get_double("eval.iou_pedestrian", 0.5);
  ecfg.iou_thr[data::kCyclist] = cfg.get_double("eval.iou_cyclist", 0.5);

  auto entries = data::read_manifest(manifest);
  std::vector<eval::Frame> frames;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    eval::Frame frame;
    frame.dets = model::predict(mdl, samples[i].map(), anchors, score_thr, nms_thr, max_dets);
    for (const auto& lg : data::read_labels_full(entries[i].label_path))
      frame.gts.push_back(data::gt_from_labeled(lg, samples[i].map(), bands));
    frames.push_back(std::move(frame));
  }

  auto kitti = eval::evaluate_kitti_style(frames, ecfg);
  auto nusc = eval::evaluate_nuscenes_style(frames, ecfg);
  fs::create_directories(out_dir);
  {
    std::ofstream f(fs::path(out_dir) / "report.tsv");
    f << eval::format_report(kitti, nusc);
  }
  {
    auto [seq, num_gt] = eval::pooled_iou_matches(frames, data::kCar, ecfg.iou_thr[data::kCar], eval::kModerate);
    std::ofstream f(fs::path(out_dir) / "pr_car_moderate.tsv");
    f << eval::format_pr_table(eval::pr_curve(std::move(seq), num_gt));
  }
  {
    std::ofstream f(fs::path(out_dir) / "ap_vs_iou_car.tsv");
    f << eval::format_ap_iou_table(eval::ap_vs_iou_sweep(frames, data::kCar, eval::kModerate));
  }
  std::cerr << "eval: reports written to " << out_dir << "\n";
  std::cout << eval::format_report(kitti, nusc);
  return 0;
}

int run_predict(const CommonArgs& common, const std::string& ckpt_path, const std::string& gridmap_path,
                const std::string& out_path) {
  Config cfg = load_config(common);
  model::ModelF mdl = load_model(cfg, ckpt_path);
  gridmap::GridMap map = gridmap::read_gridmap(gridmap_path);
  auto anchors = geom::generate_anchors(mdl.config().anchors, map.height(), map.width(), map.cell_size());
  auto dets = model::predict(mdl, map, anchors, cfg.get_double("predict.score_thr", 0.05),
                             cfg.get_double("predict.nms_thr", 0.3), cfg.get_int("predict.max_dets", 100));
  data::write_detections(out_path, dets);
  std::cerr << "predict: " << dets.size() << " detections -> " << out_path << "\n";
  return 0;
}

int run_render(const std::string& gridmap_path, const std::string& labels_path, const std::string& dets_path,
               const std::string& out_path) {
  gridmap::GridMap map = gridmap::read_gridmap(gridmap_path);
  std::vector<loss::LabeledBox> boxes;
  if (!labels_path.empty()) boxes = data::read_labels(labels_path);
  std::vector<geom::Detection> dets;
  if (!dets_path.empty()) dets = data::read_detections(dets_path);
  render::write_ppm(render::render_gridmap(map, boxes, dets), out_path);
  std::cerr << "render: wrote " << out_path << "\n";
  return 0;
}

int run_check_grad() {
  auto suite = ad::gradcheck::run_suite();
  for (const auto& c : suite.cases) std::cerr << c.name << ": " << c.max_rel_err << "\n";
  std::cout << "primitives max relative error: " << suite.primitives_max << "\n";
  std::cout << "end-to-end max relative error: " << suite.end_to_end << "\n";
  const bool ok = std::max(suite.primitives_max, suite.end_to_end) < 1e-3;
  std::cout << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridda: domain-adaptive object detection on top-view grid maps"};
  app.require_subcommand(1);

  CommonArgs common;
  app.add_option("--config", common.config_path, "config file (key=value lines)");
  app.add_option("--set", common.overrides, "config override key=value (repeatable; overrides win)")->take_all();
  app.add_option("--seed", common.seed, "training seed override");

  std::string out_dir = "out", manifest, src_manifest, tgt_manifest, ckpt, velo, labels, calib;
  std::string gridmap_path, labels_path, dets_path, out_path;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--out", out_dir, "output directory");

  auto* ingest = app.add_subcommand("ingest-kitti", "ingest a KITTI-format dataset");
  ingest->add_option("--velodyne", velo, "velodyne .bin directory")->required();
  ingest->add_option("--labels", labels, "label_2 directory")->required();
  ingest->add_option("--calib", calib, "calib directory")->required();
  ingest->add_option("--out", out_dir, "output directory");

  auto* tr = app.add_subcommand("train", "source-only detector training");
  tr->add_option("--manifest", manifest, "training manifest")->required();
  tr->add_option("--out", out_dir, "output directory");

  auto* ad_cmd = app.add_subcommand("adapt", "adversarial domain adaptation fine-tuning");
  ad_cmd->add_option("--checkpoint", ckpt, "pretrained checkpoint")->required();
  ad_cmd->add_option("--source-manifest", src_manifest, "labeled source manifest")->required();
  ad_cmd->add_option("--target-manifest", tgt_manifest, "unlabeled target manifest")->required();
  ad_cmd->add_option("--out", out_dir, "output directory");

  auto* ev = app.add_subcommand("eval", "run both evaluation protocols");
  ev->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  ev->add_option("--manifest", manifest, "evaluation manifest")->required();
  ev->add_option("--out", out_dir, "output directory");

  auto* pr = app.add_subcommand("predict", "detect objects in one grid map");
  pr->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  pr->add_option("gridmap", gridmap_path, "input .gmap file")->required();
  pr->add_option("--out", out_path, "output detections file")->required();

  auto* rd = app.add_subcommand("render", "render a grid map with box overlays");
  rd->add_option("gridmap", gridmap_path, "input .gmap file")->required();
  rd->add_option("output", out_path, "output .ppm file")->required();
  rd->add_option("--labels", labels_path, "label file overlay");
  rd->add_option("--detections", dets_path, "detections file overlay");

  app.add_subcommand("check-grad", "finite-difference gradient check suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return run_synth(common, out_dir);
    if (ingest->parsed()) return run_ingest(common, velo, labels, calib, out_dir);
    if (tr->parsed()) return run_train(common, manifest, out_dir);
    if (ad_cmd->parsed()) return run_adapt(common, ckpt, src_manifest, tgt_manifest, out_dir);
    if (ev->parsed()) return run_eval(common, ckpt, manifest, out_dir);
    if (pr->parsed()) return run_predict(common, ckpt, gridmap_path, out_path);
    if (rd->parsed()) return run_render(gridmap_path, labels_path, dets_path, out_path);
    if (app.get_subcommand("check-grad")->parsed()) return run_check_grad();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
