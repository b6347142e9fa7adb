#pragma once

// Dataset machinery: a synthetic two-domain scene/lidar simulator (64-line vs
// 32-line sensors, intensity response shift, mount change, a second
// misaligned sensor), KITTI raw-data ingestion, and sample serialization.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridda/config.hpp"
#include "gridda/eval.hpp"
#include "gridda/gridmap.hpp"
#include "gridda/train.hpp"

namespace gridda::data {

inline constexpr int kCar = 0;
inline constexpr int kPedestrian = 1;
inline constexpr int kCyclist = 2;
inline constexpr int kDontCareClass = -1;

const char* class_name(int class_id);
int class_id_from(const std::string& name);  // -2 for unknown

struct SensorSpec {
  int beams = 64;
  double elev_min_deg = -18.0;
  double elev_max_deg = 2.0;
  double azimuth_step_deg = 0.8;
  double range_noise = 0.01;  // meters, sigma
  double dropout = 0.05;      // per-return drop probability
  double max_range = 70.0;
  std::array<double, 3> mount{0.0, 0.0, 1.73};
  double intensity_gain = 1.0;
  double intensity_contrast = 1.0;  // 1 keeps material contrast, 0 collapses it
  double intensity_noise = 0.03;
};

struct DomainSpec {
  std::vector<SensorSpec> sensors;  // >= 1; extra sensors get misalignment jitter
  double misalign_sigma = 0.0;      // meters, per-frame rigid offset of non-primary sensors
  double car_frac = 0.70;
  double pedestrian_frac = 0.15;
  double cyclist_frac = 0.15;
};

struct ScenePriors {
  double objects_mean = 5.0;
  int objects_min = 2;
  int objects_max = 8;
  double min_radius = 2.5;
  double radius = 10.0;  // object centers within this distance of the ego
  int clutter_min = 4;
  int clutter_max = 10;
};

struct SceneObject {
  int class_id = kDontCareClass;  // kDontCareClass marks clutter
  geom::OrientedBox box;
  double height = 1.5;
  double reflectivity = 0.3;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<SceneObject> clutter;
};

Scene sample_scene(const ScenePriors& priors, const DomainSpec& domain, Rng& rng);

// Single-sensor simulation. scene_shift displaces every surface before ray
// casting; a non-zero shift on a secondary sensor models misregistration.
struct SimCloud {
  gridmap::PointCloud cloud;
  std::vector<int> hit_object;  // index into scene.objects, -1 for ground/clutter
};
SimCloud simulate_lidar(const Scene& scene, const SensorSpec& sensor, const std::array<double, 2>& scene_shift,
                        Rng& rng);

struct FrameData {
  std::vector<gridmap::PointCloud> clouds;          // one per sensor
  std::vector<loss::LabeledBox> labels;             // objects with >= 1 return
};
FrameData simulate_frame(const Scene& scene, const DomainSpec& domain, Rng& rng);

// Labels: text lines "class x_c y_c w h theta" (meters/radians, 6 significant
// digits), '#' comments. An optional "# difficulty=<0..3>" suffix carries
// ingested difficulty bands.
struct LabeledGt {
  loss::LabeledBox box;
  std::optional<int> difficulty;
};
void write_labels(const std::string& path, const std::vector<LabeledGt>& labels);
std::vector<LabeledGt> read_labels_full(const std::string& path);
std::vector<loss::LabeledBox> read_labels(const std::string& path);

struct ManifestEntry {
  std::string gridmap_path;
  std::string label_path;
  int domain = 0;
};
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

// Generates n reproducible samples (scene -> lidar -> grid map -> labels);
// returns the manifest path. Per-sample RNG streams derive from seed + index.
std::string synth_dataset(const std::string& out_dir, int n, const ScenePriors& priors, const DomainSpec& domain,
                          const gridmap::GridSpec& grid, std::uint64_t seed, int domain_tag);

std::vector<train::Sample> load_samples(const std::string& manifest_path);

// Difficulty bands for synthetic data: easy < 15 m and >= 30 points in the
// box, moderate < 25 m and >= 10 points, hard >= 1 point, else don't-care.
struct DifficultyBands {
  double easy_range = 15.0, moderate_range = 25.0;
  int easy_points = 30, moderate_points = 10;
};
int synthetic_difficulty(const gridmap::GridMap& map, const geom::OrientedBox& box, const DifficultyBands& bands);

// Evaluation frames from a manifest: detections come from the caller per
// sample; gts get difficulty from the stored field when present, else from
// the synthetic bands.
eval::GtBox gt_from_labeled(const LabeledGt& lg, const gridmap::GridMap& map, const DifficultyBands& bands);

// Detections: label lines extended with a trailing score column.
void write_detections(const std::string& path, const std::vector<geom::Detection>& dets);
std::vector<geom::Detection> read_detections(const std::string& path);

// KITTI ingestion: velodyne/NNNNNN.bin (x,y,z,reflectance f32 quadruples),
// label_2/NNNNNN.txt (15-field lines), calib/NNNNNN.txt. Camera-frame
// locations are transformed through the calibration into the top-view ego
// frame; malformed frames are skipped with a warning, missing calib rejects
// the frame.
struct KittiIngestStats {
  std::string manifest_path;
  int frames = 0;
  int skipped = 0;
};
KittiIngestStats ingest_kitti(const std::string& velodyne_dir, const std::string& label_dir,
                              const std::string& calib_dir, const gridmap::GridSpec& grid,
                              const std::string& out_dir);

// Domain presets for the two-domain benchmark.
DomainSpec source_domain_spec();
DomainSpec target_domain_spec();
DomainSpec domain_spec_from(const Config& cfg, const std::string& which);
ScenePriors scene_priors_from(const Config& cfg);

}  // namespace gridda::data
