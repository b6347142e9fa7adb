#include "gridda/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace gridda::data {

const char* class_name(int class_id) {
  switch (class_id) {
    case kCar: return "car";
    case kPedestrian: return "pedestrian";
    case kCyclist: return "cyclist";
    case kDontCareClass: return "dontcare";
    default: return "unknown";
  }
}

int class_id_from(const std::string& name) {
  if (name == "car") return kCar;
  if (name == "pedestrian") return kPedestrian;
  if (name == "cyclist") return kCyclist;
  if (name == "dontcare") return kDontCareClass;
  return -2;
}

namespace {

struct ClassPrior {
  double w, h, spread, height, reflectivity;
};

// Approximate real-world footprints; the anchor basis sizes assume these.
ClassPrior prior_for(int class_id) {
  switch (class_id) {
    case kCar: return {4.2, 1.8, 0.15, 1.55, 0.78};
    case kCyclist: return {1.8, 0.6, 0.10, 1.70, 0.60};
    default: return {0.6, 0.6, 0.10, 1.75, 0.45};  // pedestrian
  }
}

double overlap_fraction(const geom::OrientedBox& a, const geom::OrientedBox& b) {
  const double iou = geom::rotated_iou(a, b);
  if (iou <= 0) return 0;
  // intersection relative to the smaller footprint
  const double inter = iou / (1 + iou) * (a.area() + b.area());
  return inter / std::min(a.area(), b.area());
}

}  // namespace

Scene sample_scene(const ScenePriors& priors, const DomainSpec& domain, Rng& rng) {
  Scene scene;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // binomial count keeps the configured mean exact despite the clamp range
  const int span = priors.objects_max - priors.objects_min;
  double p = span > 0 ? (priors.objects_mean - priors.objects_min) / span : 0.0;
  p = std::clamp(p, 0.0, 1.0);
  int count = priors.objects_min;
  for (int i = 0; i < span; ++i)
    if (unit(rng) < p) ++count;

  const double total_frac = domain.car_frac + domain.pedestrian_frac + domain.cyclist_frac;
  for (int i = 0; i < count; ++i) {
    const double pick = unit(rng) * total_frac;
    int class_id = kCar;
    if (pick > domain.car_frac) class_id = pick > domain.car_frac + domain.pedestrian_frac ? kCyclist : kPedestrian;
    const ClassPrior cp = prior_for(class_id);

    for (int attempt = 0; attempt < 40; ++attempt) {
      const double r = priors.min_radius + (priors.radius - priors.min_radius) * std::sqrt(unit(rng));
      const double ang = unit(rng) * 2.0 * geom::kPi;
      const double theta = unit(rng) * geom::kPi;
      SceneObject obj;
      obj.class_id = class_id;
      const double scale_w = 1.0 + cp.spread * (2.0 * unit(rng) - 1.0);
      const double scale_h = 1.0 + cp.spread * (2.0 * unit(rng) - 1.0);
      obj.box = geom::OrientedBox(r * std::cos(ang), r * std::sin(ang), cp.w * scale_w, cp.h * scale_h, theta);
      obj.height = cp.height * (1.0 + 0.1 * (2.0 * unit(rng) - 1.0));
      obj.reflectivity = cp.reflectivity + 0.05 * (2.0 * unit(rng) - 1.0);
      bool ok = true;
      for (const auto& other : scene.objects)
        if (overlap_fraction(obj.box, other.box) > 0.2) ok = false;
      if (ok) {
        scene.objects.push_back(obj);
        break;
      }
    }
  }

  std::uniform_int_distribution<int> clutter_count(priors.clutter_min, priors.clutter_max);
  const int n_clutter = clutter_count(rng);
  for (int i = 0; i < n_clutter; ++i) {
    const bool wall = unit(rng) < 0.5;
    SceneObject obj;
    obj.class_id = kDontCareClass;
    const double r = priors.min_radius + (priors.radius * 1.15 - priors.min_radius) * std::sqrt(unit(rng));
    const double ang = unit(rng) * 2.0 * geom::kPi;
    const double theta = unit(rng) * geom::kPi;
    const double len = wall ? 2.0 + 4.0 * unit(rng) : 0.2;
    const double wid = wall ? 0.15 + 0.15 * unit(rng) : 0.2;
    obj.box = geom::OrientedBox(r * std::cos(ang), r * std::sin(ang), len, wid, theta);
    obj.height = wall ? 1.5 + 1.0 * unit(rng) : 2.0 + 2.0 * unit(rng);
    obj.reflectivity = 0.35 + 0.08 * (2.0 * unit(rng) - 1.0);
    bool ok = true;
    for (const auto& other : scene.objects)
      if (overlap_fraction(obj.box, other.box) > 0.05) ok = false;
    if (ok) scene.clutter.push_back(obj);
  }
  return scene;
}

namespace {

struct Wall {
  double ax, ay, bx, by;  // segment endpoints
  double height;
  double reflectivity;
  int object_index;  // -1 for ground/clutter
};

void add_walls(const SceneObject& obj, int object_index, const std::array<double, 2>& shift,
               std::vector<Wall>& walls) {
  geom::OrientedBox b = obj.box;
  b.x += shift[0];
  b.y += shift[1];
  const auto c = b.corners();
  for (int i = 0; i < 4; ++i) {
    Wall w;
    w.ax = c[static_cast<std::size_t>(i)].x;
    w.ay = c[static_cast<std::size_t>(i)].y;
    w.bx = c[static_cast<std::size_t>((i + 1) % 4)].x;
    w.by = c[static_cast<std::size_t>((i + 1) % 4)].y;
    w.height = obj.height;
    w.reflectivity = obj.reflectivity;
    w.object_index = object_index;
    walls.push_back(w);
  }
}

}  // namespace

SimCloud simulate_lidar(const Scene& scene, const SensorSpec& sensor, const std::array<double, 2>& scene_shift,
                        Rng& rng) {
  SimCloud out;
  out.cloud.sensor_origin = sensor.mount;

  std::vector<Wall> walls;
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    add_walls(scene.objects[i], static_cast<int>(i), scene_shift, walls);
  for (const auto& cl : scene.clutter) add_walls(cl, -1, scene_shift, walls);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double sx = sensor.mount[0], sy = sensor.mount[1], sz = sensor.mount[2];
  const int azimuths = std::max(1, static_cast<int>(std::lround(360.0 / sensor.azimuth_step_deg)));
  const double ground_reflectivity = 0.25;

  for (int b = 0; b < sensor.beams; ++b) {
    const double elev_deg = sensor.beams > 1 ? sensor.elev_min_deg + (sensor.elev_max_deg - sensor.elev_min_deg) * b /
                                                                         (sensor.beams - 1)
                                             : sensor.elev_min_deg;
    const double elev = elev_deg * geom::kPi / 180.0;
    const double ce = std::cos(elev), se = std::sin(elev);
    for (int a = 0; a < azimuths; ++a) {
      const double az = a * sensor.azimuth_step_deg * geom::kPi / 180.0;
      const double dx = ce * std::cos(az), dy = ce * std::sin(az), dz = se;

      double best_t = sensor.max_range;
      double best_reflect = 0;
      int best_obj = -1;
      bool hit = false;

      if (dz < -1e-12) {
        const double t = -sz / dz;
        if (t > 1e-6 && t < best_t) {
          best_t = t;
          best_reflect = ground_reflectivity;
          best_obj = -1;
          hit = true;
        }
      }
      for (const Wall& w : walls) {
        const double ex = w.bx - w.ax, ey = w.by - w.ay;
        const double denom = dx * ey - dy * ex;
        if (std::abs(denom) < 1e-14) continue;
        const double qx = w.ax - sx, qy = w.ay - sy;
        const double t = (qx * ey - qy * ex) / denom;
        const double s = (qx * dy - qy * dx) / denom;
        if (t <= 1e-6 || t >= best_t || s < 0.0 || s > 1.0) continue;
        const double z = sz + t * dz;
        if (z < 0.0 || z > w.height) continue;
        best_t = t;
        best_reflect = w.reflectivity;
        best_obj = w.object_index;
        hit = true;
      }
      if (!hit) continue;
      if (sensor.dropout > 0 && unit(rng) < sensor.dropout) continue;

      double t = best_t;
      if (sensor.range_noise > 0) t += gauss(rng) * sensor.range_noise;
      gridmap::Point p;
      p.x = sx + t * dx;
      p.y = sy + t * dy;
      p.z = sz + t * dz;
      double intensity = 0.3 + sensor.intensity_contrast * (best_reflect - 0.3);
      intensity *= sensor.intensity_gain;
      if (sensor.intensity_noise > 0) intensity += gauss(rng) * sensor.intensity_noise;
      p.intensity = std::clamp(intensity, 0.0, 1.0);
      out.cloud.points.push_back(p);
      out.hit_object.push_back(best_obj);
    }
  }
  return out;
}

FrameData simulate_frame(const Scene& scene, const DomainSpec& domain, Rng& rng) {
  if (domain.sensors.empty()) throw Error("simulate_frame: domain has no sensors");
  FrameData frame;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<int> hits(scene.objects.size(), 0);
  for (std::size_t si = 0; si < domain.sensors.size(); ++si) {
    std::array<double, 2> shift{0.0, 0.0};
    if (si > 0 && domain.misalign_sigma > 0) {
      shift[0] = gauss(rng) * domain.misalign_sigma;
      shift[1] = gauss(rng) * domain.misalign_sigma;
    }
    SimCloud sim = simulate_lidar(scene, domain.sensors[si], shift, rng);
    for (int obj : sim.hit_object)
      if (obj >= 0) ++hits[static_cast<std::size_t>(obj)];
    frame.clouds.push_back(std::move(sim.cloud));
  }
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (hits[i] < 1) continue;  // unobserved objects carry no label
    loss::LabeledBox lb;
    lb.box = scene.objects[i].box;
    lb.class_id = scene.objects[i].class_id;
    frame.labels.push_back(lb);
  }
  return frame;
}

void write_labels(const std::string& path, const std::vector<LabeledGt>& labels) {
  std::ofstream f(path);
  if (!f) throw IoError("labels: cannot open " + path + " for writing");
  char buf[160];
  for (const auto& lg : labels) {
    const auto& b = lg.box.box;
    std::snprintf(buf, sizeof(buf), "%s %.6g %.6g %.6g %.6g %.6g", class_name(lg.box.class_id), b.x, b.y, b.w, b.h,
                  b.theta);
    f << buf;
    if (lg.difficulty) f << " # difficulty=" << *lg.difficulty;
    f << "\n";
  }
  if (!f) throw IoError("labels: failed writing " + path);
}

std::vector<LabeledGt> read_labels_full(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("labels: cannot open " + path);
  std::vector<LabeledGt> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::optional<int> difficulty;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      const std::string comment = line.substr(hash + 1);
      const auto pos = comment.find("difficulty=");
      if (pos != std::string::npos) {
        try {
          difficulty = std::stoi(comment.substr(pos + 11));
        } catch (const std::exception&) {
          throw ParseError("labels: " + path + ":" + std::to_string(lineno) + ": bad difficulty field");
        }
      }
      line = line.substr(0, hash);
    }
    std::istringstream ss(line);
    std::string cls;
    if (!(ss >> cls)) continue;  // blank line
    double vals[5];
    for (int i = 0; i < 5; ++i) {
      std::string tok;
      if (!(ss >> tok))
        throw ParseError("labels: " + path + ":" + std::to_string(lineno) + ": expected 6 fields");
      try {
        std::size_t pos = 0;
        vals[i] = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("labels: " + path + ":" + std::to_string(lineno) + ": malformed number '" + tok + "'");
      }
    }
    std::string extra;
    if (ss >> extra) throw ParseError("labels: " + path + ":" + std::to_string(lineno) + ": trailing tokens");
    const int cid = class_id_from(cls);
    if (cid == -2) throw ParseError("labels: " + path + ":" + std::to_string(lineno) + ": unknown class '" + cls + "'");
    LabeledGt lg;
    lg.box.class_id = cid;
    lg.box.box = geom::OrientedBox(vals[0], vals[1], vals[2], vals[3], vals[4]);
    lg.difficulty = difficulty;
    out.push_back(lg);
  }
  return out;
}

std::vector<loss::LabeledBox> read_labels(const std::string& path) {
  std::vector<loss::LabeledBox> out;
  for (const auto& lg : read_labels_full(path)) out.push_back(lg.box);
  return out;
}

void write_detections(const std::string& path, const std::vector<geom::Detection>& dets) {
  std::ofstream f(path);
  if (!f) throw IoError("detections: cannot open " + path + " for writing");
  char buf[192];
  for (const auto& d : dets) {
    std::snprintf(buf, sizeof(buf), "%s %.6g %.6g %.6g %.6g %.6g %.6g", class_name(d.class_id), d.box.x, d.box.y,
                  d.box.w, d.box.h, d.box.theta, d.score);
    f << buf << "\n";
  }
  if (!f) throw IoError("detections: failed writing " + path);
}

std::vector<geom::Detection> read_detections(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("detections: cannot open " + path);
  std::vector<geom::Detection> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    std::string cls;
    if (!(ss >> cls)) continue;
    double v[6];
    for (int i = 0; i < 6; ++i)
      if (!(ss >> v[i])) throw ParseError("detections: " + path + ":" + std::to_string(lineno) + ": expected 7 fields");
    const int cid = class_id_from(cls);
    if (cid < 0) throw ParseError("detections: " + path + ":" + std::to_string(lineno) + ": unknown class " + cls);
    geom::Detection d;
    d.box = geom::OrientedBox(v[0], v[1], v[2], v[3], v[4]);
    d.class_id = cid;
    d.score = v[5];
    out.push_back(d);
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream f(path);
  if (!f) throw IoError("manifest: cannot open " + path + " for writing");
  for (const auto& e : entries) f << e.gridmap_path << "\t" << e.label_path << "\t" << e.domain << "\n";
  if (!f) throw IoError("manifest: failed writing " + path);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("manifest: cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ManifestEntry e;
    if (!(ss >> e.gridmap_path >> e.label_path >> e.domain))
      throw ParseError("manifest: " + path + ":" + std::to_string(lineno) + ": expected gridmap<TAB>labels<TAB>domain");
    out.push_back(e);
  }
  return out;
}

std::string synth_dataset(const std::string& out_dir, int n, const ScenePriors& priors, const DomainSpec& domain,
                          const gridmap::GridSpec& grid, std::uint64_t seed, int domain_tag) {
  if (n <= 0) throw Error("synth_dataset: n must be positive");
  fs::create_directories(out_dir);
  std::vector<ManifestEntry> entries;
  char name[64];
  for (int i = 0; i < n; ++i) {
    Rng rng(substream_seed(seed, static_cast<std::uint64_t>(i)));
    Scene scene = sample_scene(priors, domain, rng);
    FrameData frame = simulate_frame(scene, domain, rng);
    gridmap::GridMap map = gridmap::compose_gridmap(frame.clouds, grid);

    std::snprintf(name, sizeof(name), "frame%06d", i);
    ManifestEntry e;
    e.gridmap_path = (fs::path(out_dir) / (std::string(name) + ".gmap")).string();
    e.label_path = (fs::path(out_dir) / (std::string(name) + ".txt")).string();
    e.domain = domain_tag;
    gridmap::write_gridmap(map, e.gridmap_path);
    std::vector<LabeledGt> gts;
    for (const auto& lb : frame.labels) gts.push_back({lb, std::nullopt});
    write_labels(e.label_path, gts);
    entries.push_back(e);
  }
  const std::string manifest = (fs::path(out_dir) / "manifest.tsv").string();
  write_manifest(manifest, entries);
  return manifest;
}

std::vector<train::Sample> load_samples(const std::string& manifest_path) {
  std::vector<train::Sample> out;
  for (const auto& e : read_manifest(manifest_path)) {
    gridmap::GridMap map = gridmap::read_gridmap(e.gridmap_path);
    std::vector<loss::LabeledBox> boxes = read_labels(e.label_path);
    out.emplace_back(std::move(map), std::move(boxes), e.domain);
  }
  return out;
}

int synthetic_difficulty(const gridmap::GridMap& map, const geom::OrientedBox& box, const DifficultyBands& bands) {
  // points in the box footprint, recovered from the reflection-count channel
  double points = 0;
  const double c = std::cos(box.theta), s = std::sin(box.theta);
  const double r = 0.5 * std::hypot(box.w, box.h);
  const int u0 = std::max(0, static_cast<int>((box.x - r + 0.5 * map.extent()) / map.cell_size()) - 1);
  const int u1 = std::min(map.width() - 1, static_cast<int>((box.x + r + 0.5 * map.extent()) / map.cell_size()) + 1);
  const int v0 = std::max(0, static_cast<int>((box.y - r + 0.5 * map.extent()) / map.cell_size()) - 1);
  const int v1 = std::min(map.height() - 1, static_cast<int>((box.y + r + 0.5 * map.extent()) / map.cell_size()) + 1);
  for (int v = v0; v <= v1; ++v)
    for (int u = u0; u <= u1; ++u) {
      const double dx = map.cell_x(u) - box.x, dy = map.cell_y(v) - box.y;
      const double lx = dx * c + dy * s, ly = -dx * s + dy * c;
      if (std::abs(lx) <= 0.5 * box.w && std::abs(ly) <= 0.5 * box.h) points += map.at(gridmap::kReflections, v, u);
    }
  const double range = std::hypot(box.x, box.y);
  if (range < bands.easy_range && points >= bands.easy_points) return eval::kEasy;
  if (range < bands.moderate_range && points >= bands.moderate_points) return eval::kModerate;
  if (points >= 1) return eval::kHard;
  return eval::kDontCare;
}

eval::GtBox gt_from_labeled(const LabeledGt& lg, const gridmap::GridMap& map, const DifficultyBands& bands) {
  eval::GtBox g;
  g.box = lg.box.box;
  g.class_id = lg.box.class_id;
  if (lg.box.class_id == kDontCareClass)
    g.difficulty = eval::kDontCare;
  else if (lg.difficulty)
    g.difficulty = *lg.difficulty;
  else
    g.difficulty = synthetic_difficulty(map, lg.box.box, bands);
  return g;
}

DomainSpec source_domain_spec() {
  DomainSpec d;
  SensorSpec s;
  s.beams = 64;
  s.elev_min_deg = -18.0;
  s.elev_max_deg = 2.0;
  s.azimuth_step_deg = 0.8;
  s.range_noise = 0.01;
  s.dropout = 0.05;
  s.mount = {0.0, 0.0, 1.73};
  s.intensity_gain = 1.0;
  s.intensity_contrast = 1.0;
  d.sensors = {s};
  return d;
}

DomainSpec target_domain_spec() {
  DomainSpec d;
  SensorSpec s;
  s.beams = 32;
  s.elev_min_deg = -16.0;
  s.elev_max_deg = 4.0;
  s.azimuth_step_deg = 0.8;
  s.range_noise = 0.06;
  s.dropout = 0.10;
  s.mount = {0.0, 0.0, 1.25};
  s.intensity_gain = 0.9;
  s.intensity_contrast = 0.15;  // object/ground intensity contrast collapses
  d.sensors = {s};
  SensorSpec second = s;
  second.beams = 16;
  second.mount = {-0.7, 0.3, 1.0};
  d.sensors.push_back(second);
  d.misalign_sigma = 0.12;
  return d;
}

DomainSpec domain_spec_from(const Config& cfg, const std::string& which) {
  DomainSpec d = which == "target" ? target_domain_spec() : source_domain_spec();
  if (which != "source" && which != "target") throw ParseError("synth.domain must be 'source' or 'target'");
  SensorSpec& s = d.sensors[0];
  s.beams = cfg.get_int("sensor.beams", s.beams);
  s.elev_min_deg = cfg.get_double("sensor.elev_min_deg", s.elev_min_deg);
  s.elev_max_deg = cfg.get_double("sensor.elev_max_deg", s.elev_max_deg);
  s.azimuth_step_deg = cfg.get_double("sensor.azimuth_step_deg", s.azimuth_step_deg);
  s.range_noise = cfg.get_double("sensor.range_noise", s.range_noise);
  s.dropout = cfg.get_double("sensor.dropout", s.dropout);
  s.mount[2] = cfg.get_double("sensor.mount_z", s.mount[2]);
  s.intensity_gain = cfg.get_double("sensor.intensity_gain", s.intensity_gain);
  s.intensity_contrast = cfg.get_double("sensor.intensity_contrast", s.intensity_contrast);
  s.max_range = cfg.get_double("sensor.max_range", s.max_range);
  const bool second = cfg.get_bool("sensor.second_sensor", d.sensors.size() > 1);
  if (!second) {
    d.sensors.resize(1);
    d.misalign_sigma = 0.0;
  } else if (d.sensors.size() < 2) {
    SensorSpec extra = s;
    extra.beams = std::max(8, s.beams / 2);
    extra.mount = {-0.7, 0.3, 1.0};
    d.sensors.push_back(extra);
  }
  d.misalign_sigma = cfg.get_double("sensor.misalign_sigma", d.misalign_sigma);
  d.car_frac = cfg.get_double("scene.car_frac", d.car_frac);
  d.pedestrian_frac = cfg.get_double("scene.pedestrian_frac", d.pedestrian_frac);
  d.cyclist_frac = cfg.get_double("scene.cyclist_frac", d.cyclist_frac);
  return d;
}

ScenePriors scene_priors_from(const Config& cfg) {
  ScenePriors p;
  p.objects_mean = cfg.get_double("scene.objects_mean", p.objects_mean);
  p.radius = cfg.get_double("scene.radius", p.radius);
  p.clutter_min = cfg.get_int("scene.clutter_min", p.clutter_min);
  p.clutter_max = cfg.get_int("scene.clutter_max", p.clutter_max);
  return p;
}

namespace {

struct Mat4 {
  double m[4][4] = {};
  static Mat4 identity() {
    Mat4 r;
    for (int i = 0; i < 4; ++i) r.m[i][i] = 1;
    return r;
  }
  std::array<double, 4> apply(const std::array<double, 4>& v) const {
    std::array<double, 4> out{};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) out[static_cast<std::size_t>(i)] += m[i][j] * v[static_cast<std::size_t>(j)];
    return out;
  }
};

Mat4 invert(const Mat4& a) {
  // Gauss-Jordan; calibration matrices are well conditioned
  double aug[4][8] = {};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) aug[i][j] = a.m[i][j];
    aug[i][4 + i] = 1;
  }
  for (int col = 0; col < 4; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(aug[r][col]) > std::abs(aug[pivot][col])) pivot = r;
    if (std::abs(aug[pivot][col]) < 1e-12) throw Error("calibration matrix is singular");
    if (pivot != col)
      for (int j = 0; j < 8; ++j) std::swap(aug[pivot][j], aug[col][j]);
    const double d = aug[col][col];
    for (int j = 0; j < 8; ++j) aug[col][j] /= d;
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = aug[r][col];
      for (int j = 0; j < 8; ++j) aug[r][j] -= f * aug[col][j];
    }
  }
  Mat4 out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) out.m[i][j] = aug[i][4 + j];
  return out;
}

struct KittiCalib {
  Mat4 rect_from_velo;  // R0_rect * Tr_velo_to_cam
  Mat4 velo_from_rect;
};

std::optional<KittiCalib> parse_calib(const std::string& path) {
  std::ifstream f(path);
  if (!f) return std::nullopt;
  Mat4 r0 = Mat4::identity(), tr = Mat4::identity();
  bool have_r0 = false, have_tr = false;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    if (key == "R0_rect:" || key == "R_rect" || key == "R0_rect") {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          if (!(ss >> r0.m[i][j])) return std::nullopt;
      have_r0 = true;
    } else if (key == "Tr_velo_to_cam:" || key == "Tr_velo_to_cam") {
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j)
          if (!(ss >> tr.m[i][j])) return std::nullopt;
      have_tr = true;
    }
  }
  if (!have_r0 || !have_tr) return std::nullopt;
  KittiCalib c;
  Mat4 prod;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      prod.m[i][j] = 0;
      for (int k = 0; k < 4; ++k) prod.m[i][j] += r0.m[i][k] * tr.m[k][j];
    }
  c.rect_from_velo = prod;
  c.velo_from_rect = invert(prod);
  return c;
}

int kitti_difficulty(double truncation, int occlusion, double bbox_height) {
  if (bbox_height >= 40.0 && occlusion <= 0 && truncation <= 0.15) return eval::kEasy;
  if (bbox_height >= 25.0 && occlusion <= 1 && truncation <= 0.30) return eval::kModerate;
  if (bbox_height >= 25.0 && occlusion <= 2 && truncation <= 0.50) return eval::kHard;
  return eval::kDontCare;
}

}  // namespace

KittiIngestStats ingest_kitti(const std::string& velodyne_dir, const std::string& label_dir,
                              const std::string& calib_dir, const gridmap::GridSpec& grid,
                              const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> bins;
  for (const auto& entry : fs::directory_iterator(velodyne_dir))
    if (entry.path().extension() == ".bin") bins.push_back(entry.path());
  std::sort(bins.begin(), bins.end());

  KittiIngestStats stats;
  std::vector<ManifestEntry> entries;
  for (const auto& bin : bins) {
    const std::string stem = bin.stem().string();
    const fs::path label_path = fs::path(label_dir) / (stem + ".txt");
    const fs::path calib_path = fs::path(calib_dir) / (stem + ".txt");

    auto calib = parse_calib(calib_path.string());
    if (!calib) {
      std::cerr << "ingest-kitti: missing or malformed calib for frame " << stem << ", frame rejected\n";
      ++stats.skipped;
      continue;
    }

    // velodyne: consecutive little-endian f32 quadruples (x, y, z, reflectance)
    std::ifstream vf(bin, std::ios::binary);
    if (!vf) {
      std::cerr << "ingest-kitti: cannot read " << bin << ", skipping frame\n";
      ++stats.skipped;
      continue;
    }
    vf.seekg(0, std::ios::end);
    const std::streamoff size = vf.tellg();
    vf.seekg(0);
    if (size % 16 != 0) {
      std::cerr << "ingest-kitti: " << bin << " is not a multiple of 16 bytes, skipping frame\n";
      ++stats.skipped;
      continue;
    }
    const std::size_t n_points = static_cast<std::size_t>(size / 16);
    std::vector<float> raw(n_points * 4);
    vf.read(reinterpret_cast<char*>(raw.data()), size);

    gridmap::PointCloud pc;
    pc.sensor_origin = {0.0, 0.0, 0.0};
    pc.points.reserve(n_points);
    for (std::size_t i = 0; i < n_points; ++i) {
      gridmap::Point p;
      p.x = raw[i * 4 + 0];
      p.y = raw[i * 4 + 1];
      p.z = raw[i * 4 + 2];
      p.intensity = std::clamp(static_cast<double>(raw[i * 4 + 3]), 0.0, 1.0);
      pc.points.push_back(p);
    }

    std::vector<LabeledGt> gts;
    std::ifstream lf(label_path);
    if (lf) {
      std::string line;
      int lineno = 0;
      bool malformed = false;
      while (std::getline(lf, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string type;
        double trunc, occ, alpha, l2, t2, r2, b2, dh, dw, dl, lx, ly, lz, ry;
        if (!(ss >> type >> trunc >> occ >> alpha >> l2 >> t2 >> r2 >> b2 >> dh >> dw >> dl >> lx >> ly >> lz >> ry)) {
          std::cerr << "ingest-kitti: " << label_path << ":" << lineno << ": malformed label line, skipping frame\n";
          malformed = true;
          break;
        }
        int cid;
        if (type == "Car")
          cid = kCar;
        else if (type == "Pedestrian")
          cid = kPedestrian;
        else if (type == "Cyclist")
          cid = kCyclist;
        else if (type == "DontCare")
          cid = kDontCareClass;
        else
          continue;
        if (cid == kDontCareClass && lz <= -500.0) continue;  // no 3-d placement available

        const auto loc = calib->velo_from_rect.apply({lx, ly, lz, 1.0});
        // heading direction, transformed with the rotation part only
        const std::array<double, 4> dir_cam{std::cos(ry), 0.0, -std::sin(ry), 0.0};
        const auto dir = calib->velo_from_rect.apply(dir_cam);
        const double theta = std::atan2(dir[1], dir[0]);

        LabeledGt lg;
        lg.box.class_id = cid;
        lg.box.box = geom::OrientedBox(loc[0], loc[1], dl, dw, theta);
        lg.difficulty = cid == kDontCareClass ? eval::kDontCare : kitti_difficulty(trunc, static_cast<int>(occ), b2 - t2);
        gts.push_back(lg);
      }
      if (malformed) {
        ++stats.skipped;
        continue;
      }
    }

    gridmap::GridMap map = gridmap::compose_gridmap(pc, grid);
    ManifestEntry e;
    e.gridmap_path = (fs::path(out_dir) / (stem + ".gmap")).string();
    e.label_path = (fs::path(out_dir) / (stem + ".txt")).string();
    e.domain = 0;
    gridmap::write_gridmap(map, e.gridmap_path);
    write_labels(e.label_path, gts);
    entries.push_back(e);
    ++stats.frames;
  }
  stats.manifest_path = (fs::path(out_dir) / "manifest.tsv").string();
  write_manifest(stats.manifest_path, entries);
  return stats;
}

}  // namespace gridda::data
