#include "gridda/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace gridda {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = {
      // grid
      "grid.cell_size", "grid.extent",
      // model
      "model.widths", "model.blocks", "model.fpn_channels", "model.head_channels", "model.head_convs",
      "model.classes", "model.norm", "model.gn_groups", "model.da_channels",
      // anchors / assignment
      "anchors.basis", "anchors.scales", "anchors.ratios", "assign.fg_thr", "assign.bg_thr",
      // loss
      "loss.lambda1", "loss.lambda2", "loss.gamma", "loss.alpha", "loss.smooth_l1_delta", "loss.literal_domain_bce",
      "loss.cons_in_grl", "loss.grl_lambda",
      // train
      "train.steps_source", "train.steps_adapt", "train.lr1", "train.lr2", "train.lr_boundary", "train.momentum",
      "train.weight_decay", "train.batch_size", "train.clip_norm", "train.flip", "train.seed", "train.log_every",
      "train.img_da", "train.ins_da", "train.cons",
      // predict
      "predict.score_thr", "predict.nms_thr", "predict.max_dets",
      // eval
      "eval.iou_car", "eval.iou_pedestrian", "eval.iou_cyclist", "eval.dist_thresholds", "eval.tp_metric_thr",
      "eval.easy_range", "eval.moderate_range", "eval.easy_points", "eval.moderate_points",
      // synthetic data
      "synth.count", "synth.seed", "synth.domain",
      "scene.objects_mean", "scene.radius", "scene.clutter_min", "scene.clutter_max", "scene.car_frac",
      "scene.pedestrian_frac", "scene.cyclist_frac",
      "sensor.beams", "sensor.elev_min_deg", "sensor.elev_max_deg", "sensor.azimuth_step_deg", "sensor.range_noise",
      "sensor.dropout", "sensor.mount_z", "sensor.intensity_gain", "sensor.intensity_contrast",
      "sensor.second_sensor", "sensor.misalign_sigma", "sensor.max_range",
  };
  return keys;
}

void Config::set(const std::string& key, const std::string& value) {
  const auto& keys = known_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end())
    throw ParseError("config: unknown key '" + key + "'");
  values_[key] = value;
}

void Config::set_kv(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ParseError("config: expected key=value, got '" + kv + "'");
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

void Config::merge_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config: " + path + ":" + std::to_string(lineno) + ": expected key=value");
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

Config Config::from_file(const std::string& path) {
  Config c;
  c.merge_file(path);
  return c;
}

std::string Config::get_string(const std::string& key, const std::string& def) const {
  auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

double Config::get_double(const std::string& key, double def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError("config: key '" + key + "' is not a number: '" + it->second + "'");
  }
}

int Config::get_int(const std::string& key, int def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ParseError("config: key '" + key + "' is not an integer: '" + it->second + "'");
  }
}

bool Config::get_bool(const std::string& key, bool def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ParseError("config: key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<int> Config::get_int_list(const std::string& key, std::vector<int> def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ParseError("config: key '" + key + "' has a non-integer entry: '" + tok + "'");
    }
  }
  if (out.empty()) throw ParseError("config: key '" + key + "' is an empty list");
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key, std::vector<double> def) const {
  auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ParseError("config: key '" + key + "' has a non-numeric entry: '" + tok + "'");
    }
  }
  if (out.empty()) throw ParseError("config: key '" + key + "' is an empty list");
  return out;
}

}  // namespace gridda
