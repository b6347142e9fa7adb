#pragma once

// Flat key=value configuration (UTF-8, '#' comments). Keys are namespaced
// (train.lr1, loss.lambda1, grid.cell_size, ...); unknown keys are errors.

#include <map>
#include <string>
#include <vector>

#include "gridda/common.hpp"

namespace gridda {

class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  void merge_file(const std::string& path);
  // "key=value" override; overrides win over file values.
  void set_kv(const std::string& kv);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& def) const;
  double get_double(const std::string& key, double def) const;
  int get_int(const std::string& key, int def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const;
  std::vector<double> get_double_list(const std::string& key, std::vector<double> def) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace gridda
