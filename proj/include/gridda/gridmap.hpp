#pragma once

// Top-view multi-layer grid maps: five hand-crafted range-sensor features per
// cell. Channels 0-2 come from direct rasterization, channels 3-4 from DDA
// ray casting (transmission counts and occlusion heights).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gridda/common.hpp"

namespace gridda::gridmap {

struct Point {
  double x = 0, y = 0, z = 0;
  double intensity = 0;  // clamped to [0,1] on ingest
};

struct PointCloud {
  std::vector<Point> points;
  std::array<double, 3> sensor_origin{0, 0, 0};
};

class GridSpec {
 public:
  GridSpec() = default;
  GridSpec(double cell, double ext);

  double cell_size() const { return cell_size_; }
  double extent() const { return extent_; }
  int cells() const { return cells_; }

 private:
  double cell_size_ = 0.15;  // meters
  double extent_ = 60.0;     // meters, square and ego-centered
  int cells_ = 400;
};

enum Channel : int {
  kReflections = 0,
  kHeightDiff = 1,
  kMeanIntensity = 2,
  kTransmissions = 3,
  kOcclusionHeight = 4,
};
constexpr int kChannels = 5;

class GridMap {
 public:
  GridMap() = default;
  explicit GridMap(const GridSpec& spec)
      : cell_size_(spec.cell_size()), extent_(spec.extent()), h_(spec.cells()), w_(spec.cells()),
        data_(static_cast<std::size_t>(kChannels) * h_ * w_, 0.0f) {}
  GridMap(double cell_size, double extent, int h, int w)
      : cell_size_(cell_size), extent_(extent), h_(h), w_(w),
        data_(static_cast<std::size_t>(kChannels) * h_ * w_, 0.0f) {}

  int height() const { return h_; }
  int width() const { return w_; }
  double cell_size() const { return cell_size_; }
  double extent() const { return extent_; }

  float& at(int c, int v, int u) { return data_[(static_cast<std::size_t>(c) * h_ + v) * w_ + u]; }
  float at(int c, int v, int u) const { return data_[(static_cast<std::size_t>(c) * h_ + v) * w_ + u]; }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  // Metric (x,y) of a cell center; row v maps to y, column u to x.
  double cell_x(int u) const { return (u + 0.5) * cell_size_ - 0.5 * extent_; }
  double cell_y(int v) const { return (v + 0.5) * cell_size_ - 0.5 * extent_; }

 private:
  double cell_size_ = 0.15;
  double extent_ = 60.0;
  int h_ = 0, w_ = 0;
  std::vector<float> data_;
};

// Channels 0-2: reflection count, height difference, mean intensity.
// Cells are half-open: a point exactly on a boundary lands in the
// higher-index cell; points outside the extent are dropped.
void rasterize_points(const PointCloud& pc, const GridSpec& spec, GridMap& out);

// Channels 3-4 via 2-d DDA traversal of each sensor->point ray. Cells strictly
// before the point's cell count a transmission; beyond the point the ray line
// is extended to the grid boundary and each crossed cell keeps the minimum
// height at which it could have been observed (clamped at 0), evaluated at the
// midpoint of the ray segment inside the cell.
void raycast_channels(const PointCloud& pc, const GridSpec& spec, GridMap& out);

GridMap compose_gridmap(const PointCloud& pc, const GridSpec& spec);
// Multi-sensor fusion: merged rasterization, per-cloud ray casting.
GridMap compose_gridmap(const std::vector<PointCloud>& clouds, const GridSpec& spec);

// File format: magic "GMAP", little-endian u32 C,H,W, f64 cell_size and
// extent, then C*H*W little-endian f32, channel-major row-major.
void write_gridmap(const GridMap& map, const std::string& path);
GridMap read_gridmap(const std::string& path);

}  // namespace gridda::gridmap
