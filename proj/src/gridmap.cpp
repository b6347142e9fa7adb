#include "gridda/gridmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

namespace gridda::gridmap {

GridSpec::GridSpec(double cell, double ext) : cell_size_(cell), extent_(ext) {
  if (cell <= 0 || ext <= 0) throw Error("grid spec: cell size and extent must be positive");
  const double n = ext / cell;
  cells_ = static_cast<int>(std::lround(n));
  if (cells_ < 1 || std::abs(n - cells_) > 1e-9)
    throw Error("grid spec: extent/cell_size must be a positive integer, got " + std::to_string(n));
}

namespace {

struct CellIndex {
  int u = 0, v = 0;
  bool valid = false;
};

CellIndex locate(double x, double y, double cell, double half, int n) {
  CellIndex c;
  const int u = static_cast<int>(std::floor((x + half) / cell));
  const int v = static_cast<int>(std::floor((y + half) / cell));
  if (u < 0 || u >= n || v < 0 || v >= n) return c;
  c.u = u;
  c.v = v;
  c.valid = true;
  return c;
}

}  // namespace

void rasterize_points(const PointCloud& pc, const GridSpec& spec, GridMap& out) {
  const int n = spec.cells();
  const double half = 0.5 * spec.extent();
  const std::size_t cells = static_cast<std::size_t>(n) * n;
  std::vector<double> zmin(cells, std::numeric_limits<double>::infinity());
  std::vector<double> zmax(cells, -std::numeric_limits<double>::infinity());
  std::vector<double> isum(cells, 0.0);
  std::vector<std::int64_t> count(cells, 0);

  for (const Point& p : pc.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) continue;
    const CellIndex c = locate(p.x, p.y, spec.cell_size(), half, n);
    if (!c.valid) continue;
    const std::size_t idx = static_cast<std::size_t>(c.v) * n + c.u;
    ++count[idx];
    zmin[idx] = std::min(zmin[idx], p.z);
    zmax[idx] = std::max(zmax[idx], p.z);
    isum[idx] += std::clamp(p.intensity, 0.0, 1.0);
  }

  for (int v = 0; v < n; ++v)
    for (int u = 0; u < n; ++u) {
      const std::size_t idx = static_cast<std::size_t>(v) * n + u;
      out.at(kReflections, v, u) += static_cast<float>(count[idx]);
      if (count[idx] >= 2) out.at(kHeightDiff, v, u) = static_cast<float>(zmax[idx] - zmin[idx]);
      if (count[idx] >= 1) out.at(kMeanIntensity, v, u) = static_cast<float>(isum[idx] / count[idx]);
    }
}

namespace {

// Amanatides-Woo traversal of the 2-d ray sensor->point, extended past the
// reflection to the grid edge for the occlusion channel.
void raycast_one(const Point& p, const std::array<double, 3>& origin, const GridSpec& spec, GridMap& trans,
                 std::vector<double>& occ_min) {
  const int n = spec.cells();
  const double cs = spec.cell_size();
  const double half = 0.5 * spec.extent();
  const double dx = p.x - origin[0], dy = p.y - origin[1];
  const double dp = std::hypot(dx, dy);
  if (dp < 1e-12) return;
  const double ux = dx / dp, uy = dy / dp;

  int cx = static_cast<int>(std::floor((origin[0] + half) / cs));
  int cy = static_cast<int>(std::floor((origin[1] + half) / cs));
  const int ex = static_cast<int>(std::floor((p.x + half) / cs));
  const int ey = static_cast<int>(std::floor((p.y + half) / cs));

  const int step_x = ux > 0 ? 1 : (ux < 0 ? -1 : 0);
  const int step_y = uy > 0 ? 1 : (uy < 0 ? -1 : 0);
  const double gx = origin[0] + half, gy = origin[1] + half;
  double tmax_x = std::numeric_limits<double>::infinity();
  double tmax_y = std::numeric_limits<double>::infinity();
  if (step_x > 0) tmax_x = ((cx + 1) * cs - gx) / ux;
  if (step_x < 0) tmax_x = (cx * cs - gx) / ux;
  if (step_y > 0) tmax_y = ((cy + 1) * cs - gy) / uy;
  if (step_y < 0) tmax_y = (cy * cs - gy) / uy;
  const double tdx = step_x != 0 ? cs / std::abs(ux) : std::numeric_limits<double>::infinity();
  const double tdy = step_y != 0 ? cs / std::abs(uy) : std::numeric_limits<double>::infinity();

  bool past_endpoint = false;
  double t_enter = 0.0;
  const double zs = origin[2], zp = p.z;
  while (cx >= 0 && cx < n && cy >= 0 && cy < n) {
    const double t_exit = std::min(tmax_x, tmax_y);
    if (!past_endpoint) {
      if (cx == ex && cy == ey) {
        past_endpoint = true;  // the reflection cell itself gets neither channel
      } else {
        trans.at(kTransmissions, cy, cx) += 1.0f;
      }
    } else {
      const double mid = 0.5 * (t_enter + t_exit);
      const double z = std::max(0.0, zs + (zp - zs) * (mid / dp));
      double& cur = occ_min[static_cast<std::size_t>(cy) * n + cx];
      cur = std::min(cur, z);
    }
    t_enter = t_exit;
    if (tmax_x < tmax_y) {
      tmax_x += tdx;
      cx += step_x;
    } else {
      tmax_y += tdy;
      cy += step_y;
    }
    if (step_x == 0 && step_y == 0) break;
  }
}

void check_origin(const PointCloud& pc, const GridSpec& spec) {
  const double half = 0.5 * spec.extent();
  if (pc.sensor_origin[0] < -half || pc.sensor_origin[0] >= half || pc.sensor_origin[1] < -half ||
      pc.sensor_origin[1] >= half)
    throw Error("raycast: sensor origin outside the grid extent");
}

void finalize_occlusion(std::vector<double>& occ_min, GridMap& out) {
  const int n = out.height();
  for (int v = 0; v < n; ++v)
    for (int u = 0; u < n; ++u) {
      const double z = occ_min[static_cast<std::size_t>(v) * n + u];
      out.at(kOcclusionHeight, v, u) = std::isfinite(z) ? static_cast<float>(z) : 0.0f;
    }
}

}  // namespace

void raycast_channels(const PointCloud& pc, const GridSpec& spec, GridMap& out) {
  check_origin(pc, spec);
  const int n = spec.cells();
  std::vector<double> occ_min(static_cast<std::size_t>(n) * n, std::numeric_limits<double>::infinity());
  for (const Point& p : pc.points) raycast_one(p, pc.sensor_origin, spec, out, occ_min);
  finalize_occlusion(occ_min, out);
}

GridMap compose_gridmap(const PointCloud& pc, const GridSpec& spec) {
  return compose_gridmap(std::vector<PointCloud>{pc}, spec);
}

GridMap compose_gridmap(const std::vector<PointCloud>& clouds, const GridSpec& spec) {
  GridMap out(spec);
  const int n = spec.cells();
  std::vector<double> occ_min(static_cast<std::size_t>(n) * n, std::numeric_limits<double>::infinity());
  for (const PointCloud& pc : clouds) {
    check_origin(pc, spec);
    rasterize_points(pc, spec, out);
    for (const Point& p : pc.points) raycast_one(p, pc.sensor_origin, spec, out, occ_min);
  }
  finalize_occlusion(occ_min, out);
  return out;
}

namespace {

template <typename T>
void write_raw(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& f, const std::string& path) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError("gridmap read: truncated file " + path);
  return v;
}

}  // namespace

void write_gridmap(const GridMap& map, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("gridmap write: cannot open " + path);
  f.write("GMAP", 4);
  write_raw(f, static_cast<std::uint32_t>(kChannels));
  write_raw(f, static_cast<std::uint32_t>(map.height()));
  write_raw(f, static_cast<std::uint32_t>(map.width()));
  write_raw(f, map.cell_size());
  write_raw(f, map.extent());
  f.write(reinterpret_cast<const char*>(map.data().data()),
          static_cast<std::streamsize>(map.data().size() * sizeof(float)));
  if (!f) throw IoError("gridmap write: failed writing " + path);
}

GridMap read_gridmap(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("gridmap read: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "GMAP", 4) != 0) throw IoError("gridmap read: bad magic in " + path);
  const auto c = read_raw<std::uint32_t>(f, path);
  const auto h = read_raw<std::uint32_t>(f, path);
  const auto w = read_raw<std::uint32_t>(f, path);
  const auto cell = read_raw<double>(f, path);
  const auto extent = read_raw<double>(f, path);
  if (c != kChannels || h == 0 || w == 0 || h > (1u << 16) || w > (1u << 16))
    throw IoError("gridmap read: implausible header in " + path);
  GridMap map(cell, extent, static_cast<int>(h), static_cast<int>(w));
  f.read(reinterpret_cast<char*>(map.data().data()), static_cast<std::streamsize>(map.data().size() * sizeof(float)));
  if (!f) throw IoError("gridmap read: truncated payload in " + path);
  return map;
}

}  // namespace gridda::gridmap
