#include "gridda/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace gridda::render {

namespace {

struct Rgb {
  unsigned char r, g, b;
};

Rgb class_color(int class_id) {
  switch (class_id) {
    case 0: return {0, 255, 0};      // car: green
    case 2: return {173, 255, 47};   // cyclist: yellow-green
    case 1: return {255, 255, 0};    // pedestrian: yellow
    default: return {180, 180, 180};
  }
}

// Row 0 is the top of the image = maximum y; column u = x.
void cell_of(const gridmap::GridMap& map, double x, double y, int& px, int& py) {
  px = static_cast<int>(std::floor((x + 0.5 * map.extent()) / map.cell_size()));
  py = map.height() - 1 - static_cast<int>(std::floor((y + 0.5 * map.extent()) / map.cell_size()));
}

void put(Image& img, int x, int y, Rgb c) {
  if (x < 0 || x >= img.w || y < 0 || y >= img.h) return;
  unsigned char* p = img.px(x, y);
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

void line(Image& img, int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put(img, x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_box(Image& img, const gridmap::GridMap& map, const geom::OrientedBox& box, Rgb c) {
  const auto corners = box.corners();
  for (int i = 0; i < 4; ++i) {
    int x0, y0, x1, y1;
    cell_of(map, corners[static_cast<std::size_t>(i)].x, corners[static_cast<std::size_t>(i)].y, x0, y0);
    cell_of(map, corners[static_cast<std::size_t>((i + 1) % 4)].x, corners[static_cast<std::size_t>((i + 1) % 4)].y,
            x1, y1);
    line(img, x0, y0, x1, y1, c);
  }
}

}  // namespace

Image render_gridmap(const gridmap::GridMap& map, const std::vector<loss::LabeledBox>& boxes,
                     const std::vector<geom::Detection>& detections) {
  Image img;
  img.w = map.width();
  img.h = map.height();
  img.rgb.assign(static_cast<std::size_t>(img.w) * img.h * 3, 0);

  float max_count = 0;
  for (int v = 0; v < map.height(); ++v)
    for (int u = 0; u < map.width(); ++u) max_count = std::max(max_count, map.at(gridmap::kReflections, v, u));
  const double count_norm = std::log1p(static_cast<double>(max_count));

  for (int v = 0; v < map.height(); ++v) {
    for (int u = 0; u < map.width(); ++u) {
      const double counts =
          count_norm > 0 ? std::log1p(static_cast<double>(map.at(gridmap::kReflections, v, u))) / count_norm : 0.0;
      const double intensity = map.at(gridmap::kMeanIntensity, v, u);
      const double hdiff = std::min(1.0, map.at(gridmap::kHeightDiff, v, u) / 3.0);
      const double g = std::clamp(std::max({counts, 0.6 * intensity, 0.5 * hdiff}), 0.0, 1.0);
      const auto val = static_cast<unsigned char>(std::lround(g * 255.0));
      put(img, u, map.height() - 1 - v, {val, val, val});
    }
  }

  for (const auto& lb : boxes) draw_box(img, map, lb.box, class_color(lb.class_id));
  for (const auto& det : detections) draw_box(img, map, det.box, class_color(det.class_id));

  // ego marker: blue cross at the grid center
  const int cx = map.width() / 2, cy = map.height() / 2;
  for (int d = -2; d <= 2; ++d) {
    put(img, cx + d, cy, {0, 64, 255});
    put(img, cx, cy + d, {0, 64, 255});
  }
  return img;
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("render: cannot open " + path + " for writing");
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!f) throw IoError("render: failed writing " + path);
}

}  // namespace gridda::render
