#pragma once

// Grid-map renders: grayscale feature composite (log-scaled counts) with box
// overlays in the class palette (cars green, cyclists yellow-green,
// pedestrians yellow) and a blue ego marker at the center. Output is binary
// PPM (P6), one pixel per cell.

#include <string>
#include <vector>

#include "gridda/geometry.hpp"
#include "gridda/gridmap.hpp"
#include "gridda/losses.hpp"

namespace gridda::render {

struct Image {
  int w = 0, h = 0;
  std::vector<unsigned char> rgb;  // 3 bytes per pixel, row-major from the top

  unsigned char* px(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * w + x) * 3]; }
};

Image render_gridmap(const gridmap::GridMap& map, const std::vector<loss::LabeledBox>& boxes,
                     const std::vector<geom::Detection>& detections);

void write_ppm(const Image& img, const std::string& path);

}  // namespace gridda::render
