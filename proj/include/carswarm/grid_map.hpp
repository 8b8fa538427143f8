/******************************************************************************
 * Copyright 2026 The carswarm Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *****************************************************************************/

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "carswarm/geometry.hpp"

namespace carswarm {

// Binary 2D occupancy grid with an inflated layer for point-robot queries.
// Cells only ever flip free -> occupied; queries outside the bounds are
// conservatively occupied.
class OccupancyGrid2D {
 public:
  OccupancyGrid2D(const Eigen::Vector2d& origin, double resolution, int width, int height,
                  double inflation)
      : origin_(origin),
        resolution_(resolution),
        width_(width),
        height_(height),
        inflation_(inflation),
        raw_(static_cast<size_t>(width) * height, 0),
        inflated_(static_cast<size_t>(width) * height, 0) {
    if (!(resolution_ > 0.0)) throw std::invalid_argument("grid resolution must be positive");
    if (width_ <= 0 || height_ <= 0) throw std::invalid_argument("grid dimensions must be positive");
    buildDiscOffsets();
  }

  static OccupancyGrid2D fromBounds(const Eigen::Vector2d& lo, const Eigen::Vector2d& hi,
                                    double resolution, double inflation) {
    const int w = std::max(1, static_cast<int>(std::ceil((hi.x() - lo.x()) / resolution)));
    const int h = std::max(1, static_cast<int>(std::ceil((hi.y() - lo.y()) / resolution)));
    return OccupancyGrid2D(lo, resolution, w, h, inflation);
  }

  const Eigen::Vector2d& origin() const { return origin_; }
  double resolution() const { return resolution_; }
  int width() const { return width_; }
  int height() const { return height_; }
  double inflation() const { return inflation_; }

  Eigen::Vector2i worldToCell(const Eigen::Vector2d& p) const {
    return {static_cast<int>(std::floor((p.x() - origin_.x()) / resolution_)),
            static_cast<int>(std::floor((p.y() - origin_.y()) / resolution_))};
  }

  Eigen::Vector2d cellCenter(const Eigen::Vector2i& c) const {
    return origin_ + resolution_ * Eigen::Vector2d(c.x() + 0.5, c.y() + 0.5);
  }

  bool inBounds(const Eigen::Vector2i& c) const {
    return c.x() >= 0 && c.x() < width_ && c.y() >= 0 && c.y() < height_;
  }

  bool occupiedRaw(const Eigen::Vector2i& c) const {
    if (!inBounds(c)) return true;
    return raw_[index(c)] != 0;
  }

  bool occupiedInflated(const Eigen::Vector2i& c) const {
    if (!inBounds(c)) return true;
    return inflated_[index(c)] != 0;
  }

  bool occupiedInflatedWorld(const Eigen::Vector2d& p) const {
    return occupiedInflated(worldToCell(p));
  }

  void markOccupied(const Eigen::Vector2d& p) {
    const Eigen::Vector2i c = worldToCell(p);
    if (!inBounds(c)) return;
    if (raw_[index(c)] != 0) return;
    raw_[index(c)] = 1;
    stampDisc(c);
  }

  // Folds a point cloud into the map. Points strictly inside any of the given
  // agent bodies are dynamic returns and are dropped before mapping; the rest
  // mark cells occupied and the inflated layer is extended around them.
  void integrateScan(const std::vector<Eigen::Vector2d>& points,
                     const std::vector<PlacedPolygon>& agentPolygons) {
    for (const Eigen::Vector2d& p : points) {
      bool dynamic = false;
      for (const PlacedPolygon& poly : agentPolygons) {
        if ((p - poly.pose.position).norm() > poly.footprint.circumradius()) continue;
        if (strictlyInside(poly.footprint, poly.pose, p)) {
          dynamic = true;
          break;
        }
      }
      if (!dynamic) markOccupied(p);
    }
  }

  // True iff every cell touched by the segment a-b is free in the inflated
  // layer. Traversal is a conservative supercover: exact corner crossings
  // visit both side cells, and the result is symmetric in a and b.
  bool isCollisionFreeSegment(const Eigen::Vector2d& a, const Eigen::Vector2d& b) const {
    Eigen::Vector2d p0 = (a - origin_) / resolution_;
    Eigen::Vector2d p1 = (b - origin_) / resolution_;
    if (p1.x() < p0.x() || (p1.x() == p0.x() && p1.y() < p0.y())) std::swap(p0, p1);

    int ix = static_cast<int>(std::floor(p0.x()));
    int iy = static_cast<int>(std::floor(p0.y()));
    const int ex = static_cast<int>(std::floor(p1.x()));
    const int ey = static_cast<int>(std::floor(p1.y()));
    if (occupiedInflated({ix, iy})) return false;
    if (ix == ex && iy == ey) return true;

    const double dx = p1.x() - p0.x();
    const double dy = p1.y() - p0.y();
    const int stepX = dx > 0.0 ? 1 : (dx < 0.0 ? -1 : 0);
    const int stepY = dy > 0.0 ? 1 : (dy < 0.0 ? -1 : 0);
    const double inf = std::numeric_limits<double>::infinity();
    const double tDeltaX = stepX != 0 ? std::abs(1.0 / dx) : inf;
    const double tDeltaY = stepY != 0 ? std::abs(1.0 / dy) : inf;
    double tMaxX = inf;
    double tMaxY = inf;
    if (stepX > 0) tMaxX = (std::floor(p0.x()) + 1.0 - p0.x()) * tDeltaX;
    if (stepX < 0) tMaxX = (p0.x() - std::floor(p0.x())) * tDeltaX;
    if (stepY > 0) tMaxY = (std::floor(p0.y()) + 1.0 - p0.y()) * tDeltaY;
    if (stepY < 0) tMaxY = (p0.y() - std::floor(p0.y())) * tDeltaY;

    const int cap = 2 * (std::abs(ex - ix) + std::abs(ey - iy)) + 8;
    for (int it = 0; it < cap && (ix != ex || iy != ey); ++it) {
      if (stepX != 0 && stepY != 0 && std::abs(tMaxX - tMaxY) < kCornerTol) {
        // Segment passes through a cell corner: both side cells count.
        if (occupiedInflated({ix + stepX, iy})) return false;
        if (occupiedInflated({ix, iy + stepY})) return false;
        ix += stepX;
        iy += stepY;
        tMaxX += tDeltaX;
        tMaxY += tDeltaY;
      } else if (tMaxX < tMaxY) {
        ix += stepX;
        tMaxX += tDeltaX;
      } else {
        iy += stepY;
        tMaxY += tDeltaY;
      }
      if (occupiedInflated({ix, iy})) return false;
    }
    return true;
  }

  int occupiedCellCount() const {
    int n = 0;
    for (uint8_t c : raw_) n += c != 0;
    return n;
  }

  // Portable text raster of the raw layer, rows written top (highest y) down.
  std::string dumpAscii() const {
    std::string out;
    out.reserve(static_cast<size_t>(height_) * (width_ + 1));
    for (int y = height_ - 1; y >= 0; --y) {
      for (int x = 0; x < width_; ++x) out.push_back(raw_[index({x, y})] ? '1' : '0');
      out.push_back('\n');
    }
    return out;
  }

  static OccupancyGrid2D parseAscii(const std::string& text, const Eigen::Vector2d& origin,
                                    double resolution, double inflation) {
    std::vector<std::string> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) rows.push_back(line);
    }
    if (rows.empty()) throw std::invalid_argument("empty grid raster");
    const int h = static_cast<int>(rows.size());
    const int w = static_cast<int>(rows.front().size());
    OccupancyGrid2D g(origin, resolution, w, h, inflation);
    for (int y = 0; y < h; ++y) {
      const std::string& r = rows[h - 1 - y];
      if (static_cast<int>(r.size()) != w) throw std::invalid_argument("ragged grid raster");
      for (int x = 0; x < w; ++x) {
        if (r[x] == '1') g.markOccupied(g.cellCenter({x, y}));
      }
    }
    return g;
  }

 private:
  size_t index(const Eigen::Vector2i& c) const {
    return static_cast<size_t>(c.y()) * width_ + c.x();
  }

  void buildDiscOffsets() {
    const int rc = static_cast<int>(std::ceil(inflation_ / resolution_));
    for (int dy = -rc; dy <= rc; ++dy) {
      for (int dx = -rc; dx <= rc; ++dx) {
        if (resolution_ * std::hypot(static_cast<double>(dx), static_cast<double>(dy)) <= inflation_) {
          discOffsets_.emplace_back(dx, dy);
        }
      }
    }
  }

  void stampDisc(const Eigen::Vector2i& c) {
    for (const Eigen::Vector2i& off : discOffsets_) {
      const Eigen::Vector2i q = c + off;
      if (inBounds(q)) inflated_[index(q)] = 1;
    }
  }

  static constexpr double kCornerTol = 1e-12;

  Eigen::Vector2d origin_;
  double resolution_;
  int width_;
  int height_;
  double inflation_;
  std::vector<uint8_t> raw_;
  std::vector<uint8_t> inflated_;
  std::vector<Eigen::Vector2i> discOffsets_;
};

struct LidarScan {
  std::vector<Eigen::Vector2d> points;
  std::vector<int> hitIds;  // parallel to points: index into the target list
};

// Planar lidar model: uniformly spaced beams raycast against convex targets,
// nearest hit within range wins.
inline LidarScan raycastScan(const Eigen::Vector2d& sensor, int beams, double range,
                             const std::vector<PlacedPolygon>& targets) {
  LidarScan scan;
  for (int k = 0; k < beams; ++k) {
    const double ang = 2.0 * M_PI * k / beams;
    const Eigen::Vector2d dir(std::cos(ang), std::sin(ang));
    double best = range;
    int hit = -1;
    for (size_t ti = 0; ti < targets.size(); ++ti) {
      const PlacedPolygon& poly = targets[ti];
      const double clearance = (poly.pose.position - sensor).norm() - poly.footprint.circumradius();
      if (clearance > best) continue;
      const int n = poly.footprint.count();
      for (int e = 0; e < n; ++e) {
        const Eigen::Vector2d q1 = poly.worldVertex(e);
        const Eigen::Vector2d q2 = poly.worldVertex((e + 1) % n);
        const Eigen::Vector2d s = q2 - q1;
        const double denom = dir.x() * (-s.y()) - dir.y() * (-s.x());
        if (std::abs(denom) < 1e-12) continue;
        const Eigen::Vector2d rhs = q1 - sensor;
        const double t = (rhs.x() * (-s.y()) - rhs.y() * (-s.x())) / denom;
        const double u = (dir.x() * rhs.y() - dir.y() * rhs.x()) / denom;
        if (t >= 0.0 && t < best && u >= 0.0 && u <= 1.0) {
          best = t;
          hit = static_cast<int>(ti);
        }
      }
    }
    if (hit >= 0) {
      scan.points.push_back(sensor + best * dir);
      scan.hitIds.push_back(hit);
    }
  }
  return scan;
}

}  // namespace carswarm
