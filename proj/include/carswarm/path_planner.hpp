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
#include <limits>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "carswarm/grid_map.hpp"
#include "carswarm/trajectory.hpp"

namespace carswarm {

// Window length S and corridor width D of the visibility-deformation class
// used to keep consecutive replans in the same topology.
struct SDVDParams {
  double S = 6.0;
  double D = 1.5;
};

struct KinoPathNode {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double heading = 0.0;
  double steer = 0.0;  // steer held while driving the arc that ends here
  int gear = 1;
};

// Arc-length parameterized motion-primitive path. Consecutive nodes are
// joined by constant-steer arcs sharing one primitive arc length.
class KinoPath {
 public:
  KinoPath(std::vector<KinoPathNode> nodes, double primitiveArc)
      : nodes_(std::move(nodes)), primitiveArc_(primitiveArc) {}

  int nodeCount() const { return static_cast<int>(nodes_.size()); }
  const KinoPathNode& node(int i) const { return nodes_[i]; }
  const std::vector<KinoPathNode>& nodes() const { return nodes_; }
  double primitiveArc() const { return primitiveArc_; }
  double length() const { return primitiveArc_ * std::max(0, nodeCount() - 1); }

  // Position at arc length s, clamped to the path domain; past the end the
  // final node holds.
  Eigen::Vector2d positionAt(double s) const {
    const auto [i, frac] = locate(s);
    if (i >= nodeCount() - 1) return nodes_.back().position;
    return (1.0 - frac) * nodes_[i].position + frac * nodes_[i + 1].position;
  }

  double headingAt(double s) const {
    const auto [i, frac] = locate(s);
    if (i >= nodeCount() - 1) return nodes_.back().heading;
    const double a = nodes_[i].heading;
    return wrapAngle(a + frac * wrapAngle(nodes_[i + 1].heading - a));
  }

  // Steer of the primitive covering arc length s.
  double steerAt(double s) const {
    const auto [i, frac] = locate(s);
    (void)frac;
    if (i >= nodeCount() - 1) return nodes_.back().steer;
    return nodes_[i + 1].steer;
  }

  // One node per line: x y heading steer.
  std::string dump() const {
    std::ostringstream out;
    out.precision(17);
    for (const KinoPathNode& n : nodes_)
      out << n.position.x() << " " << n.position.y() << " " << n.heading << " " << n.steer << "\n";
    return out.str();
  }

 private:
  std::pair<int, double> locate(double s) const {
    if (nodeCount() <= 1) return {0, 0.0};
    s = std::min(std::max(s, 0.0), length());
    int i = static_cast<int>(std::floor(s / primitiveArc_));
    i = std::min(i, nodeCount() - 2);
    return {i, s / primitiveArc_ - i};
  }

  std::vector<KinoPathNode> nodes_;
  double primitiveArc_;
};

// Arc length of the path node nearest to the query point; ties take the
// smaller arc length.
inline double nearestOnPath(const KinoPath& previous, const Eigen::Vector2d& point) {
  double bestD = std::numeric_limits<double>::infinity();
  int bestI = 0;
  for (int i = 0; i < previous.nodeCount(); ++i) {
    const double d = (previous.node(i).position - point).norm();
    if (d < bestD) {
      bestD = d;
      bestI = i;
    }
  }
  return bestI * previous.primitiveArc();
}

// Visibility-deformation check between two paths: over the window [0, S] the
// connecting segments a(k ds) -> b(s0 + k ds) must be collision-free and no
// longer than D. Lookups past either path's end clamp to its final node.
inline bool checkSDVD(const KinoPath& a, const KinoPath& b, double s0, const SDVDParams& params,
                      const OccupancyGrid2D& grid) {
  const double ds = a.primitiveArc();
  for (int k = 0;; ++k) {
    const double s = k * ds;
    if (s > params.S || s > a.length() + 1e-9) break;
    const Eigen::Vector2d pa = a.positionAt(s);
    const Eigen::Vector2d pb = b.positionAt(s0 + s);
    if ((pa - pb).norm() > params.D) return false;
    if (!grid.isCollisionFreeSegment(pa, pb)) return false;
  }
  return true;
}

struct PathPlannerConfig {
  int steerSamples = 7;
  double primitiveArcCap = 1.0;    // upper bound on the primitive arc length
  double goalTolerance = 0.6;      // raised to one primitive arc if smaller
  double maxPathLength = 1e9;      // expansion horizon
  int maxExpansions = 200000;
  int yawBins = 72;
  double steerPenalty = 0.08;      // cost per radian of held steer per meter
  double steerChangePenalty = 0.05;
};

// Kinodynamic hybrid A* over constant-steer arc primitives, optionally
// admission-filtered so the result stays in the previous path's
// visibility-deformation class.
class PathPlanner {
 public:
  PathPlanner(double wheelbase, double steerMax, PathPlannerConfig config = {})
      : wheelbase_(wheelbase), steerMax_(steerMax), config_(config) {}

  // Primitive arc length chosen so one max-steer primitive deflects by about
  // half a grid cell laterally: solves ds * sin(steerMax * ds / L) = res / 2,
  // capped from both sides for sanity.
  static double computePrimitiveArc(double resolution, double steerMax, double wheelbase,
                                    double cap) {
    const double target = 0.5 * resolution;
    const double k = steerMax / wheelbase;
    auto f = [&](double ds) { return ds * std::sin(std::min(ds * k, M_PI / 2)) - target; };
    double lo = 1e-4, hi = cap;
    if (f(hi) <= 0.0) return hi;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (f(mid) > 0.0 ? hi : lo) = mid;
    }
    return std::max(0.5 * (lo + hi), resolution);
  }

  double primitiveArc(const OccupancyGrid2D& grid) const {
    return computePrimitiveArc(grid.resolution(), steerMax_, wheelbase_, config_.primitiveArcCap);
  }

  // Plans from start toward goal. When `previous` is given, every expansion
  // within arc length S of the start must stay collision-free, keep the
  // segment to the previous path unobstructed, and stay within D of it;
  // beyond S plain hybrid A* applies. Returns nothing when the frontier is
  // exhausted; the caller decides whether to retry unguided.
  std::optional<KinoPath> plan(const OccupancyGrid2D& grid, const CarState& start,
                               const Eigen::Vector2d& goal, const KinoPath* previous,
                               const SDVDParams& params) const {
    const double ds = primitiveArc(grid);
    const double goalTol = std::max(config_.goalTolerance, ds);
    const double s0 = previous ? nearestOnPath(*previous, start.position) : 0.0;
    const bool startBlocked = grid.occupiedInflatedWorld(start.position);

    std::vector<SearchNode> pool;
    pool.push_back({start.position, wrapAngle(start.heading), start.steer, -1, 0, 0.0});

    auto cmp = [&pool](const OpenEntry& l, const OpenEntry& r) {
      if (l.f != r.f) return l.f > r.f;
      if (pool[l.node].g != pool[r.node].g) return pool[l.node].g < pool[r.node].g;
      return l.seq > r.seq;
    };
    std::priority_queue<OpenEntry, std::vector<OpenEntry>, decltype(cmp)> open(cmp);
    std::unordered_map<uint64_t, double> bestG;

    const double xyBin = std::max(grid.resolution(), 0.5 * ds);
    auto key = [&](const Eigen::Vector2d& p, double heading) {
      const auto xi = static_cast<int64_t>(std::floor(p.x() / xyBin));
      const auto yi = static_cast<int64_t>(std::floor(p.y() / xyBin));
      const int hi = static_cast<int>(std::floor((heading + M_PI) / (2.0 * M_PI) * config_.yawBins));
      return (static_cast<uint64_t>(xi & 0xFFFFF) << 44) |
             (static_cast<uint64_t>(yi & 0xFFFFF) << 24) |
             static_cast<uint64_t>(hi & 0xFFFFFF);
    };

    int seq = 0;
    open.push({(start.position - goal).norm(), seq++, 0});
    bestG[key(start.position, start.heading)] = 0.0;

    std::vector<double> steers(config_.steerSamples);
    for (int i = 0; i < config_.steerSamples; ++i)
      steers[i] = -steerMax_ + 2.0 * steerMax_ * i / (config_.steerSamples - 1);

    int expansions = 0;
    while (!open.empty() && expansions < config_.maxExpansions) {
      const OpenEntry top = open.top();
      open.pop();
      const SearchNode cur = pool[top.node];
      ++expansions;

      if ((cur.position - goal).norm() <= goalTol)
        return reconstruct(pool, top.node, ds);

      if ((cur.position - goal).norm() <= 2.0 * params.S) {
        auto shot = analyticExpansion(grid, pool, top.node, goal, ds, goalTol, previous, params,
                                      s0, startBlocked);
        if (shot) return shot;
      }

      if (cur.depth * ds >= config_.maxPathLength) continue;

      for (const double steer : steers) {
        SearchNode child;
        stepArc(cur.position, cur.heading, steer, ds, child.position, child.heading);
        child.steer = steer;
        child.parent = top.node;
        child.depth = cur.depth + 1;

        const bool lenient = startBlocked && cur.depth * ds <= grid.inflation() + ds;
        if (!primitiveFree(grid, cur.position, cur.heading, steer, ds, lenient)) continue;
        if (previous && !admitGuided(grid, child.position, *previous, s0, child.depth * ds, params))
          continue;

        child.g = cur.g + ds + config_.steerPenalty * std::abs(steer) * ds +
                  config_.steerChangePenalty * std::abs(steer - cur.steer);
        const uint64_t k = key(child.position, child.heading);
        auto it = bestG.find(k);
        if (it != bestG.end() && it->second <= child.g) continue;
        bestG[k] = child.g;
        pool.push_back(child);
        open.push({child.g + (child.position - goal).norm(), seq++,
                   static_cast<int>(pool.size()) - 1});
      }
    }
    return std::nullopt;
  }

  double wheelbase() const { return wheelbase_; }
  double steerMax() const { return steerMax_; }
  const PathPlannerConfig& config() const { return config_; }

 private:
  struct SearchNode {
    Eigen::Vector2d position = Eigen::Vector2d::Zero();
    double heading = 0.0;
    double steer = 0.0;
    int parent = -1;
    int depth = 0;
    double g = 0.0;
  };
  struct OpenEntry {
    double f;
    int seq;
    int node;
  };

  void stepArc(const Eigen::Vector2d& p, double heading, double steer, double ds,
               Eigen::Vector2d& pOut, double& headingOut) const {
    const double kappa = std::tan(steer) / wheelbase_;
    if (std::abs(kappa) < 1e-9) {
      pOut = p + ds * Eigen::Vector2d(std::cos(heading), std::sin(heading));
      headingOut = heading;
      return;
    }
    const double h1 = heading + kappa * ds;
    pOut = p + Eigen::Vector2d((std::sin(h1) - std::sin(heading)) / kappa,
                               -(std::cos(h1) - std::cos(heading)) / kappa);
    headingOut = wrapAngle(h1);
  }

  // Chord checks between arc samples keep the whole primitive, including the
  // node-to-node chord, clear of the inflated layer.
  bool primitiveFree(const OccupancyGrid2D& grid, const Eigen::Vector2d& p, double heading,
                     double steer, double ds, bool lenient) const {
    const int sub = std::max(2, static_cast<int>(std::ceil(ds / (0.8 * grid.resolution()))));
    Eigen::Vector2d prev = p;
    for (int i = 1; i <= sub; ++i) {
      Eigen::Vector2d q;
      double h;
      stepArc(p, heading, steer, ds * i / sub, q, h);
      if (lenient) {
        if (grid.occupiedRaw(grid.worldToCell(q))) return false;
      } else if (!grid.isCollisionFreeSegment(prev, q)) {
        return false;
      }
      prev = q;
    }
    if (!lenient && !grid.isCollisionFreeSegment(p, prev)) return false;
    return true;
  }

  bool admitGuided(const OccupancyGrid2D& grid, const Eigen::Vector2d& p, const KinoPath& previous,
                   double s0, double s, const SDVDParams& params) const {
    if (s > params.S) return true;
    const Eigen::Vector2d ref = previous.positionAt(s0 + s);
    if ((p - ref).norm() > params.D) return false;
    return grid.isCollisionFreeSegment(p, ref);
  }

  std::optional<KinoPath> analyticExpansion(const OccupancyGrid2D& grid,
                                            const std::vector<SearchNode>& pool, int nodeIdx,
                                            const Eigen::Vector2d& goal, double ds, double goalTol,
                                            const KinoPath* previous, const SDVDParams& params,
                                            double s0, bool startBlocked) const {
    const SearchNode& cur = pool[nodeIdx];
    const Eigen::Vector2d vec = goal - cur.position;
    const double dist = vec.norm();
    if (dist < goalTol) return reconstruct(pool, nodeIdx, ds);
    const double alpha = wrapAngle(std::atan2(vec.y(), vec.x()) - cur.heading);
    if (std::abs(alpha) > 1.2) return std::nullopt;
    const double kappa = 2.0 * std::sin(alpha) / dist;
    if (std::abs(kappa) > std::tan(steerMax_) / wheelbase_) return std::nullopt;
    const double arcLen = std::abs(alpha) < 1e-9 ? dist : dist * std::abs(alpha) / std::sin(std::abs(alpha));
    const int steps = static_cast<int>(std::floor(arcLen / ds));
    const double steer = std::atan(kappa * wheelbase_);

    std::vector<KinoPathNode> extra;
    Eigen::Vector2d p = cur.position;
    double heading = cur.heading;
    for (int i = 0; i < steps; ++i) {
      const double s = (cur.depth + 1 + i) * ds;
      const bool lenient = startBlocked && (cur.depth + i) * ds <= grid.inflation() + ds;
      if (!primitiveFree(grid, p, heading, steer, ds, lenient)) return std::nullopt;
      Eigen::Vector2d pn;
      double hn;
      stepArc(p, heading, steer, ds, pn, hn);
      if (previous && !admitGuided(grid, pn, *previous, s0, s, params)) return std::nullopt;
      extra.push_back({pn, hn, steer, 1});
      p = pn;
      heading = hn;
    }
    if ((p - goal).norm() > goalTol) return std::nullopt;

    std::vector<KinoPathNode> nodes = collectChain(pool, nodeIdx);
    nodes.insert(nodes.end(), extra.begin(), extra.end());
    return KinoPath(std::move(nodes), ds);
  }

  static std::vector<KinoPathNode> collectChain(const std::vector<SearchNode>& pool, int nodeIdx) {
    std::vector<KinoPathNode> nodes;
    for (int i = nodeIdx; i >= 0; i = pool[i].parent)
      nodes.push_back({pool[i].position, pool[i].heading, pool[i].steer, 1});
    std::reverse(nodes.begin(), nodes.end());
    return nodes;
  }

  static std::optional<KinoPath> reconstruct(const std::vector<SearchNode>& pool, int nodeIdx,
                                             double ds) {
    return KinoPath(collectChain(pool, nodeIdx), ds);
  }

  double wheelbase_;
  double steerMax_;
  PathPlannerConfig config_;
};

}  // namespace carswarm
