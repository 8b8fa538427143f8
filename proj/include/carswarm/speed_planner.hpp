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
#include <limits>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "carswarm/geometry.hpp"
#include "carswarm/path_planner.hpp"
#include "carswarm/trajectory.hpp"

namespace carswarm {

struct STResolutions {
  double s = 0.2;  // m
  double t = 0.1;  // s
  double v = 0.2;  // m/s, used only for node pruning
};

struct SpeedLimits {
  double vMax = 8.0;
  double aMin = -3.0;
  double aMax = 3.0;
};

// Discretized space-time grid over (arc length along the path, time since
// plan start). A cell is blocked when the ego body, swept to the cell's arc
// length, overlaps another agent's broadcast body at the cell's stamp.
class STGraph {
 public:
  STGraph(double horizonS, double horizonT, STResolutions res, double startTime = 0.0)
      : res_(res),
        horizonS_(horizonS),
        horizonT_(horizonT),
        startTime_(startTime),
        ns_(std::max(1, static_cast<int>(std::ceil(horizonS / res.s)))),
        nt_(std::max(1, static_cast<int>(std::ceil(horizonT / res.t)))),
        blocked_(static_cast<size_t>(ns_) * nt_, 0) {}

  const STResolutions& resolutions() const { return res_; }
  double horizonS() const { return horizonS_; }
  double horizonT() const { return horizonT_; }
  double startTime() const { return startTime_; }
  int sCells() const { return ns_; }
  int tCells() const { return nt_; }

  void setBlocked(int si, int ti) {
    if (si >= 0 && si < ns_ && ti >= 0 && ti < nt_) blocked_[index(si, ti)] = 1;
  }

  bool isBlocked(int si, int ti) const {
    if (si < 0) si = 0;
    if (si >= ns_) return false;  // past the path end
    if (ti < 0) ti = 0;
    if (ti >= nt_) ti = nt_ - 1;  // beyond the horizon agents stay frozen
    return blocked_[index(si, ti)] != 0;
  }

  // State membership test used by the search and by post-hoc audits.
  bool isBlockedState(double s, double t) const {
    return isBlocked(static_cast<int>(std::floor(s / res_.s)),
                     static_cast<int>(std::floor(t / res_.t)));
  }

  int blockedCount() const {
    int n = 0;
    for (uint8_t c : blocked_) n += c != 0;
    return n;
  }

  // Text raster: rows are arc length (top = far end), columns are time.
  // Profile samples overlay as '*'.
  std::string dumpAscii(const std::vector<std::tuple<double, double, double>>& profile = {}) const {
    std::vector<std::string> rows(ns_, std::string(nt_, '.'));
    for (int si = 0; si < ns_; ++si)
      for (int ti = 0; ti < nt_; ++ti)
        if (blocked_[index(si, ti)]) rows[si][ti] = '#';
    for (const auto& [t, s, v] : profile) {
      (void)v;
      const int si = static_cast<int>(std::floor(s / res_.s));
      const int ti = static_cast<int>(std::floor(t / res_.t));
      if (si >= 0 && si < ns_ && ti >= 0 && ti < nt_) rows[si][ti] = '*';
    }
    std::string out;
    for (int si = ns_ - 1; si >= 0; --si) {
      out += rows[si];
      out.push_back('\n');
    }
    return out;
  }

 private:
  size_t index(int si, int ti) const { return static_cast<size_t>(ti) * ns_ + si; }

  STResolutions res_;
  double horizonS_;
  double horizonT_;
  double startTime_;
  int ns_;
  int nt_;
  std::vector<uint8_t> blocked_;
};

// Marks every (s, t) sample whose exact body-to-body distance drops to the
// safety margin or below. Other agents are frozen at their final pose once
// their trajectories end.
inline STGraph buildSTGraph(const KinoPath& path, const std::vector<TrajectoryMessage>& others,
                            const std::vector<ConvexFootprint>& otherBodies,
                            const ConvexFootprint& ego, double startTime, double horizonT,
                            STResolutions res, double margin) {
  STGraph graph(std::max(path.length(), res.s), horizonT, res, startTime);
  if (others.empty() || path.nodeCount() == 0) return graph;

  std::vector<FlatTrajectory> trajs;
  trajs.reserve(others.size());
  for (const TrajectoryMessage& m : others) trajs.push_back(FlatTrajectory::fromMessage(m));

  const int ns = graph.sCells();
  const int nt = graph.tCells();
  std::vector<Pose2> egoPoses(ns);
  for (int si = 0; si < ns; ++si) {
    const double s = si * res.s;
    egoPoses[si] = Pose2::at(path.positionAt(s), path.headingAt(s));
  }

  const double egoR = ego.circumradius();
  for (size_t k = 0; k < trajs.size(); ++k) {
    const ConvexFootprint& body = otherBodies[k];
    for (int ti = 0; ti < nt; ++ti) {
      const double tAbs = startTime + ti * res.t;
      const auto [opos, oheading] = trajs[k].poseAtAbs(tAbs);
      const Pose2 opose = Pose2::at(opos, oheading);
      for (int si = 0; si < ns; ++si) {
        const double gap = (egoPoses[si].position - opos).norm() - egoR - body.circumradius();
        if (gap > margin) continue;
        if (signedDistanceExact(ego, egoPoses[si], body, opose) <= margin) graph.setBlocked(si, ti);
      }
    }
  }
  return graph;
}

// Convenience overload when every agent shares the ego body model.
inline STGraph buildSTGraph(const KinoPath& path, const std::vector<TrajectoryMessage>& others,
                            const ConvexFootprint& ego, double startTime, double horizonT,
                            STResolutions res, double margin) {
  std::vector<ConvexFootprint> bodies(others.size(), ego);
  return buildSTGraph(path, others, bodies, ego, startTime, horizonT, res, margin);
}

struct SpeedNode {
  double s = 0.0;
  double v = 0.0;
  double t = 0.0;
  double gCost = 0.0;  // time elapsed from the start state
  int parent = -1;
  double appliedAccel = 0.0;
};

inline std::tuple<int64_t, int64_t, int64_t> pruneKey(const SpeedNode& node, const STResolutions& res) {
  return {static_cast<int64_t>(std::floor(node.s / res.s)),
          static_cast<int64_t>(std::floor(node.t / res.t)),
          static_cast<int64_t>(std::floor(node.v / res.v))};
}

// Minimum time to reach `remaining` meters ahead and arrive at rest, starting
// at speed v, under the given limits. This is the classic accelerate /
// cruise / brake profile; if the state is already too fast to stop in time
// the returned value is the time to reach the end braking immediately.
inline double minTimeToRest(double remaining, double v, const SpeedLimits& limits) {
  const double aAcc = limits.aMax;
  const double aDec = -limits.aMin;
  if (remaining <= 0.0) return 0.0;
  const double brakeDist = v * v / (2.0 * aDec);
  if (brakeDist > remaining) {
    const double disc = std::max(0.0, v * v - 2.0 * aDec * remaining);
    return (v - std::sqrt(disc)) / aDec;
  }
  const double vpSq = (remaining + v * v / (2.0 * aAcc)) * 2.0 * aAcc * aDec / (aAcc + aDec);
  const double vp = std::sqrt(std::max(vpSq, v * v));
  if (vp <= limits.vMax) return (vp - v) / aAcc + vp / aDec;
  const double d1 = (limits.vMax * limits.vMax - v * v) / (2.0 * aAcc);
  const double d3 = limits.vMax * limits.vMax / (2.0 * aDec);
  return (limits.vMax - v) / aAcc + (remaining - d1 - d3) / limits.vMax + limits.vMax / aDec;
}

struct SpeedSegment {
  double t0 = 0.0;
  double s0 = 0.0;
  double v0 = 0.0;
  double accel = 0.0;
  double duration = 0.0;

  double sAt(double t) const {
    const double u = t - t0;
    return s0 + v0 * u + 0.5 * accel * u * u;
  }
  double vAt(double t) const { return v0 + accel * (t - t0); }
};

// Piecewise constant-acceleration speed profile in time relative to the plan
// start; monotone in s with v in [0, vMax].
class SpeedProfile {
 public:
  SpeedProfile() = default;
  explicit SpeedProfile(std::vector<SpeedSegment> segments) : segments_(std::move(segments)) {}

  const std::vector<SpeedSegment>& segments() const { return segments_; }
  bool empty() const { return segments_.empty(); }

  double totalTime() const {
    return segments_.empty() ? 0.0 : segments_.back().t0 + segments_.back().duration;
  }
  double endS() const {
    return segments_.empty() ? 0.0 : segments_.back().sAt(segments_.back().t0 + segments_.back().duration);
  }

  double sAt(double t) const { return locate(t).sAt(clampT(t)); }
  double vAt(double t) const { return locate(t).vAt(clampT(t)); }

  std::vector<std::tuple<double, double, double>> samples(double dt) const {
    std::vector<std::tuple<double, double, double>> out;
    const double total = totalTime();
    for (double t = 0.0; t < total + 1e-9; t += dt) {
      const double tc = std::min(t, total);
      out.emplace_back(tc, sAt(tc), vAt(tc));
    }
    return out;
  }

 private:
  double clampT(double t) const { return std::min(std::max(t, 0.0), totalTime()); }

  const SpeedSegment& locate(double t) const {
    t = clampT(t);
    for (const SpeedSegment& seg : segments_) {
      if (t <= seg.t0 + seg.duration + 1e-12) return seg;
    }
    return segments_.back();
  }

  std::vector<SpeedSegment> segments_;
};

namespace detail {

inline bool tailCollisionFree(const std::vector<SpeedSegment>& tail, const STGraph& graph) {
  const double tRes = graph.resolutions().t;
  for (const SpeedSegment& seg : tail) {
    const double tEnd = seg.t0 + seg.duration;
    for (double t = seg.t0; t < tEnd + 1e-9; t += tRes) {
      const double tc = std::min(t, tEnd);
      if (graph.isBlockedState(seg.sAt(tc), tc)) return false;
    }
  }
  return true;
}

}  // namespace detail

// Time-optimal accelerate / cruise / brake tail from the node state to the
// path end at rest; applicable only when its swept samples clear the blocked
// cells. When the node is already too fast to stop in time the tail brakes
// immediately and crosses the end at speed.
inline std::optional<std::vector<SpeedSegment>> tryOneShot(const SpeedNode& node,
                                                           const STGraph& graph,
                                                           const SpeedLimits& limits) {
  const double aAcc = limits.aMax;
  const double aDec = -limits.aMin;
  const double r = graph.horizonS() - node.s;
  std::vector<SpeedSegment> tail;
  if (r <= 1e-12) {
    if (node.v > 1e-9) return std::nullopt;  // would overrun the path end
    return tail;                             // already there, at rest
  }

  const double brakeDist = node.v * node.v / (2.0 * aDec);
  if (brakeDist > r + 1e-12) {
    const double dur = (node.v - std::sqrt(std::max(0.0, node.v * node.v - 2.0 * aDec * r))) / aDec;
    tail.push_back({node.t, node.s, node.v, -aDec, dur});
  } else {
    const double vpSq = (r + node.v * node.v / (2.0 * aAcc)) * 2.0 * aAcc * aDec / (aAcc + aDec);
    const double vp = std::sqrt(std::max(vpSq, node.v * node.v));
    double t = node.t;
    double s = node.s;
    if (vp <= limits.vMax) {
      const double dAcc = (vp - node.v) / aAcc;
      if (dAcc > 1e-12) tail.push_back({t, s, node.v, aAcc, dAcc});
      t += dAcc;
      s += (vp * vp - node.v * node.v) / (2.0 * aAcc);
      if (vp / aDec > 1e-12) tail.push_back({t, s, vp, -aDec, vp / aDec});
    } else {
      const double vM = limits.vMax;
      const double dAcc = (vM - node.v) / aAcc;
      if (dAcc > 1e-12) tail.push_back({t, s, node.v, aAcc, dAcc});
      t += dAcc;
      s += (vM * vM - node.v * node.v) / (2.0 * aAcc);
      const double cruise = (r - (vM * vM - node.v * node.v) / (2.0 * aAcc) - vM * vM / (2.0 * aDec)) / vM;
      if (cruise > 1e-12) tail.push_back({t, s, vM, 0.0, cruise});
      t += std::max(cruise, 0.0);
      s += std::max(cruise, 0.0) * vM;
      tail.push_back({t, s, vM, -aDec, vM / aDec});
    }
  }
  if (!detail::tailCollisionFree(tail, graph)) return std::nullopt;
  return tail;
}

struct SpeedSearchConfig {
  double Tf = 0.4;        // forward expansion interval
  int accelSamples = 7;   // uniform in [aMin, aMax]
  double lambdaH = 1.0;   // heuristic weight
  bool enablePruning = true;
  bool enableOneShot = true;
  int maxExpansions = 200000;
};

struct SpeedSearchStats {
  int expansions = 0;
  bool oneShotUsed = false;
};

// 1-D A* over (s, v, t) with constant-acceleration primitives of length Tf.
// Completion is analytic: either the one-shot tail terminates the search, or
// a coast-and-brake landing is queued as a goal candidate and pops when no
// cheaper node remains. Nodes sharing an S-T-V cell keep only the lower cost.
inline std::optional<SpeedProfile> searchSpeedProfile(const STGraph& graph, double v0,
                                                      const SpeedLimits& limits,
                                                      const SpeedSearchConfig& cfg = {},
                                                      SpeedSearchStats* stats = nullptr) {
  SpeedSearchStats localStats;
  SpeedSearchStats& st = stats ? *stats : localStats;
  st = {};

  if (graph.isBlockedState(0.0, 0.0)) return std::nullopt;

  const double aDec = -limits.aMin;
  const double horizonS = graph.horizonS();
  auto heuristic = [&](double s, double v) { return minTimeToRest(horizonS - s, v, limits); };

  std::vector<SpeedNode> pool;
  pool.push_back({0.0, v0, 0.0, 0.0, -1, 0.0});

  struct Entry {
    double f;
    double g;
    int seq;
    int node;
    int tail;  // index into tails when this entry is a landing candidate
  };
  auto cmp = [](const Entry& l, const Entry& r) {
    if (l.f != r.f) return l.f > r.f;
    if (l.tail != r.tail) return l.tail < r.tail;  // pop landings before peers
    if (l.g != r.g) return l.g < r.g;
    return l.seq > r.seq;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(cmp)> open(cmp);
  std::vector<std::vector<SpeedSegment>> tails;

  struct KeyHash {
    size_t operator()(const std::tuple<int64_t, int64_t, int64_t>& k) const {
      const auto [a, b, c] = k;
      size_t h = std::hash<int64_t>()(a);
      h = h * 1000003 ^ std::hash<int64_t>()(b);
      h = h * 1000003 ^ std::hash<int64_t>()(c);
      return h;
    }
  };
  std::unordered_map<std::tuple<int64_t, int64_t, int64_t>, double, KeyHash> best;

  int seq = 0;
  open.push({cfg.lambdaH * heuristic(0.0, v0), 0.0, seq++, 0, -1});
  best[pruneKey(pool[0], graph.resolutions())] = open.top().f;

  std::vector<double> accels(cfg.accelSamples);
  for (int i = 0; i < cfg.accelSamples; ++i)
    accels[i] = limits.aMin + (limits.aMax - limits.aMin) * i / (cfg.accelSamples - 1);

  auto assemble = [&](int nodeIdx, const std::vector<SpeedSegment>& tail) {
    std::vector<SpeedSegment> segs;
    for (int i = nodeIdx; i > 0; i = pool[i].parent) {
      const SpeedNode& n = pool[i];
      const SpeedNode& p = pool[pool[i].parent];
      segs.push_back({p.t, p.s, p.v, n.appliedAccel, n.t - p.t});
    }
    std::reverse(segs.begin(), segs.end());
    segs.insert(segs.end(), tail.begin(), tail.end());
    return SpeedProfile(std::move(segs));
  };

  while (!open.empty() && st.expansions < cfg.maxExpansions) {
    const Entry top = open.top();
    open.pop();
    if (top.tail >= 0) return assemble(top.node, tails[top.tail]);

    const SpeedNode cur = pool[top.node];
    ++st.expansions;

    if (cfg.enableOneShot) {
      auto shot = tryOneShot(cur, graph, limits);
      if (shot) {
        st.oneShotUsed = true;
        return assemble(top.node, *shot);
      }
    }

    // Coast-and-brake landing as a goal candidate.
    {
      const double r = horizonS - cur.s;
      std::vector<SpeedSegment> tail;
      bool landable = false;
      if (r <= 1e-12 && cur.v <= 1e-9) {
        landable = true;
      } else if (cur.v > 1e-9) {
        const double brakeDist = cur.v * cur.v / (2.0 * aDec);
        if (brakeDist > r + 1e-12) {
          const double dur =
              (cur.v - std::sqrt(std::max(0.0, cur.v * cur.v - 2.0 * aDec * r))) / aDec;
          tail.push_back({cur.t, cur.s, cur.v, -aDec, dur});
          landable = true;
        } else {
          const double coast = (r - brakeDist) / cur.v;
          if (coast > 1e-12) tail.push_back({cur.t, cur.s, cur.v, 0.0, coast});
          tail.push_back({cur.t + coast, cur.s + coast * cur.v, cur.v, -aDec, cur.v / aDec});
          landable = true;
        }
      }
      if (landable && detail::tailCollisionFree(tail, graph)) {
        const double tailTime = tail.empty() ? 0.0 : tail.back().t0 + tail.back().duration - cur.t;
        tails.push_back(std::move(tail));
        open.push({cur.gCost + tailTime, cur.gCost + tailTime, seq++, top.node,
                   static_cast<int>(tails.size()) - 1});
      }
    }

    for (const double a : accels) {
      SpeedNode child;
      child.v = cur.v + a * cfg.Tf;
      if (child.v < -1e-9 || child.v > limits.vMax + 1e-9) continue;
      child.v = std::min(std::max(child.v, 0.0), limits.vMax);
      child.s = cur.s + cur.v * cfg.Tf + 0.5 * a * cfg.Tf * cfg.Tf;
      if (child.s > horizonS + 1e-9) continue;  // completions go through the analytic tails
      child.t = cur.t + cfg.Tf;
      child.gCost = cur.gCost + cfg.Tf;
      child.parent = top.node;
      child.appliedAccel = a;

      bool blockedStep = false;
      const double tRes = graph.resolutions().t;
      for (double u = 0.0; u < cfg.Tf + 1e-9; u += tRes) {
        const double uc = std::min(u, cfg.Tf);
        if (graph.isBlockedState(cur.s + cur.v * uc + 0.5 * a * uc * uc, cur.t + uc)) {
          blockedStep = true;
          break;
        }
      }
      if (blockedStep) continue;

      const double f = child.gCost + cfg.lambdaH * heuristic(child.s, child.v);
      if (cfg.enablePruning) {
        const auto key = pruneKey(child, graph.resolutions());
        auto it = best.find(key);
        if (it != best.end() && it->second <= f) continue;
        best[key] = f;
      }
      pool.push_back(child);
      open.push({f, child.gCost, seq++, static_cast<int>(pool.size()) - 1, -1});
    }
  }
  return std::nullopt;
}

}  // namespace carswarm
