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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "carswarm/speed_planner.hpp"
#include "oracles.hpp"

using namespace carswarm;

namespace {

KinoPath straightPath(const Eigen::Vector2d& from, double heading, int nodes, double ds) {
  std::vector<KinoPathNode> out;
  const Eigen::Vector2d dir(std::cos(heading), std::sin(heading));
  for (int i = 0; i < nodes; ++i) out.push_back({from + i * ds * dir, heading, 0.0, 1});
  return KinoPath(std::move(out), ds);
}

FlatTrajectory constantVelocity(const Eigen::Vector2d& p0, const Eigen::Vector2d& v,
                                double duration, double startStamp) {
  CoefficientBlock c = CoefficientBlock::Zero();
  c.row(0) = p0.transpose();
  c.row(1) = v.transpose();
  return FlatTrajectory({c}, duration, startStamp, 1);
}

STGraph emptyGraph(double horizonS, double horizonT = 20.0) {
  return STGraph(horizonS, horizonT, STResolutions{});
}

void checkProfileInvariants(const SpeedProfile& profile, const STGraph& graph,
                            const SpeedLimits& limits) {
  double prevS = -1e-12;
  for (const auto& [t, s, v] : profile.samples(0.05)) {
    REQUIRE(v >= -1e-9);
    REQUIRE(v <= limits.vMax + 1e-9);
    REQUIRE(s >= prevS - 1e-9);
    prevS = s;
    REQUIRE_FALSE(graph.isBlockedState(s, t));
  }
  for (const SpeedSegment& seg : profile.segments()) {
    REQUIRE(seg.accel >= limits.aMin - 1e-9);
    REQUIRE(seg.accel <= limits.aMax + 1e-9);
  }
}

}  // namespace

TEST_CASE("empty paths and agents produce an empty graph") {
  const KinoPath path = straightPath({0, 0}, 0.0, 40, 0.3);
  const ConvexFootprint body = ConvexFootprint::rectangle(-0.2, 0.8, 0.3);
  const STGraph g = buildSTGraph(path, {}, body, 0.0, 10.0, STResolutions{}, 0.3);
  REQUIRE(g.blockedCount() == 0);
}

TEST_CASE("a parked agent astride the path blocks a full column") {
  const KinoPath path = straightPath({0, 0}, 0.0, 41, 0.3);  // 12 m along +x
  const ConvexFootprint body = ConvexFootprint::rectangle(-0.2, 0.8, 0.3);
  const FlatTrajectory parked = FlatTrajectory::parked({6.0, 0.0}, M_PI / 2, 1.0, 0.0);
  const STGraph g =
      buildSTGraph(path, {parked.toMessage(1)}, body, 0.0, 10.0, STResolutions{}, 0.3);
  const int sIdx = static_cast<int>(std::floor(6.0 / g.resolutions().s));
  for (int ti = 0; ti < g.tCells(); ++ti) REQUIRE(g.isBlocked(sIdx, ti));
  REQUIRE_FALSE(g.isBlocked(static_cast<int>(std::floor(1.0 / g.resolutions().s)), 5));
}

TEST_CASE("crossing agent blocking matches a finer rasterization") {
  const KinoPath path = straightPath({0, 0}, 0.0, 41, 0.3);
  const ConvexFootprint body = ConvexFootprint::rectangle(-0.2, 0.8, 0.3);
  const FlatTrajectory crossing = constantVelocity({6.0, -5.0}, {0.0, 1.0}, 10.0, 0.0);
  const STResolutions res{};
  const double margin = 0.3;
  const STGraph g = buildSTGraph(path, {crossing.toMessage(1)}, body, 0.0, 10.0, res, margin);
  REQUIRE(g.blockedCount() > 0);

  // Independent fine oracle: 10x resolution, brute-force polygon distance.
  const oracles::Poly localBody = {{-0.2, -0.3}, {-0.2, 0.3}, {0.8, 0.3}, {0.8, -0.3}};
  std::set<std::pair<int, int>> fine;
  for (int fi = 0; fi <= 10 * g.sCells(); ++fi) {
    for (int fj = 0; fj <= 10 * g.tCells(); ++fj) {
      const double s = fi * res.s / 10.0;
      const double t = fj * res.t / 10.0;
      if (s > path.length()) continue;
      const oracles::Poly ego = oracles::placePoly(localBody, path.positionAt(s), 0.0);
      const Eigen::Vector2d op = crossing.evaluateAbs(std::min(t, 10.0), 0);
      const oracles::Poly other = oracles::placePoly(localBody, op, M_PI / 2);
      if (oracles::bruteForceSignedDistance(ego, other) <= margin) fine.insert({fi / 10, fj / 10});
    }
  }
  REQUIRE_FALSE(fine.empty());

  auto coarseBlockedNear = [&](int si, int ti) {
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        if (g.isBlocked(si + a, ti + b)) return true;
    return false;
  };
  for (const auto& [si, ti] : fine) REQUIRE(coarseBlockedNear(si, ti));
  for (int si = 0; si < g.sCells(); ++si) {
    for (int ti = 0; ti < g.tCells(); ++ti) {
      if (!g.isBlocked(si, ti)) continue;
      bool nearFine = false;
      for (int a = -1; a <= 1 && !nearFine; ++a)
        for (int b = -1; b <= 1 && !nearFine; ++b) nearFine = fine.count({si + a, ti + b}) > 0;
      REQUIRE(nearFine);
    }
  }
}

TEST_CASE("empty-graph search matches the closed-form triangular profile") {
  const STGraph g = emptyGraph(10.0);
  const SpeedLimits limits{8.0, -3.0, 3.0};
  SpeedSearchStats stats;
  const auto profile = searchSpeedProfile(g, 0.0, limits, {}, &stats);
  REQUIRE(profile.has_value());
  const double expected = 2.0 * std::sqrt(10.0 / 3.0);  // triangular, symmetric limits
  REQUIRE(profile->totalTime() == Catch::Approx(expected).margin(0.4));
  REQUIRE(profile->endS() == Catch::Approx(10.0).margin(1e-6));
  REQUIRE(stats.oneShotUsed);
  checkProfileInvariants(*profile, g, limits);
}

TEST_CASE("cruise start stays at zero acceleration until the brake") {
  const STGraph g = emptyGraph(20.0, 30.0);
  const SpeedLimits limits{2.0, -3.0, 3.0};
  const auto profile = searchSpeedProfile(g, 2.0, limits);
  REQUIRE(profile.has_value());
  REQUIRE(profile->totalTime() == Catch::Approx(20.0 / 2.0).margin(0.4));
  REQUIRE(profile->segments().front().accel == Catch::Approx(0.0).margin(1e-12));
  for (const SpeedSegment& seg : profile->segments()) REQUIRE(seg.accel <= 1e-12);
  checkProfileInvariants(*profile, g, limits);
}

TEST_CASE("profiles detour around a blocked block of cells") {
  STGraph g = emptyGraph(10.0, 12.0);
  const STResolutions res = g.resolutions();
  for (int si = static_cast<int>(4.0 / res.s); si < static_cast<int>(5.0 / res.s); ++si)
    for (int ti = static_cast<int>(1.0 / res.t); ti < static_cast<int>(2.0 / res.t); ++ti)
      g.setBlocked(si, ti);
  const SpeedLimits limits{3.0, -2.0, 2.0};
  const auto profile = searchSpeedProfile(g, 2.0, limits);
  REQUIRE(profile.has_value());
  checkProfileInvariants(*profile, g, limits);
  // The unobstructed optimum would cross the block, so time must be paid.
  REQUIRE(profile->totalTime() > oracles::bangBangTimeToRest(10.0, 2.0, 3.0, 2.0, 2.0) + 1e-6);
}

TEST_CASE("a blocked start cell is a planning failure") {
  STGraph g = emptyGraph(10.0);
  g.setBlocked(0, 0);
  REQUIRE_FALSE(searchSpeedProfile(g, 0.0, SpeedLimits{}).has_value());
}

TEST_CASE("prune keys quantize the S-T-V state") {
  const STResolutions res{0.2, 0.1, 0.1};
  SpeedNode a{3.0, 1.01, 2.0, 2.0, -1, 0.0};
  SpeedNode b{3.0, 1.02, 2.0, 2.0, -1, 0.0};
  SpeedNode c{3.0, 1.11, 2.0, 2.0, -1, 0.0};
  REQUIRE(pruneKey(a, res) == pruneKey(b, res));
  REQUIRE(pruneKey(a, res) != pruneKey(c, res));
}

TEST_CASE("one-shot tails obey the closed form and the collision regions") {
  const SpeedLimits limits{3.0, -2.0, 2.0};
  SECTION("empty graph always succeeds at the closed-form time") {
    const STGraph g = emptyGraph(10.0, 15.0);
    std::mt19937_64 rng(23);
    for (int k = 0; k < 50; ++k) {
      SpeedNode node;
      node.s = oracles::uniform(rng, 0.0, 9.0);
      node.v = oracles::uniform(rng, 0.0, limits.vMax);
      node.t = oracles::uniform(rng, 0.0, 3.0);
      const auto tail = tryOneShot(node, g, limits);
      REQUIRE(tail.has_value());
      const double tailTime =
          tail->empty() ? 0.0 : tail->back().t0 + tail->back().duration - node.t;
      REQUIRE(tailTime == Catch::Approx(oracles::bangBangTimeToRest(10.0 - node.s, node.v,
                                                                    limits.vMax, 2.0, 2.0))
                              .margin(1e-9));
    }
  }
  SECTION("a cell on the curve rejects the shot") {
    STGraph g = emptyGraph(10.0, 15.0);
    const SpeedNode node{0.0, 2.0, 0.0, 0.0, -1, 0.0};
    const auto tail = tryOneShot(node, g, limits);
    REQUIRE(tail.has_value());
    double tCross = -1.0;
    for (const SpeedSegment& seg : *tail)
      for (double t = seg.t0; t <= seg.t0 + seg.duration; t += 0.01)
        if (tCross < 0.0 && seg.sAt(t) >= 5.0) tCross = t;
    REQUIRE(tCross > 0.0);
    g.setBlocked(static_cast<int>(5.0 / g.resolutions().s),
                 static_cast<int>(tCross / g.resolutions().t));
    REQUIRE_FALSE(tryOneShot(node, g, limits).has_value());
  }
  SECTION("cells strictly in the past do not matter") {
    STGraph g = emptyGraph(10.0, 15.0);
    for (int si = 0; si < g.sCells(); ++si)
      for (int ti = 0; ti < static_cast<int>(2.0 / g.resolutions().t) - 1; ++ti)
        g.setBlocked(si, ti);
    const SpeedNode node{3.0, 1.0, 2.0, 2.0, -1, 0.0};
    REQUIRE(tryOneShot(node, g, limits).has_value());
  }
}

TEST_CASE("heuristic is admissible against the closed-form oracle") {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 1000; ++k) {
    const SpeedLimits limits{oracles::uniform(rng, 1.0, 8.0), -oracles::uniform(rng, 0.5, 4.0),
                             oracles::uniform(rng, 0.5, 4.0)};
    const double remaining = oracles::uniform(rng, 0.0, 30.0);
    const double v = oracles::uniform(rng, 0.0, limits.vMax);
    const double heuristic = minTimeToRest(remaining, v, limits);
    const double oracle =
        oracles::bangBangTimeToRest(remaining, v, limits.vMax, limits.aMax, -limits.aMin);
    REQUIRE(heuristic <= oracle + 1e-9);
    REQUIRE(heuristic == Catch::Approx(oracle).margin(1e-9));
  }
}

TEST_CASE("pruning and one-shot never worsen the result beyond one step") {
  std::mt19937_64 rng(37);
  SpeedSearchConfig defaults;
  SpeedSearchConfig bare;
  bare.enablePruning = false;
  bare.enableOneShot = false;

  for (int k = 0; k < 30; ++k) {
    STGraph g(oracles::uniform(rng, 6.0, 14.0), 16.0, STResolutions{});
    const int nBlocks = oracles::uniformInt(rng, 0, 3);
    for (int b = 0; b < nBlocks; ++b) {
      const int s0 = oracles::uniformInt(rng, 5, g.sCells() - 2);
      const int t0 = oracles::uniformInt(rng, 8, g.tCells() - 2);
      for (int si = s0; si < std::min(s0 + 6, g.sCells()); ++si)
        for (int ti = t0; ti < std::min(t0 + 10, g.tCells()); ++ti) g.setBlocked(si, ti);
    }
    const SpeedLimits limits{oracles::uniform(rng, 1.5, 4.0), -2.0, 2.0};
    const double v0 = oracles::uniform(rng, 0.0, limits.vMax);

    SpeedSearchStats onStats, offStats;
    const auto fast = searchSpeedProfile(g, v0, limits, defaults, &onStats);
    const auto slow = searchSpeedProfile(g, v0, limits, bare, &offStats);
    REQUIRE(fast.has_value() == slow.has_value());
    if (fast) {
      REQUIRE(onStats.expansions <= offStats.expansions);
      REQUIRE(std::abs(fast->totalTime() - slow->totalTime()) <= defaults.Tf + 1e-9);
      checkProfileInvariants(*fast, g, limits);
      checkProfileInvariants(*slow, g, limits);
    }
  }
}

TEST_CASE("pruning strictly reduces expansions when duplicates exist") {
  const STGraph g = emptyGraph(12.0, 20.0);
  const SpeedLimits limits{3.0, -2.0, 2.0};
  SpeedSearchConfig noShot;
  noShot.enableOneShot = false;
  SpeedSearchConfig noShotNoPrune = noShot;
  noShotNoPrune.enablePruning = false;

  SpeedSearchStats pruned, unpruned;
  const auto a = searchSpeedProfile(g, 0.0, limits, noShot, &pruned);
  const auto b = searchSpeedProfile(g, 0.0, limits, noShotNoPrune, &unpruned);
  REQUIRE(a.has_value());
  REQUIRE(b.has_value());
  REQUIRE(pruned.expansions < unpruned.expansions);
  REQUIRE(std::abs(a->totalTime() - b->totalTime()) <= noShot.Tf + 1e-9);
}

TEST_CASE("search without one-shot still lands near the closed form") {
  std::mt19937_64 rng(43);
  SpeedSearchConfig bare;
  bare.enablePruning = false;
  bare.enableOneShot = false;
  for (int k = 0; k < 100; ++k) {
    const double horizonS = oracles::uniform(rng, 4.0, 18.0);
    const SpeedLimits limits{oracles::uniform(rng, 1.0, 6.0), -oracles::uniform(rng, 1.0, 3.0),
                             oracles::uniform(rng, 1.0, 3.0)};
    const double v0 = oracles::uniform(rng, 0.0, limits.vMax);
    const STGraph g = emptyGraph(horizonS, 60.0);
    const auto profile = searchSpeedProfile(g, v0, limits, bare);
    REQUIRE(profile.has_value());
    const double oracle =
        oracles::bangBangTimeToRest(horizonS, v0, limits.vMax, limits.aMax, -limits.aMin);
    REQUIRE(profile->totalTime() <= oracle + bare.Tf + 1e-9);
    REQUIRE(profile->totalTime() >= oracle - 1e-6);
  }
}

TEST_CASE("too-fast starts cross the end braking flat out") {
  const STGraph g = emptyGraph(2.0, 10.0);
  const SpeedLimits limits{8.0, -2.0, 2.0};
  const auto profile = searchSpeedProfile(g, 6.0, limits);
  REQUIRE(profile.has_value());
  REQUIRE(profile->segments().size() == 1);
  REQUIRE(profile->segments().front().accel == Catch::Approx(-2.0));
  REQUIRE(profile->endS() == Catch::Approx(2.0).margin(1e-6));
}

TEST_CASE("graph dump shows blocked cells and profile overlay") {
  STGraph g(2.0, 1.0, STResolutions{0.5, 0.5, 0.2});
  g.setBlocked(1, 1);
  const std::string dump = g.dumpAscii({{0.0, 0.0, 1.0}});
  REQUIRE(dump.find('#') != std::string::npos);
  REQUIRE(dump.find('*') != std::string::npos);
  REQUIRE(std::count(dump.begin(), dump.end(), '\n') == g.sCells());
}
