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

#include "carswarm/geometry.hpp"
#include "oracles.hpp"

using namespace carswarm;

namespace {

ConvexFootprint unitSquare() {
  // [0,1]^2, clockwise.
  return ConvexFootprint({{0.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}, {1.0, 0.0}});
}

ConvexFootprint centeredSquare(double half = 0.5) {
  return ConvexFootprint::rectangle(-half, half, half);
}

ConvexFootprint randomConvex(std::mt19937_64& rng) {
  for (;;) {
    const int n = oracles::uniformInt(rng, 3, 7);
    std::vector<Eigen::Vector2d> v;
    const double phase = oracles::uniform(rng, 0.0, 2.0 * M_PI);
    for (int i = 0; i < n; ++i) {
      const double a = phase - 2.0 * M_PI * i / n + oracles::uniform(rng, -0.2, 0.2);
      const double r = oracles::uniform(rng, 0.4, 1.4);
      v.emplace_back(r * std::cos(a), r * std::sin(a));
    }
    try {
      return ConvexFootprint(std::move(v));
    } catch (const GeometryError&) {
      continue;
    }
  }
}

oracles::Poly worldVertices(const ConvexFootprint& f, const Pose2& pose) {
  oracles::Poly out;
  for (int i = 0; i < f.count(); ++i) out.push_back(pose.position + pose.rotation * f.vertex(i));
  return out;
}

}  // namespace

TEST_CASE("footprint validation rejects degenerate input") {
  REQUIRE_THROWS_AS(ConvexFootprint({{0, 0}, {1, 0}}), GeometryError);
  REQUIRE_THROWS_AS(ConvexFootprint({{0, 0}, {0, 0}, {1, 1}}), GeometryError);
  // Counterclockwise ordering.
  REQUIRE_THROWS_AS(ConvexFootprint({{0, 0}, {1, 0}, {1, 1}, {0, 1}}), GeometryError);
  // Non-convex.
  REQUIRE_THROWS_AS(ConvexFootprint({{0, 0}, {0, 2}, {2, 2}, {0.2, 1.0}, {2, 0}}), GeometryError);
  REQUIRE_NOTHROW(unitSquare());
}

TEST_CASE("vertex-edge distance on the unit square") {
  const PlacedPolygon ego{unitSquare(), Pose2{}};
  // Bottom edge (1,0) -> (0,0): its line is y = 0 with outward normal -y.
  REQUIRE(vertexEdgeDistance(ego, 3, {0.5, -1.0}) == Catch::Approx(1.0));
  // Vertex on the edge line.
  REQUIRE(vertexEdgeDistance(ego, 3, {0.25, 0.0}) == Catch::Approx(0.0).margin(1e-15));
  // Interior point sits on the negative side.
  REQUIRE(vertexEdgeDistance(ego, 3, {0.5, 0.5}) == Catch::Approx(-0.5));

  // Translation of both bodies leaves the value unchanged.
  const Eigen::Vector2d shift(3.7, -1.9);
  const PlacedPolygon moved{unitSquare(), Pose2{shift, Eigen::Matrix2d::Identity()}};
  REQUIRE(vertexEdgeDistance(moved, 3, Eigen::Vector2d(0.5, -1.0) + shift) ==
          Catch::Approx(1.0).epsilon(1e-12));

  REQUIRE_THROWS_AS(vertexEdgeDistance(ego, 7, {0, 0}), GeometryError);
  const PlacedPolygon degenerate{
      ConvexFootprint::unchecked({{0, 0}, {0, 0}, {1, 1}}), Pose2{}};
  REQUIRE_THROWS_AS(vertexEdgeDistance(degenerate, 0, {0, 0}), GeometryError);
}

TEST_CASE("exact distance of face-parallel squares equals the gap") {
  for (const double gap : {0.1, 0.5, 2.0}) {
    const Pose2 a = Pose2::at({0.0, 0.0}, 0.0);
    const Pose2 b = Pose2::at({1.0 + gap, 0.0}, 0.0);
    REQUIRE(signedDistanceExact(centeredSquare(), a, centeredSquare(), b) ==
            Catch::Approx(gap).epsilon(1e-12));
  }
}

TEST_CASE("exact distance is invariant under a common rigid motion") {
  std::mt19937_64 rng(41);
  for (int k = 0; k < 50; ++k) {
    const ConvexFootprint fa = randomConvex(rng);
    const ConvexFootprint fb = randomConvex(rng);
    const Pose2 pa = Pose2::at({oracles::uniform(rng, -2, 2), oracles::uniform(rng, -2, 2)},
                               oracles::uniform(rng, -3, 3));
    const Pose2 pb = Pose2::at({oracles::uniform(rng, -2, 2), oracles::uniform(rng, -2, 2)},
                               oracles::uniform(rng, -3, 3));
    const double base = signedDistanceExact(fa, pa, fb, pb);

    const double ang = oracles::uniform(rng, -3, 3);
    const Eigen::Matrix2d R = rotation2(ang);
    const Eigen::Vector2d t(oracles::uniform(rng, -5, 5), oracles::uniform(rng, -5, 5));
    const Pose2 qa{R * pa.position + t, R * pa.rotation};
    const Pose2 qb{R * pb.position + t, R * pb.rotation};
    REQUIRE(signedDistanceExact(fa, qa, fb, qb) == Catch::Approx(base).margin(1e-9));
  }
}

TEST_CASE("exact sign agrees with the separating-axis oracle") {
  std::mt19937_64 rng(17);
  int overlaps = 0;
  for (int k = 0; k < 500; ++k) {
    const ConvexFootprint fa = randomConvex(rng);
    const ConvexFootprint fb = randomConvex(rng);
    const Pose2 pa = Pose2::at({oracles::uniform(rng, -1.5, 1.5), oracles::uniform(rng, -1.5, 1.5)},
                               oracles::uniform(rng, -3, 3));
    const Pose2 pb = Pose2::at({oracles::uniform(rng, -1.5, 1.5), oracles::uniform(rng, -1.5, 1.5)},
                               oracles::uniform(rng, -3, 3));
    const double d = signedDistanceExact(fa, pa, fb, pb);
    const bool overlap = oracles::satOverlap(worldVertices(fa, pa), worldVertices(fb, pb));
    overlaps += overlap;
    if (overlap) {
      REQUIRE(d <= 0.0);
    } else {
      REQUIRE(d >= 0.0);
    }
    // Cross-check against the brute-force formula oracle.
    REQUIRE(d == Catch::Approx(oracles::bruteForceSignedDistance(
                     worldVertices(fa, pa), worldVertices(fb, pb))).margin(1e-9));
  }
  REQUIRE(overlaps > 50);  // the draw must exercise both regimes
}

TEST_CASE("smoothed distance of separated squares stays near two") {
  const double alpha = 30.0;
  const SmoothedDistance d = signedDistanceSmoothed(
      centeredSquare(), Pose2::at({0, 0}, 0.0), centeredSquare(), Pose2::at({3, 0}, 0.0), alpha);
  REQUIRE(std::abs(d.value - 2.0) <= lseErrorBound(4, 4, alpha));
  REQUIRE(std::abs(d.value - 2.0) <= std::log(4.0) / alpha);  // symmetric case is much tighter
}

TEST_CASE("overlapping identical squares report penetration") {
  const SmoothedDistance d = signedDistanceSmoothed(
      centeredSquare(), Pose2::at({0, 0}, 0.0), centeredSquare(), Pose2::at({0.2, 0.1}, 0.0), 30.0);
  REQUIRE(d.value < 0.0);
  const double exact = signedDistanceExact(centeredSquare(), Pose2::at({0, 0}, 0.0),
                                           centeredSquare(), Pose2::at({0.2, 0.1}, 0.0));
  REQUIRE(exact < 0.0);
  REQUIRE(oracles::satOverlap(worldVertices(centeredSquare(), Pose2::at({0, 0}, 0.0)),
                              worldVertices(centeredSquare(), Pose2::at({0.2, 0.1}, 0.0))));
}

TEST_CASE("smoothed distance is symmetric under swapping the bodies") {
  std::mt19937_64 rng(23);
  for (int k = 0; k < 50; ++k) {
    const ConvexFootprint fa = randomConvex(rng);
    const ConvexFootprint fb = randomConvex(rng);
    const Pose2 pa = Pose2::at({oracles::uniform(rng, -2, 2), oracles::uniform(rng, -2, 2)},
                               oracles::uniform(rng, -3, 3));
    const Pose2 pb = Pose2::at({oracles::uniform(rng, -2, 2), oracles::uniform(rng, -2, 2)},
                               oracles::uniform(rng, -3, 3));
    const SmoothedDistance ab = signedDistanceSmoothed(fa, pa, fb, pb, 30.0);
    const SmoothedDistance ba = signedDistanceSmoothed(fb, pb, fa, pa, 30.0);
    REQUIRE(ab.value == Catch::Approx(ba.value).margin(1e-10));
    REQUIRE((ab.gradPosition + ba.gradPosition).norm() < 1e-9);  // opposite translations
  }
}

TEST_CASE("smoothing error stays within the lse bound") {
  std::mt19937_64 rng(29);
  for (int k = 0; k < 300; ++k) {
    const ConvexFootprint fa = randomConvex(rng);
    const ConvexFootprint fb = randomConvex(rng);
    const Pose2 pa = Pose2::at({oracles::uniform(rng, -2, 2), oracles::uniform(rng, -2, 2)},
                               oracles::uniform(rng, -3, 3));
    const Pose2 pb = Pose2::at({oracles::uniform(rng, -2, 2), oracles::uniform(rng, -2, 2)},
                               oracles::uniform(rng, -3, 3));
    const double alpha = oracles::uniform(rng, 5.0, 50.0);
    const double smooth = signedDistanceSmoothed(fa, pa, fb, pb, alpha).value;
    const double exact = signedDistanceExact(fa, pa, fb, pb);
    REQUIRE(std::abs(smooth - exact) <= lseErrorBound(fa.count(), fb.count(), alpha) + 1e-12);
  }
}

TEST_CASE("smoothed gradients match finite differences") {
  std::mt19937_64 rng(31);
  const double alpha = 30.0;
  int checked = 0;
  while (checked < 100) {
    const ConvexFootprint fa = randomConvex(rng);
    const ConvexFootprint fb = randomConvex(rng);
    const Eigen::Vector2d base(oracles::uniform(rng, -3, 3), oracles::uniform(rng, -3, 3));
    const double ha = oracles::uniform(rng, -3, 3);
    const double hb = oracles::uniform(rng, -3, 3);
    const Pose2 pb = Pose2::at({oracles::uniform(rng, -1, 1), oracles::uniform(rng, -1, 1)}, hb);
    // Keep clear of contact so the draw is non-degenerate.
    if (std::abs(signedDistanceExact(fa, Pose2::at(base, ha), fb, pb)) < 0.05) continue;
    ++checked;

    const SmoothedDistance d = signedDistanceSmoothed(fa, Pose2::at(base, ha), fb, pb, alpha);

    Eigen::VectorXd x(4);
    x << base.x(), base.y(), ha, hb;
    const Eigen::VectorXd fd = oracles::centralDifference(
        [&](const Eigen::VectorXd& q) {
          return signedDistanceSmoothed(fa, Pose2::at({q(0), q(1)}, q(2)), fb,
                                        Pose2{pb.position, rotation2(q(3))}, alpha)
              .value;
        },
        x, 1e-6);
    Eigen::VectorXd an(4);
    an << d.gradPosition.x(), d.gradPosition.y(), d.gradHeading, d.gradObsHeading;
    REQUIRE(oracles::relativeError(an, fd) < 1e-4);
  }
}

TEST_CASE("strict interior test treats the boundary as outside") {
  const ConvexFootprint sq = unitSquare();
  const Pose2 origin{};
  REQUIRE(strictlyInside(sq, origin, {0.5, 0.5}));
  REQUIRE_FALSE(strictlyInside(sq, origin, {0.0, 0.5}));   // on an edge
  REQUIRE_FALSE(strictlyInside(sq, origin, {0.0, 0.0}));   // on a vertex
  REQUIRE_FALSE(strictlyInside(sq, origin, {1.5, 0.5}));
}

TEST_CASE("dilation offsets every edge outward by the margin") {
  const ConvexFootprint sq = centeredSquare();
  const ConvexFootprint grown = sq.dilated(0.25);
  REQUIRE(grown.inscribedRadius() == Catch::Approx(0.75).epsilon(1e-12));
  // A face-parallel witness moves out by exactly the margin.
  const double d0 = signedDistanceExact(sq, Pose2{}, sq, Pose2::at({3, 0}, 0.0));
  const double d1 = signedDistanceExact(grown, Pose2{}, sq, Pose2::at({3, 0}, 0.0));
  REQUIRE(d0 - d1 == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("footprint radii describe the body extent") {
  const ConvexFootprint car = ConvexFootprint::rectangle(-0.2, 0.8, 0.3);
  REQUIRE(car.circumradius() == Catch::Approx(std::hypot(0.8, 0.3)));
  REQUIRE(car.inscribedRadius() == Catch::Approx(0.2));  // rear edge is closest to the axle
}
