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

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "carswarm/trajectory.hpp"

namespace carswarm {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Convex robot body in its local frame (origin at the rear axle center).
// Vertices are ordered clockwise, so rotating an edge direction by +90
// degrees yields the outward normal of that edge.
class ConvexFootprint {
 public:
  explicit ConvexFootprint(std::vector<Eigen::Vector2d> vertices) : vertices_(std::move(vertices)) {
    validate();
    precompute();
  }

  // Bypasses validation; only for probing degenerate inputs in tests.
  static ConvexFootprint unchecked(std::vector<Eigen::Vector2d> vertices) {
    ConvexFootprint f;
    f.vertices_ = std::move(vertices);
    f.precompute();
    return f;
  }

  // Axis-aligned rectangle spanning [xMin, xMax] x [-halfWidth, halfWidth].
  static ConvexFootprint rectangle(double xMin, double xMax, double halfWidth) {
    return ConvexFootprint({{xMin, -halfWidth},
                            {xMin, halfWidth},
                            {xMax, halfWidth},
                            {xMax, -halfWidth}});
  }

  // Regular n-gon of given circumradius centered on the origin.
  static ConvexFootprint regular(int n, double radius, double phase = 0.0) {
    std::vector<Eigen::Vector2d> v;
    v.reserve(n);
    for (int i = 0; i < n; ++i) {
      const double a = phase - 2.0 * M_PI * i / n;  // clockwise
      v.emplace_back(radius * std::cos(a), radius * std::sin(a));
    }
    return ConvexFootprint(std::move(v));
  }

  int count() const { return static_cast<int>(vertices_.size()); }
  const Eigen::Vector2d& vertex(int i) const { return vertices_[i]; }
  const std::vector<Eigen::Vector2d>& vertices() const { return vertices_; }
  // Unit outward normal of the edge vertex(e) -> vertex(e+1), local frame.
  const Eigen::Vector2d& edgeNormal(int e) const { return normals_[e]; }
  double edgeLength(int e) const { return edgeLengths_[e]; }

  double circumradius() const { return circumradius_; }

  // Radius of the largest disc centered on the local origin that stays
  // inside the body; zero when the origin lies outside.
  double inscribedRadius() const { return inscribed_; }

  // Body grown by offsetting every edge outward; conservative cover of the
  // Minkowski sum with a disc of the given radius.
  ConvexFootprint dilated(double margin) const {
    const int n = count();
    std::vector<Eigen::Vector2d> out(n);
    for (int i = 0; i < n; ++i) {
      const int prev = (i + n - 1) % n;
      const Eigen::Vector2d& na = normals_[prev];
      const Eigen::Vector2d& nb = normals_[i];
      const double ca = na.dot(vertices_[i]) + margin;
      const double cb = nb.dot(vertices_[i]) + margin;
      Eigen::Matrix2d A;
      A << na.x(), na.y(), nb.x(), nb.y();
      const double det = A.determinant();
      if (std::abs(det) < 1e-9) {
        out[i] = vertices_[i] + margin * na;  // near-collinear corner
      } else {
        out[i] = A.inverse() * Eigen::Vector2d(ca, cb);
      }
    }
    return ConvexFootprint(std::move(out));
  }

 private:
  ConvexFootprint() = default;

  void validate() const {
    const int n = static_cast<int>(vertices_.size());
    if (n < 3) throw GeometryError("footprint needs at least 3 vertices");
    double area2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d& a = vertices_[i];
      const Eigen::Vector2d& b = vertices_[(i + 1) % n];
      const Eigen::Vector2d& c = vertices_[(i + 2) % n];
      const Eigen::Vector2d d1 = b - a;
      const Eigen::Vector2d d2 = c - b;
      if (d1.norm() < 1e-9) throw GeometryError("footprint has repeated vertices");
      const double cross = d1.x() * d2.y() - d1.y() * d2.x();
      if (cross > 1e-9) throw GeometryError("footprint vertices must be convex and clockwise");
      area2 += a.x() * b.y() - b.x() * a.y();
    }
    if (area2 > -1e-12) throw GeometryError("footprint must have positive area in clockwise order");
  }

  void precompute() {
    const int n = static_cast<int>(vertices_.size());
    normals_.resize(n);
    edgeLengths_.resize(n);
    circumradius_ = 0.0;
    inscribed_ = std::numeric_limits<double>::infinity();
    const Eigen::Matrix2d h = skew90();
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d d = vertices_[(i + 1) % n] - vertices_[i];
      edgeLengths_[i] = d.norm();
      normals_[i] = edgeLengths_[i] > 0.0 ? Eigen::Vector2d(h * d / edgeLengths_[i])
                                          : Eigen::Vector2d::Zero();
      circumradius_ = std::max(circumradius_, vertices_[i].norm());
      inscribed_ = std::min(inscribed_, normals_[i].dot(vertices_[i]));
    }
    inscribed_ = std::max(inscribed_, 0.0);
  }

  std::vector<Eigen::Vector2d> vertices_;
  std::vector<Eigen::Vector2d> normals_;
  std::vector<double> edgeLengths_;
  double circumradius_ = 0.0;
  double inscribed_ = 0.0;
};

struct Pose2 {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Matrix2d rotation = Eigen::Matrix2d::Identity();

  static Pose2 at(const Eigen::Vector2d& p, double heading) {
    return Pose2{p, rotation2(heading)};
  }
};

struct PlacedPolygon {
  ConvexFootprint footprint;
  Pose2 pose;

  Eigen::Vector2d worldVertex(int i) const {
    return pose.position + pose.rotation * footprint.vertex(i);
  }
};

// Signed distance from a world-frame point to the line carrying edge e of the
// placed body, positive outside that edge's half-plane.
inline double vertexEdgeDistance(const PlacedPolygon& ego, int e, const Eigen::Vector2d& obsVertex) {
  const int n = ego.footprint.count();
  if (e < 0 || e >= n) throw GeometryError("edge index out of range");
  if (ego.footprint.edgeLength(e) < 1e-12) throw GeometryError("degenerate footprint edge");
  const Eigen::Vector2d ve = ego.worldVertex(e);
  const Eigen::Vector2d vn = ego.worldVertex((e + 1) % n);
  const Eigen::Vector2d normal = skew90() * (vn - ve) / (vn - ve).norm();
  return normal.dot(obsVertex - ve);
}

namespace detail {

// max_e min_o of the edge/vertex distances: the separation margin of the
// edge body's best separating edge against the vertex body.
inline double directionalExact(const ConvexFootprint& edgeBody, const Pose2& edgePose,
                               const ConvexFootprint& vertexBody, const Pose2& vertexPose) {
  const int ne = edgeBody.count();
  const int no = vertexBody.count();
  std::vector<Eigen::Vector2d> w(no);
  for (int o = 0; o < no; ++o) w[o] = vertexPose.position + vertexPose.rotation * vertexBody.vertex(o);
  double best = -std::numeric_limits<double>::infinity();
  for (int e = 0; e < ne; ++e) {
    const Eigen::Vector2d n = edgePose.rotation * edgeBody.edgeNormal(e);
    const Eigen::Vector2d ve = edgePose.position + edgePose.rotation * edgeBody.vertex(e);
    double inner = std::numeric_limits<double>::infinity();
    for (int o = 0; o < no; ++o) inner = std::min(inner, n.dot(w[o] - ve));
    best = std::max(best, inner);
  }
  return best;
}

struct LseResult {
  double value = 0.0;
  std::vector<double> weights;  // softmax weights, sum to 1
};

inline LseResult logSumExp(const std::vector<double>& x, double alpha) {
  LseResult r;
  r.weights.resize(x.size());
  double m = -std::numeric_limits<double>::infinity();
  for (double xi : x) m = std::max(m, alpha * xi);
  double sum = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    r.weights[i] = std::exp(alpha * x[i] - m);
    sum += r.weights[i];
  }
  for (double& w : r.weights) w /= sum;
  r.value = (m + std::log(sum)) / alpha;
  return r;
}

struct DirectionalSmooth {
  double value = 0.0;
  Eigen::Vector2d gradEdgePos = Eigen::Vector2d::Zero();  // w.r.t. edge-body translation
  double gradEdgeHeading = 0.0;
  double gradVertexHeading = 0.0;
  // w.r.t. vertex-body translation = -gradEdgePos (rigid translation invariance)
};

// lse_{+a} over edges of lse_{-a} over vertices of the signed edge/vertex
// distances, with gradients through both poses.
inline DirectionalSmooth directionalSmoothed(const ConvexFootprint& edgeBody, const Pose2& edgePose,
                                             const ConvexFootprint& vertexBody, const Pose2& vertexPose,
                                             double alpha) {
  const int ne = edgeBody.count();
  const int no = vertexBody.count();
  const Eigen::Matrix2d h = skew90();

  std::vector<Eigen::Vector2d> w(no), hw(no);
  for (int o = 0; o < no; ++o) {
    w[o] = vertexPose.position + vertexPose.rotation * vertexBody.vertex(o);
    hw[o] = vertexPose.rotation * (h * vertexBody.vertex(o));  // d w / d headingVertex
  }

  std::vector<double> edgeVals(ne);
  std::vector<Eigen::Vector2d> edgeGradPos(ne);
  std::vector<double> edgeGradHeadE(ne), edgeGradHeadV(ne);

  std::vector<double> inner(no);
  for (int e = 0; e < ne; ++e) {
    const Eigen::Vector2d n = edgePose.rotation * edgeBody.edgeNormal(e);
    const Eigen::Vector2d hn = h * n;
    const Eigen::Vector2d ve = edgePose.position + edgePose.rotation * edgeBody.vertex(e);
    const Eigen::Vector2d hve = edgePose.rotation * (h * edgeBody.vertex(e));  // d ve / d headingEdge
    for (int o = 0; o < no; ++o) inner[o] = n.dot(w[o] - ve);
    const LseResult lmin = logSumExp(inner, -alpha);
    edgeVals[e] = lmin.value;
    Eigen::Vector2d gPos = Eigen::Vector2d::Zero();
    double gHe = 0.0, gHv = 0.0;
    for (int o = 0; o < no; ++o) {
      const double wt = lmin.weights[o];
      gPos += wt * (-n);
      gHe += wt * (hn.dot(w[o] - ve) - n.dot(hve));
      gHv += wt * n.dot(hw[o]);
    }
    edgeGradPos[e] = gPos;
    edgeGradHeadE[e] = gHe;
    edgeGradHeadV[e] = gHv;
  }

  const LseResult lmax = logSumExp(edgeVals, alpha);
  DirectionalSmooth out;
  out.value = lmax.value;
  for (int e = 0; e < ne; ++e) {
    out.gradEdgePos += lmax.weights[e] * edgeGradPos[e];
    out.gradEdgeHeading += lmax.weights[e] * edgeGradHeadE[e];
    out.gradVertexHeading += lmax.weights[e] * edgeGradHeadV[e];
  }
  return out;
}

}  // namespace detail

// Exact signed distance between two convex bodies: positive separation,
// negative penetration, composed from both bodies' edge margins. The sign
// matches a separating-axis test by construction.
inline double signedDistanceExact(const ConvexFootprint& ego, const Pose2& egoPose,
                                  const ConvexFootprint& obs, const Pose2& obsPose) {
  const double dEo = detail::directionalExact(ego, egoPose, obs, obsPose);
  const double dOe = detail::directionalExact(obs, obsPose, ego, egoPose);
  return std::max(dEo, dOe);
}

inline double signedDistanceExact(const PlacedPolygon& ego, const PlacedPolygon& obs) {
  return signedDistanceExact(ego.footprint, ego.pose, obs.footprint, obs.pose);
}

struct SmoothedDistance {
  double value = 0.0;
  Eigen::Vector2d gradPosition = Eigen::Vector2d::Zero();  // d value / d ego position
  double gradHeading = 0.0;                                // d value / d ego heading
  double gradObsHeading = 0.0;                             // d value / d obstacle heading
  // d value / d obstacle position = -gradPosition.
};

// Log-sum-exp smoothed signed distance with analytic gradients through both
// poses. The caller owns the heading relation (theta as a function of the
// velocity direction) when chaining into trajectory derivatives.
inline SmoothedDistance signedDistanceSmoothed(const ConvexFootprint& ego, const Pose2& egoPose,
                                               const ConvexFootprint& obs, const Pose2& obsPose,
                                               double alpha) {
  if (!(alpha > 0.0)) throw GeometryError("smoothing weight alpha must be positive");
  const detail::DirectionalSmooth a = detail::directionalSmoothed(ego, egoPose, obs, obsPose, alpha);
  const detail::DirectionalSmooth b = detail::directionalSmoothed(obs, obsPose, ego, egoPose, alpha);
  const detail::LseResult top = detail::logSumExp({a.value, b.value}, alpha);
  SmoothedDistance r;
  r.value = top.value;
  r.gradPosition = top.weights[0] * a.gradEdgePos + top.weights[1] * (-b.gradEdgePos);
  r.gradHeading = top.weights[0] * a.gradEdgeHeading + top.weights[1] * b.gradVertexHeading;
  r.gradObsHeading = top.weights[0] * a.gradVertexHeading + top.weights[1] * b.gradEdgeHeading;
  return r;
}

inline SmoothedDistance signedDistanceSmoothed(const PlacedPolygon& ego, const PlacedPolygon& obs,
                                               double alpha) {
  return signedDistanceSmoothed(ego.footprint, ego.pose, obs.footprint, obs.pose, alpha);
}

// Guaranteed bound on the smoothing error of signedDistanceSmoothed.
inline double lseErrorBound(int ne, int no, double alpha) {
  return (std::log(static_cast<double>(ne)) + std::log(static_cast<double>(no)) + std::log(2.0)) / alpha;
}

// Strict interior test; points on the boundary are reported outside.
inline bool strictlyInside(const ConvexFootprint& body, const Pose2& pose, const Eigen::Vector2d& point) {
  const Eigen::Vector2d local = pose.rotation.transpose() * (point - pose.position);
  const int n = body.count();
  for (int e = 0; e < n; ++e) {
    if (body.edgeNormal(e).dot(local - body.vertex(e)) >= 0.0) return false;
  }
  return true;
}

}  // namespace carswarm
