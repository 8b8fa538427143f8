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
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "carswarm/geometry.hpp"
#include "carswarm/lbfgs.hpp"
#include "carswarm/path_planner.hpp"
#include "carswarm/speed_planner.hpp"
#include "carswarm/trajectory.hpp"

namespace carswarm {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DiscretizationStrategy { kFixedTime, kFixedCount };

struct PenaltyConfig {
  double weightCurvature = 1e4;
  double weightDynamics = 1e4;
  double weightStatic = 1e4;
  double weightInterAgent = 1e4;
  double weightTime = 30.0;     // w_T
  double constraintStep = 0.2;  // dt between constraint points
  double dTol = 0.3;            // inter-agent safety margin [m]
  double dTolStatic = 0.3;      // static obstacle margin [m]
  double curvatureMax = 1.0;    // C_m [1/m]
  double vMax = 8.0;
  double aMax = 3.0;
  double alpha = 30.0;          // lse smoothing weight
  double hingeBlend = 1e-2;     // cubic blend width of the smoothed hinge
  // Literal one-based stamp bookkeeping (local time measured from the piece
  // end); kept only for comparison runs.
  bool printedStampIndexing = false;
};

// Smoothed hinge: zero for x <= 0, cubic blend on (0, x0], unit slope beyond.
inline double smoothedL1(double x, double x0, double& slope) {
  if (x <= 0.0) {
    slope = 0.0;
    return 0.0;
  }
  if (x >= x0) {
    slope = 1.0;
    return x - 0.5 * x0;
  }
  const double x02 = x0 * x0;
  slope = (3.0 * x * x * x0 - 2.0 * x * x * x) / (x02 * x0);
  return x * x * x * (x0 - 0.5 * x) / (x02 * x0);
}

// Positive-time surrogate: a smooth increasing bijection from the real line
// onto (0, inf), quadratic above one and reciprocal below.
inline double forwardT(double tau) {
  return tau > 0.0 ? (0.5 * tau + 1.0) * tau + 1.0 : 1.0 / ((0.5 * tau - 1.0) * tau + 1.0);
}

inline double forwardTDerivative(double tau) {
  if (tau > 0.0) return tau + 1.0;
  const double q = (0.5 * tau - 1.0) * tau + 1.0;
  return (1.0 - tau) / (q * q);
}

inline double backwardT(double T) {
  return T > 1.0 ? std::sqrt(2.0 * T - 1.0) - 1.0 : 1.0 - std::sqrt(2.0 / T - 1.0);
}

// ---------------------------------------------------------------------------
// Violation terms.
// ---------------------------------------------------------------------------

struct CurvatureViolation {
  double value = 0.0;
  Eigen::Vector2d gradVel = Eigen::Vector2d::Zero();
  Eigen::Vector2d gradAcc = Eigen::Vector2d::Zero();
};

// sign = +1 penalizes C - Cm, sign = -1 penalizes -C - Cm; both together
// bound the signed curvature.
inline CurvatureViolation curvatureViolation(const Eigen::Vector2d& pDot,
                                             const Eigen::Vector2d& pDDot, double curvatureMax,
                                             double sign = 1.0) {
  const double vn = pDot.norm();
  if (vn <= kSingularSpeed)
    throw SingularVelocityError("curvature violation undefined at near-zero velocity");
  const Eigen::Matrix2d h = skew90();
  const double cross = (pDDot.transpose() * h * pDot).value();
  const double vn3 = vn * vn * vn;
  CurvatureViolation out;
  out.value = sign * cross / vn3 - curvatureMax;
  out.gradVel = sign * (h.transpose() * pDDot / vn3 - 3.0 * cross / (vn3 * vn * vn) * pDot);
  out.gradAcc = sign * (h * pDot) / vn3;
  return out;
}

struct ScalarViolation {
  double value = 0.0;
  Eigen::Vector2d grad = Eigen::Vector2d::Zero();
};

inline ScalarViolation speedViolation(const Eigen::Vector2d& pDot, double vMax) {
  return {pDot.squaredNorm() - vMax * vMax, 2.0 * pDot};
}

inline ScalarViolation accelViolation(const Eigen::Vector2d& pDDot, double aMax) {
  return {pDDot.squaredNorm() - aMax * aMax, 2.0 * pDDot};
}

struct BodyClearanceViolation {
  double value = 0.0;                                  // margin - smoothed distance
  Eigen::Vector2d gradP = Eigen::Vector2d::Zero();     // w.r.t. ego position
  Eigen::Vector2d gradPDot = Eigen::Vector2d::Zero();  // w.r.t. ego velocity (heading relation)
  double gradTbar = 0.0;                               // w.r.t. local time, other pose fixed
  double distance = 0.0;                               // the smoothed distance itself
  SmoothedDistance raw;                                // underlying pose gradients
};

// Clearance violation of the ego body placed by flatness against a fixed
// placed body (a static obstacle, or another agent's cached pose).
inline BodyClearanceViolation bodyClearanceViolation(const ConvexFootprint& egoBody,
                                                     const Eigen::Vector2d& p,
                                                     const Eigen::Vector2d& pDot,
                                                     const Eigen::Vector2d& pDDot,
                                                     const ConvexFootprint& otherBody,
                                                     const Pose2& otherPose, double margin,
                                                     double alpha) {
  const double vn2 = pDot.squaredNorm();
  if (vn2 <= kSingularSpeed * kSingularSpeed)
    throw SingularVelocityError("body placement undefined at near-zero velocity");
  const double heading = std::atan2(pDot.y(), pDot.x());
  const SmoothedDistance d =
      signedDistanceSmoothed(egoBody, Pose2::at(p, heading), otherBody, otherPose, alpha);

  BodyClearanceViolation out;
  out.raw = d;
  out.distance = d.value;
  out.value = margin - d.value;
  out.gradP = -d.gradPosition;
  const Eigen::Vector2d dThetaDv = skew90() * pDot / vn2;
  out.gradPDot = -d.gradHeading * dThetaDv;
  const double thetaDot = (pDDot.transpose() * skew90() * pDot).value() / vn2;
  out.gradTbar = out.gradP.dot(pDot) + (-d.gradHeading) * thetaDot;
  return out;
}

// ---------------------------------------------------------------------------
// Quintic Hermite piece machinery.
// ---------------------------------------------------------------------------

struct EndpointState {
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  Eigen::Vector2d a = Eigen::Vector2d::Zero();
};

inline CoefficientBlock hermiteCoefficients(const EndpointState& s0, const EndpointState& s1,
                                            double h) {
  CoefficientBlock c;
  const double h2 = h * h, h3 = h2 * h, h4 = h3 * h, h5 = h4 * h;
  for (int ax = 0; ax < 2; ++ax) {
    const double p0 = s0.p(ax), v0 = s0.v(ax), a0 = s0.a(ax);
    const double dp = s1.p(ax) - p0 - v0 * h - 0.5 * a0 * h2;
    const double dv = s1.v(ax) - v0 - a0 * h;
    const double da = s1.a(ax) - a0;
    c(0, ax) = p0;
    c(1, ax) = v0;
    c(2, ax) = 0.5 * a0;
    c(3, ax) = 10.0 * dp / h3 - 4.0 * dv / h2 + 0.5 * da / h;
    c(4, ax) = -15.0 * dp / h4 + 7.0 * dv / h3 - da / h2;
    c(5, ax) = 6.0 * dp / h5 - 3.0 * dv / h4 + 0.5 * da / h3;
  }
  return c;
}

struct EndpointGrad {
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  Eigen::Vector2d v = Eigen::Vector2d::Zero();
  Eigen::Vector2d a = Eigen::Vector2d::Zero();
};

// Pushes d(cost)/d(coefficients) back onto the endpoint states and the piece
// duration.
inline void accumulateHermiteAdjoint(const CoefficientBlock& dC, const EndpointState& s0,
                                     const EndpointState& s1, double h, EndpointGrad& g0,
                                     EndpointGrad& g1, double& gh) {
  const double h2 = h * h, h3 = h2 * h, h4 = h3 * h, h5 = h4 * h, h6 = h5 * h;
  for (int ax = 0; ax < 2; ++ax) {
    const double p0 = s0.p(ax), v0 = s0.v(ax), a0 = s0.a(ax);
    const double dp = s1.p(ax) - p0 - v0 * h - 0.5 * a0 * h2;
    const double dv = s1.v(ax) - v0 - a0 * h;
    const double da = s1.a(ax) - a0;

    const double gc0 = dC(0, ax), gc1 = dC(1, ax), gc2 = dC(2, ax);
    const double g3 = dC(3, ax), g4 = dC(4, ax), g5 = dC(5, ax);

    g0.p(ax) += gc0;
    g0.v(ax) += gc1;
    g0.a(ax) += 0.5 * gc2;

    const double gdp = 10.0 * g3 / h3 - 15.0 * g4 / h4 + 6.0 * g5 / h5;
    const double gdv = -4.0 * g3 / h2 + 7.0 * g4 / h3 - 3.0 * g5 / h4;
    const double gda = 0.5 * g3 / h - g4 / h2 + 0.5 * g5 / h3;

    g1.p(ax) += gdp;
    g0.p(ax) -= gdp;
    g0.v(ax) -= gdp * h;
    g0.a(ax) -= 0.5 * gdp * h2;

    g1.v(ax) += gdv;
    g0.v(ax) -= gdv;
    g0.a(ax) -= gdv * h;

    g1.a(ax) += gda;
    g0.a(ax) -= gda;

    gh += g3 * (-30.0 * dp / h4 + 8.0 * dv / h3 - 0.5 * da / h2) +
          g4 * (60.0 * dp / h5 - 21.0 * dv / h4 + 2.0 * da / h3) +
          g5 * (-30.0 * dp / h6 + 12.0 * dv / h5 - 1.5 * da / h4) +
          gdp * (-v0 - a0 * h) + gdv * (-a0);
  }
}

// Control-effort integral of the jerk over one piece, with gradients.
inline double pieceEffort(const CoefficientBlock& c, double h, CoefficientBlock& dC, double& gh) {
  const double h2 = h * h, h3 = h2 * h, h4 = h3 * h, h5 = h4 * h;
  double total = 0.0;
  for (int ax = 0; ax < 2; ++ax) {
    const double c3 = c(3, ax), c4 = c(4, ax), c5 = c(5, ax);
    total += 36.0 * c3 * c3 * h + 144.0 * c3 * c4 * h2 + 192.0 * c4 * c4 * h3 +
             240.0 * c3 * c5 * h3 + 720.0 * c4 * c5 * h4 + 720.0 * c5 * c5 * h5;
    dC(3, ax) += 72.0 * c3 * h + 144.0 * c4 * h2 + 240.0 * c5 * h3;
    dC(4, ax) += 144.0 * c3 * h2 + 384.0 * c4 * h3 + 720.0 * c5 * h4;
    dC(5, ax) += 240.0 * c3 * h3 + 720.0 * c4 * h4 + 1440.0 * c5 * h5;
    const double jerkEnd = 6.0 * c3 + 24.0 * c4 * h + 60.0 * c5 * h2;
    gh += jerkEnd * jerkEnd;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Problem and solver.
// ---------------------------------------------------------------------------

struct NeighborTrajectory {
  FlatTrajectory trajectory;
  ConvexFootprint body;
};

struct OptimizeProblem {
  EndpointState start;
  EndpointState end;
  int pieceCount = 2;      // M
  double startStamp = 0.0; // absolute stamp of the trajectory start
  ConvexFootprint egoBody = ConvexFootprint::rectangle(-0.2, 0.8, 0.3);
  std::vector<PlacedPolygon> obstacles;
  std::vector<NeighborTrajectory> neighbors;
  DiscretizationStrategy strategy = DiscretizationStrategy::kFixedTime;
  int fixedCountPerPiece = 0;  // 0: matched to the fixed-time density at init
};

struct PenaltyBreakdown {
  double effort = 0.0;
  double time = 0.0;
  double curvature = 0.0;
  double dynamics = 0.0;
  double staticObstacle = 0.0;
  double interAgent = 0.0;
};

struct OptimizeReport {
  int iterations = 0;
  int evaluations = 0;
  double cost = 0.0;
  double gradNorm = 0.0;
  double totalTime = 0.0;
  double wallMs = 0.0;
  bool converged = false;
  std::string message;
  PenaltyBreakdown penalties;
  DiscretizationStrategy strategy = DiscretizationStrategy::kFixedTime;
};

// Unconstrained spatial-temporal refinement of a searched path and speed
// profile. Decision variables are the interior junction states (position,
// velocity, acceleration per axis) plus one unconstrained time surrogate;
// boundary states are pinned, so continuity up to acceleration is structural.
class TrajOptimizer {
 public:
  explicit TrajOptimizer(PenaltyConfig config = {}) : cfg_(config) {}

  const PenaltyConfig& config() const { return cfg_; }
  PenaltyConfig& config() { return cfg_; }

  int variableCount(const OptimizeProblem& pb) const { return 6 * (pb.pieceCount - 1) + 1; }

  // Per-stamp neighbor pose cache; valid because fixed-time constraint stamps
  // are absolute and do not move with the iterate.
  struct Prepared {
    const OptimizeProblem* pb = nullptr;
    std::vector<std::vector<Pose2>> neighborPoseCache;
    int cachedPoints = 0;
  };

  Prepared prepare(const OptimizeProblem& pb) const {
    Prepared prep;
    prep.pb = &pb;
    prep.neighborPoseCache.resize(pb.neighbors.size());
    return prep;
  }

  // Cost and gradient at packed variables [junctions..., tau]. Returns +inf
  // on numerical blow-up so the line search backs off.
  double objective(Prepared& prep, const Eigen::VectorXd& x, Eigen::VectorXd& grad,
                   PenaltyBreakdown* breakdown = nullptr) const {
    const OptimizeProblem& pb = *prep.pb;
    const int M = pb.pieceCount;
    const double tau = x(6 * (M - 1));
    const double T = forwardT(tau);
    const double h = T / M;
    grad.setZero(x.size());
    PenaltyBreakdown localBd;
    PenaltyBreakdown& bd = breakdown ? *breakdown : localBd;
    bd = {};

    if (!(h > 1e-6) || !std::isfinite(h)) return std::numeric_limits<double>::infinity();

    std::vector<EndpointState> states(M + 1);
    states[0] = pb.start;
    states[M] = pb.end;
    for (int i = 1; i < M; ++i) {
      const int base = 6 * (i - 1);
      states[i].p = x.segment<2>(base);
      states[i].v = x.segment<2>(base + 2);
      states[i].a = x.segment<2>(base + 4);
    }

    std::vector<CoefficientBlock> coeffs(M);
    std::vector<CoefficientBlock> dCoeffs(M, CoefficientBlock::Zero());
    for (int i = 0; i < M; ++i) coeffs[i] = hermiteCoefficients(states[i], states[i + 1], h);

    double ghTotal = 0.0;
    for (int i = 0; i < M; ++i) bd.effort += pieceEffort(coeffs[i], h, dCoeffs[i], ghTotal);

    bd.time = cfg_.weightTime * T;
    double dCostDT = cfg_.weightTime;

    if (pb.strategy == DiscretizationStrategy::kFixedTime) {
      evaluateFixedTime(prep, coeffs, h, M, bd, dCoeffs, dCostDT);
    } else {
      evaluateFixedCount(prep, coeffs, h, M, bd, dCoeffs, dCostDT);
    }

    const double cost =
        bd.effort + bd.time + bd.curvature + bd.dynamics + bd.staticObstacle + bd.interAgent;

    std::vector<EndpointGrad> stateGrads(M + 1);
    double gh = ghTotal;
    for (int i = 0; i < M; ++i)
      accumulateHermiteAdjoint(dCoeffs[i], states[i], states[i + 1], h, stateGrads[i],
                               stateGrads[i + 1], gh);
    dCostDT += gh / M;

    for (int i = 1; i < M; ++i) {
      const int base = 6 * (i - 1);
      grad.segment<2>(base) = stateGrads[i].p;
      grad.segment<2>(base + 2) = stateGrads[i].v;
      grad.segment<2>(base + 4) = stateGrads[i].a;
    }
    grad(6 * (M - 1)) = dCostDT * forwardTDerivative(tau);

    if (!std::isfinite(cost)) return std::numeric_limits<double>::infinity();
    return cost;
  }

  // Wrapper that names the offending constraint point on blow-up.
  double objectiveChecked(const OptimizeProblem& pb, const Eigen::VectorXd& x,
                          Eigen::VectorXd& grad, PenaltyBreakdown* breakdown = nullptr) const {
    Prepared prep = prepare(pb);
    const double c = objective(prep, x, grad, breakdown);
    if (!std::isfinite(c))
      throw EvaluationError("objective non-finite near constraint point " +
                            std::to_string(lastPoint_));
    return c;
  }

  struct InitialGuess {
    Eigen::VectorXd junctions;
    double totalTime = 0.0;
  };

  // Junction seeds along the searched path with the searched time law.
  static InitialGuess initialGuess(const KinoPath& path, const SpeedProfile& profile, int M,
                                   double wheelbase) {
    InitialGuess ig;
    ig.totalTime = std::max(profile.totalTime(), 0.2);
    ig.junctions.setZero(std::max(0, 6 * (M - 1)));
    for (int i = 1; i < M; ++i) {
      const double t = ig.totalTime * i / M;
      const double s = profile.sAt(t);
      const double v = profile.vAt(t);
      const double heading = path.headingAt(s);
      const Eigen::Vector2d dir(std::cos(heading), std::sin(heading));
      const double kappa = std::tan(path.steerAt(s)) / wheelbase;
      const double lo = std::max(t - 1e-3, 0.0);
      const double aTan = (profile.vAt(t + 1e-3) - profile.vAt(lo)) / (t + 1e-3 - lo);
      const Eigen::Vector2d acc = aTan * dir + v * v * kappa * (skew90() * dir);
      const int base = 6 * (i - 1);
      ig.junctions.segment<2>(base) = path.positionAt(s);
      ig.junctions.segment<2>(base + 2) = v * dir;
      ig.junctions.segment<2>(base + 4) = acc;
    }
    return ig;
  }

  static int pieceCountForLength(double pathLength) {
    return std::max(2, static_cast<int>(std::ceil(pathLength / 2.5)));
  }

  // Limited-memory quasi-Newton descent; on non-convergence the best iterate
  // is returned with the report flagged.
  FlatTrajectory optimize(OptimizeProblem& pb, const InitialGuess& ig,
                          OptimizeReport* report = nullptr) const {
    const auto t0 = std::chrono::steady_clock::now();
    const int M = pb.pieceCount;
    if (pb.strategy == DiscretizationStrategy::kFixedCount && pb.fixedCountPerPiece <= 0) {
      pb.fixedCountPerPiece =
          std::max(1, static_cast<int>(std::llround(ig.totalTime / cfg_.constraintStep / M)));
    }

    Eigen::VectorXd x(6 * (M - 1) + 1);
    if (M > 1) x.head(6 * (M - 1)) = ig.junctions;
    x(6 * (M - 1)) = backwardT(ig.totalTime);

    Prepared prep = prepare(pb);
    lbfgs::Params lp;
    lp.gradTol = 1e-4;
    lp.maxIterations = 200;
    const lbfgs::Result lr = lbfgs::minimize(
        [&](const Eigen::VectorXd& xv, Eigen::VectorXd& g) { return objective(prep, xv, g); }, x,
        lp);

    const double T = forwardT(x(6 * (M - 1)));
    const double h = T / M;
    std::vector<EndpointState> states(M + 1);
    states[0] = pb.start;
    states[M] = pb.end;
    for (int i = 1; i < M; ++i) {
      const int base = 6 * (i - 1);
      states[i].p = x.segment<2>(base);
      states[i].v = x.segment<2>(base + 2);
      states[i].a = x.segment<2>(base + 4);
    }
    std::vector<CoefficientBlock> coeffs(M);
    for (int i = 0; i < M; ++i) coeffs[i] = hermiteCoefficients(states[i], states[i + 1], h);

    if (report) {
      Eigen::VectorXd g(x.size());
      PenaltyBreakdown bd;
      objective(prep, x, g, &bd);
      report->iterations = lr.iterations;
      report->evaluations = lr.evaluations;
      report->cost = lr.cost;
      report->gradNorm = lr.gradNorm;
      report->totalTime = T;
      report->converged = lr.converged;
      report->message = lr.message;
      report->penalties = bd;
      report->strategy = pb.strategy;
      report->wallMs =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    return FlatTrajectory(std::move(coeffs), h, pb.startStamp, 1);
  }

 private:
  struct PointState {
    Eigen::Vector2d p, v, a, j;
  };

  static PointState pointState(const CoefficientBlock& c, double tbar) {
    PointState s;
    s.p = c.transpose() * monomialBasis(tbar, 0);
    s.v = c.transpose() * monomialBasis(tbar, 1);
    s.a = c.transpose() * monomialBasis(tbar, 2);
    s.j = c.transpose() * monomialBasis(tbar, 3);
    return s;
  }

  // Adds w * (gp, gv, ga) at local time tbar into the coefficient gradient
  // and returns the unweighted local-time sensitivity of the violation.
  static double scatter(CoefficientBlock& dC, double tbar, double w, const PointState& st,
                        const Eigen::Vector2d& gp, const Eigen::Vector2d& gv,
                        const Eigen::Vector2d& ga) {
    dC += w * (monomialBasis(tbar, 0) * gp.transpose() + monomialBasis(tbar, 1) * gv.transpose() +
               monomialBasis(tbar, 2) * ga.transpose());
    return gp.dot(st.v) + gv.dot(st.a) + ga.dot(st.j);
  }

  void ensureNeighborCache(Prepared& prep, int K) const {
    const OptimizeProblem& pb = *prep.pb;
    if (prep.cachedPoints >= K) return;
    for (size_t n = 0; n < pb.neighbors.size(); ++n) {
      auto& cache = prep.neighborPoseCache[n];
      for (int j = prep.cachedPoints + 1; j <= K; ++j) {
        const double stamp = pb.startStamp + j * cfg_.constraintStep;
        const auto [pos, heading] = pb.neighbors[n].trajectory.poseAtAbs(stamp);
        cache.push_back(Pose2::at(pos, heading));
      }
    }
    prep.cachedPoints = K;
  }

  void evaluateFixedTime(Prepared& prep, const std::vector<CoefficientBlock>& coeffs, double h,
                         int M, PenaltyBreakdown& bd, std::vector<CoefficientBlock>& dCoeffs,
                         double& dCostDT) const {
    const OptimizeProblem& pb = *prep.pb;
    const double dt = cfg_.constraintStep;
    const double T = h * M;
    const int K = static_cast<int>(std::floor(T / dt));
    ensureNeighborCache(prep, K);

    for (int j = 1; j <= K; ++j) {
      const double tj = j * dt;
      if (tj >= T - 1e-9) continue;  // pinned terminal state carries no gradient
      int i0 = static_cast<int>(std::floor(tj / h));
      i0 = std::min(i0, M - 1);
      const double tbar = cfg_.printedStampIndexing ? tj - (i0 + 1) * h : tj - i0 * h;
      const double dTbarDT =
          cfg_.printedStampIndexing ? -(i0 + 1.0) / M : -static_cast<double>(i0) / M;
      lastPoint_ = j;

      const PointState st = pointState(coeffs[i0], tbar);
      double gTbar = 0.0;
      applyCommonTerms(pb, st, dCoeffs[i0], tbar, dt, bd, gTbar);
      for (size_t n = 0; n < pb.neighbors.size(); ++n) {
        applyClearanceTerm(pb.egoBody, st, pb.neighbors[n].body, prep.neighborPoseCache[n][j - 1],
                           cfg_.dTol, cfg_.weightInterAgent, dCoeffs[i0], tbar, dt, bd.interAgent,
                           gTbar, nullptr, nullptr, 0.0);
      }
      dCostDT += gTbar * dTbarDT;
    }
  }

  void evaluateFixedCount(Prepared& prep, const std::vector<CoefficientBlock>& coeffs, double h,
                          int M, PenaltyBreakdown& bd, std::vector<CoefficientBlock>& dCoeffs,
                          double& dCostDT) const {
    const OptimizeProblem& pb = *prep.pb;
    const int kappa = std::max(1, pb.fixedCountPerPiece);
    const double w = h / kappa;  // integration weight, itself a function of T
    for (int i = 0; i < M; ++i) {
      for (int q = 1; q <= kappa; ++q) {
        if (i == M - 1 && q == kappa) continue;  // pinned terminal state
        const double frac = static_cast<double>(q) / kappa;
        const double tbar = frac * h;
        const double dTbarDT = frac / M;
        const double dThatDT = (i + frac) / M;
        lastPoint_ = i * kappa + q;

        const PointState st = pointState(coeffs[i], tbar);
        double gTbar = 0.0;
        double pointPenalty = 0.0;
        {
          const PenaltyBreakdown before = bd;
          applyCommonTerms(pb, st, dCoeffs[i], tbar, w, bd, gTbar);
          pointPenalty += (bd.curvature - before.curvature) + (bd.dynamics - before.dynamics) +
                          (bd.staticObstacle - before.staticObstacle);
        }

        const double that = pb.startStamp + (i + frac) * h;
        for (size_t n = 0; n < pb.neighbors.size(); ++n) {
          const FlatTrajectory& traj = pb.neighbors[n].trajectory;
          const auto [pos, heading] = traj.poseAtAbs(that);
          const double before = bd.interAgent;
          double gThat = 0.0;
          applyClearanceTerm(pb.egoBody, st, pb.neighbors[n].body, Pose2::at(pos, heading),
                             cfg_.dTol, cfg_.weightInterAgent, dCoeffs[i], tbar, w, bd.interAgent,
                             gTbar, &traj, &gThat, that);
          pointPenalty += bd.interAgent - before;
          dCostDT += gThat * dThatDT;
        }

        dCostDT += gTbar * dTbarDT;
        dCostDT += (pointPenalty / w) / (M * kappa);  // d(weight)/dT chain
      }
    }
  }

  void applyCommonTerms(const OptimizeProblem& pb, const PointState& st, CoefficientBlock& dC,
                        double tbar, double weight, PenaltyBreakdown& bd, double& gTbar) const {
    double slope;
    {
      const ScalarViolation gv = speedViolation(st.v, cfg_.vMax);
      const double l1 = smoothedL1(gv.value, cfg_.hingeBlend, slope);
      if (l1 > 0.0) {
        bd.dynamics += cfg_.weightDynamics * weight * l1;
        const double w = cfg_.weightDynamics * weight * slope;
        gTbar += w * scatter(dC, tbar, w, st, Eigen::Vector2d::Zero(), gv.grad,
                             Eigen::Vector2d::Zero());
      }
      const ScalarViolation ga = accelViolation(st.a, cfg_.aMax);
      const double l1a = smoothedL1(ga.value, cfg_.hingeBlend, slope);
      if (l1a > 0.0) {
        bd.dynamics += cfg_.weightDynamics * weight * l1a;
        const double w = cfg_.weightDynamics * weight * slope;
        gTbar += w * scatter(dC, tbar, w, st, Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(),
                             ga.grad);
      }
    }

    if (st.v.norm() > kSingularSpeed) {
      for (const double sign : {1.0, -1.0}) {
        const CurvatureViolation cv = curvatureViolation(st.v, st.a, cfg_.curvatureMax, sign);
        const double l1 = smoothedL1(cv.value, cfg_.hingeBlend, slope);
        if (l1 <= 0.0) continue;
        bd.curvature += cfg_.weightCurvature * weight * l1;
        const double w = cfg_.weightCurvature * weight * slope;
        gTbar += w * scatter(dC, tbar, w, st, Eigen::Vector2d::Zero(), cv.gradVel, cv.gradAcc);
      }

      for (const PlacedPolygon& obs : pb.obstacles) {
        applyClearanceTerm(pb.egoBody, st, obs.footprint, obs.pose, cfg_.dTolStatic,
                           cfg_.weightStatic, dC, tbar, weight, bd.staticObstacle, gTbar, nullptr,
                           nullptr, 0.0);
      }
    }
  }

  // One clearance penalty term. When `movingTraj` is given the other pose
  // follows its trajectory at stamp `that` and d(term)/d(that) accumulates
  // into *gThat.
  void applyClearanceTerm(const ConvexFootprint& egoBody, const PointState& st,
                          const ConvexFootprint& otherBody, const Pose2& otherPose, double margin,
                          double weightTerm, CoefficientBlock& dC, double tbar, double weight,
                          double& bucket, double& gTbar, const FlatTrajectory* movingTraj,
                          double* gThat, double that) const {
    if (st.v.norm() <= kSingularSpeed) return;
    const double pad = lseErrorBound(egoBody.count(), otherBody.count(), cfg_.alpha);
    const double cheap =
        (st.p - otherPose.position).norm() - egoBody.circumradius() - otherBody.circumradius();
    if (cheap - pad > margin + cfg_.hingeBlend) return;  // hinge is exactly zero out here

    const BodyClearanceViolation bc =
        bodyClearanceViolation(egoBody, st.p, st.v, st.a, otherBody, otherPose, margin, cfg_.alpha);
    double slope;
    const double l1 = smoothedL1(bc.value, cfg_.hingeBlend, slope);
    if (l1 <= 0.0) return;
    bucket += weightTerm * weight * l1;
    const double w = weightTerm * weight * slope;
    scatter(dC, tbar, w, st, bc.gradP, bc.gradPDot, Eigen::Vector2d::Zero());
    gTbar += w * bc.gradTbar;

    if (movingTraj && gThat && that > movingTraj->startStamp() && that < movingTraj->endStamp()) {
      const Eigen::Vector2d vOther = movingTraj->evaluateAbs(that, 1);
      const Eigen::Vector2d aOther = movingTraj->evaluateAbs(that, 2);
      const double vn2 = vOther.squaredNorm();
      const double thetaDot =
          vn2 > 1e-12 ? (aOther.transpose() * skew90() * vOther).value() / vn2 : 0.0;
      // G = margin - d; the other pose moves the distance, not the ego chain.
      *gThat += w * (bc.raw.gradPosition.dot(vOther) - bc.raw.gradObsHeading * thetaDot);
    }
  }

  PenaltyConfig cfg_;
  mutable int lastPoint_ = 0;
};

}  // namespace carswarm
