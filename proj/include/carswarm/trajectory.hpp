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
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace carswarm {

// Flat-output trajectories are piecewise quintics: control effort is the
// m-th derivative of the rear-axle position, with m = 3.
inline constexpr int kFlatOrder = 3;
inline constexpr int kPolyDegree = 2 * kFlatOrder - 1;
inline constexpr int kCoeffsPerAxis = 2 * kFlatOrder;

// Below this speed the flatness map (heading, curvature, steer) is singular.
inline constexpr double kSingularSpeed = 1e-4;

inline Eigen::Matrix2d skew90() {
  Eigen::Matrix2d h;
  h << 0.0, -1.0, 1.0, 0.0;
  return h;
}

inline Eigen::Matrix2d rotation2(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

inline double wrapAngle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

class TrajectoryDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class SingularVelocityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MessageDecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CarState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double heading = 0.0;    // rad, in (-pi, pi]
  double speed = 0.0;      // m/s, signed by gear
  double steer = 0.0;      // rad
  double curvature = 0.0;  // 1/m
};

// Per-piece coefficients in the monomial basis of local piece time.
// Row k is the t^k coefficient; columns are the x and y axes.
using CoefficientBlock = Eigen::Matrix<double, kCoeffsPerAxis, 2>;

struct TrajectoryMessage {
  int agentId = -1;
  double startStamp = 0.0;
  double pieceDuration = 0.0;
  int gear = 1;
  std::vector<CoefficientBlock> pieces;
};

// Monomial basis vector [1, t, ..., t^5] differentiated `order` times.
inline Eigen::Matrix<double, kCoeffsPerAxis, 1> monomialBasis(double t, int order) {
  Eigen::Matrix<double, kCoeffsPerAxis, 1> b = Eigen::Matrix<double, kCoeffsPerAxis, 1>::Zero();
  if (order > kPolyDegree) return b;
  double tn = 1.0;
  for (int j = order; j < kCoeffsPerAxis; ++j) {
    double fac = 1.0;
    for (int q = 0; q < order; ++q) fac *= static_cast<double>(j - q);
    b(j) = fac * tn;
    tn *= t;
  }
  return b;
}

class FlatTrajectory {
 public:
  FlatTrajectory(std::vector<CoefficientBlock> pieces, double pieceDuration,
                 double startStamp = 0.0, int gear = 1)
      : pieces_(std::move(pieces)),
        pieceDuration_(pieceDuration),
        startStamp_(startStamp),
        gear_(gear) {
    if (pieces_.empty()) throw TrajectoryDomainError("trajectory needs at least one piece");
    if (!(pieceDuration_ > 0.0)) throw TrajectoryDomainError("piece duration must be positive");
    if (gear_ != 1 && gear_ != -1) throw TrajectoryDomainError("gear must be +1 or -1");
  }

  int pieceCount() const { return static_cast<int>(pieces_.size()); }
  double pieceDuration() const { return pieceDuration_; }
  double totalDuration() const { return pieceDuration_ * pieceCount(); }
  double startStamp() const { return startStamp_; }
  double endStamp() const { return startStamp_ + totalDuration(); }
  int gear() const { return gear_; }
  const CoefficientBlock& piece(int i) const { return pieces_[i]; }
  const std::vector<CoefficientBlock>& pieces() const { return pieces_; }

  // Index of the piece containing relative time t. A stamp exactly on a piece
  // boundary belongs to the later piece; t == T stays in the last piece.
  int pieceIndexAt(double t) const {
    int i = static_cast<int>(std::floor(t / pieceDuration_));
    if (i < 0) i = 0;
    if (i >= pieceCount()) i = pieceCount() - 1;
    return i;
  }

  // Derivative of order `order` at relative time t in [0, T].
  Eigen::Vector2d evaluate(double t, int order = 0) const {
    if (order < 0 || order > kPolyDegree)
      throw TrajectoryDomainError("derivative order " + std::to_string(order) + " out of range");
    const double total = totalDuration();
    if (t < -kTimeSlack || t > total + kTimeSlack)
      throw TrajectoryDomainError("stamp " + std::to_string(t) +
                                  " outside trajectory domain [0, " + std::to_string(total) + "]");
    t = std::min(std::max(t, 0.0), total);
    const int i = pieceIndexAt(t);
    const double local = t - i * pieceDuration_;
    return pieces_[i].transpose() * monomialBasis(local, order);
  }

  // Same, addressed by absolute simulation time.
  Eigen::Vector2d evaluateAbs(double tAbs, int order = 0) const {
    return evaluate(tAbs - startStamp_, order);
  }

  // Absolute time clamped into the trajectory's domain: before the start the
  // initial state holds, past the end the agent is frozen at its final pose.
  double clampAbs(double tAbs) const {
    return std::min(std::max(tAbs, startStamp_), endStamp());
  }

  // Full car state recovered through differential flatness.
  CarState flatStateAt(double t, double wheelbase) const {
    const Eigen::Vector2d p = evaluate(t, 0);
    const Eigen::Vector2d v = evaluate(t, 1);
    const Eigen::Vector2d a = evaluate(t, 2);
    const double vn = v.norm();
    if (vn <= kSingularSpeed)
      throw SingularVelocityError("speed " + std::to_string(vn) + " at stamp " +
                                  std::to_string(t) + " below flatness threshold");
    const double eta = static_cast<double>(gear_);
    CarState s;
    s.position = p;
    s.heading = std::atan2(eta * v.y(), eta * v.x());
    s.speed = eta * vn;
    s.curvature = (a.transpose() * skew90() * v).value() / (vn * vn * vn);
    s.steer = std::atan(s.curvature * wheelbase);
    return s;
  }

  // Heading for pose placement. Unlike flatStateAt this accepts any usable
  // velocity and falls back to scanning nearby stamps so that near-rest
  // trajectories (stop ramps, parked agents with creep velocity) still yield
  // a well-defined footprint orientation.
  double headingAt(double t, double fallback = 0.0) const {
    const double total = totalDuration();
    t = std::min(std::max(t, 0.0), total);
    const double eta = static_cast<double>(gear_);
    const Eigen::Vector2d v = evaluate(t, 1);
    if (v.norm() > kHeadingSpeedFloor) return std::atan2(eta * v.y(), eta * v.x());
    for (int k = 1; k <= 8; ++k) {
      const double off = total * k / 16.0;
      for (const double cand : {t - off, t + off}) {
        if (cand < 0.0 || cand > total) continue;
        const Eigen::Vector2d w = evaluate(cand, 1);
        if (w.norm() > kHeadingSpeedFloor) return std::atan2(eta * w.y(), eta * w.x());
      }
    }
    return fallback;
  }

  // Pose lookup by absolute time with frozen-pose extrapolation.
  std::pair<Eigen::Vector2d, double> poseAtAbs(double tAbs, double fallbackHeading = 0.0) const {
    const double t = clampAbs(tAbs) - startStamp_;
    return {evaluate(t, 0), headingAt(t, fallbackHeading)};
  }

  // Largest discontinuity of the order-th derivative across interior piece
  // boundaries; used to verify C^2 continuity of constructed trajectories.
  double maxBoundaryJump(int order) const {
    double worst = 0.0;
    for (int i = 0; i + 1 < pieceCount(); ++i) {
      const Eigen::Vector2d left = pieces_[i].transpose() * monomialBasis(pieceDuration_, order);
      const Eigen::Vector2d right = pieces_[i + 1].transpose() * monomialBasis(0.0, order);
      worst = std::max(worst, (left - right).norm());
    }
    return worst;
  }

  TrajectoryMessage toMessage(int agentId) const {
    TrajectoryMessage m;
    m.agentId = agentId;
    m.startStamp = startStamp_;
    m.pieceDuration = pieceDuration_;
    m.gear = gear_;
    m.pieces = pieces_;
    return m;
  }

  static FlatTrajectory fromMessage(const TrajectoryMessage& m) {
    if (m.pieces.empty()) throw MessageDecodeError("trajectory message has no pieces");
    if (!(m.pieceDuration > 0.0)) throw MessageDecodeError("trajectory message piece duration must be positive");
    if (m.gear != 1 && m.gear != -1) throw MessageDecodeError("trajectory message gear must be +1 or -1");
    return FlatTrajectory(m.pieces, m.pieceDuration, m.startStamp, m.gear);
  }

  // A stationary trajectory holding (position, heading) for `duration`.
  // A creep velocity well below the flatness threshold keeps the heading
  // recoverable from the coefficients so the wire format needs no pose field.
  static FlatTrajectory parked(const Eigen::Vector2d& position, double heading,
                               double duration, double startStamp) {
    CoefficientBlock c = CoefficientBlock::Zero();
    const Eigen::Vector2d dir(std::cos(heading), std::sin(heading));
    c.row(0) = position.transpose();
    c.row(1) = (kCreepSpeed * dir).transpose();
    return FlatTrajectory({c}, duration, startStamp, 1);
  }

  static constexpr double kCreepSpeed = 1e-6;

 private:
  static constexpr double kTimeSlack = 1e-9;
  static constexpr double kHeadingSpeedFloor = 1e-9;

  std::vector<CoefficientBlock> pieces_;
  double pieceDuration_;
  double startStamp_;
  int gear_;
};

}  // namespace carswarm
