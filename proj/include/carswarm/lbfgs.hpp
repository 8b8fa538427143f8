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
#include <deque>
#include <limits>
#include <string>
#include <vector>

namespace carswarm::lbfgs {

struct Params {
  int memory = 12;
  double gradTol = 1e-4;       // terminate when the gradient 2-norm drops below
  int maxIterations = 200;
  int maxLineSearch = 50;
  double armijo = 1e-4;
  double wolfe = 0.9;          // weak Wolfe curvature parameter
};

struct Result {
  double cost = std::numeric_limits<double>::infinity();
  double gradNorm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

// Limited-memory BFGS with a bisection weak-Wolfe line search; tolerant of
// the mild nonsmoothness of penalty objectives. On line-search failure the
// best iterate seen so far is kept.
template <typename Objective>
Result minimize(Objective&& objective, Eigen::VectorXd& x, const Params& params = {}) {
  const int n = static_cast<int>(x.size());
  Result res;

  Eigen::VectorXd grad(n), gradNew(n), xNew(n), direction(n);
  double fx = objective(x, grad);
  ++res.evaluations;
  if (!std::isfinite(fx)) {
    res.message = "non-finite objective at the initial point";
    return res;
  }

  Eigen::VectorXd bestX = x;
  double bestF = fx;

  std::deque<Eigen::VectorXd> sHist, yHist;
  std::deque<double> rhoHist;

  for (int iter = 0; iter < params.maxIterations; ++iter) {
    res.iterations = iter;
    res.gradNorm = grad.norm();
    if (res.gradNorm < params.gradTol) {
      res.converged = true;
      break;
    }

    // Two-loop recursion.
    direction = -grad;
    std::vector<double> alpha(sHist.size());
    for (int i = static_cast<int>(sHist.size()) - 1; i >= 0; --i) {
      alpha[i] = rhoHist[i] * sHist[i].dot(direction);
      direction -= alpha[i] * yHist[i];
    }
    if (!sHist.empty()) {
      const double gammaNum = sHist.back().dot(yHist.back());
      const double gammaDen = yHist.back().squaredNorm();
      if (gammaDen > 0.0) direction *= gammaNum / gammaDen;
    }
    for (size_t i = 0; i < sHist.size(); ++i) {
      const double beta = rhoHist[i] * yHist[i].dot(direction);
      direction += (alpha[i] - beta) * sHist[i];
    }

    double dg = grad.dot(direction);
    if (dg >= 0.0) {  // not a descent direction; restart from steepest descent
      direction = -grad;
      dg = -grad.squaredNorm();
      sHist.clear();
      yHist.clear();
      rhoHist.clear();
    }

    // Weak Wolfe bisection line search.
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    double step = 1.0;
    double fNew = fx;
    bool accepted = false;
    for (int ls = 0; ls < params.maxLineSearch; ++ls) {
      xNew = x + step * direction;
      fNew = objective(xNew, gradNew);
      ++res.evaluations;
      if (!std::isfinite(fNew) || fNew > fx + params.armijo * step * dg) {
        hi = step;
      } else if (gradNew.dot(direction) < params.wolfe * dg) {
        lo = step;
      } else {
        accepted = true;
        break;
      }
      step = std::isfinite(hi) ? 0.5 * (lo + hi) : 2.0 * lo;
      if (step <= 0.0 || (std::isfinite(hi) && hi - lo < 1e-16)) break;
    }
    if (!accepted && (!std::isfinite(fNew) || fNew >= fx)) {
      res.message = "line search failed";
      break;
    }

    const Eigen::VectorXd s = xNew - x;
    const Eigen::VectorXd yv = gradNew - grad;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      sHist.push_back(s);
      yHist.push_back(yv);
      rhoHist.push_back(1.0 / sy);
      if (static_cast<int>(sHist.size()) > params.memory) {
        sHist.pop_front();
        yHist.pop_front();
        rhoHist.pop_front();
      }
    }

    x = xNew;
    fx = fNew;
    grad.swap(gradNew);
    if (fx < bestF) {
      bestF = fx;
      bestX = x;
    }
  }

  if (fx > bestF) {
    x = bestX;
    fx = bestF;
  }
  res.cost = fx;
  if (res.message.empty() && !res.converged) res.message = "iteration limit reached";
  return res;
}

}  // namespace carswarm::lbfgs
