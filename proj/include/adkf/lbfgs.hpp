/*
 * Copyright 2026 The adkf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <utility>

#include "adkf/core_math.hpp"

namespace adkf {

struct LbfgsOptions {
  int history = 10;
  double c1 = 1e-4;
  double c2 = 0.9;
  int max_iterations = 100;
  /// Converged when ‖projected ∇f‖∞ ≤ tolerance · max(1, |f|).
  double tolerance = 1e-7;
  int max_line_search_evals = 40;
};

enum class LbfgsStatus { kConverged, kMaxIterations, kLineSearchFailed, kNonFinite };

struct LbfgsResult {
  Vector x;
  double f = 0.0;
  Vector grad;
  int iterations = 0;
  int evaluations = 0;
  LbfgsStatus status = LbfgsStatus::kMaxIterations;
};

namespace detail {

// Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), clamped into the bracket.
inline double cubic_step(double a, double fa, double ga, double b, double fb, double gb) {
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  double t = 0.5 * (a + b);
  if (disc >= 0.0 && std::isfinite(disc)) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = gb - ga + 2.0 * d2;
    if (denom != 0.0) t = b - (b - a) * (gb + d2 - d1) / denom;
  }
  if (!std::isfinite(t)) t = 0.5 * (a + b);
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

inline Vector projected_gradient(const Vector& x, const Vector& g, const Vector& lower) {
  Vector pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x[i] <= lower[i] && g[i] > 0.0) pg[i] = 0.0;
  return pg;
}

}  // namespace detail

/**
 * L-BFGS with a strong-Wolfe line search (bracketing + cubic zoom) and simple
 * lower bounds: after each step, coordinates below their bound are clamped
 * and the objective is re-evaluated at the clamped point.
 *
 * `objective(x, grad)` returns f(x) and writes ∇f(x); it may return a
 * non-finite value for points outside its domain.
 */
template <typename Objective>
LbfgsResult lbfgs_minimize(Objective&& objective, Vector x0, const LbfgsOptions& opts, const Vector& lower_bounds) {
  const Eigen::Index n = x0.size();
  LbfgsResult res;
  res.x = x0.cwiseMax(lower_bounds);
  res.grad = Vector::Zero(n);
  res.f = objective(res.x, res.grad);
  res.evaluations = 1;
  if (!std::isfinite(res.f) || !res.grad.allFinite()) {
    res.status = LbfgsStatus::kNonFinite;
    return res;
  }

  std::deque<std::pair<Vector, Vector>> pairs;
  auto converged = [&](const Vector& x, const Vector& g, double f) {
    return detail::projected_gradient(x, g, lower_bounds).lpNorm<Eigen::Infinity>() <=
           opts.tolerance * std::max(1.0, std::abs(f));
  };

  for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
    if (converged(res.x, res.grad, res.f)) {
      res.status = LbfgsStatus::kConverged;
      return res;
    }
    // Two-loop recursion on the projected gradient.
    const Vector pg = detail::projected_gradient(res.x, res.grad, lower_bounds);
    Vector q = pg;
    std::vector<double> alphas(pairs.size());
    for (std::size_t i = pairs.size(); i-- > 0;) {
      const auto& [s, y] = pairs[i];
      alphas[i] = s.dot(q) / y.dot(s);
      q -= alphas[i] * y;
    }
    if (!pairs.empty()) {
      const auto& [s, y] = pairs.back();
      q *= s.dot(y) / y.squaredNorm();
    } else {
      q /= std::max(1.0, pg.lpNorm<Eigen::Infinity>());
    }
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& [s, y] = pairs[i];
      const double beta = y.dot(q) / y.dot(s);
      q += (alphas[i] - beta) * s;
    }
    Vector dir = -q;
    for (Eigen::Index i = 0; i < n; ++i)
      if (res.x[i] <= lower_bounds[i] && dir[i] < 0.0) dir[i] = 0.0;
    double dg0 = dir.dot(res.grad);
    if (!(dg0 < 0.0)) {
      pairs.clear();
      dir = -pg;
      dg0 = dir.dot(res.grad);
      if (!(dg0 < 0.0)) {
        res.status = LbfgsStatus::kLineSearchFailed;
        return res;
      }
    }

    // Strong-Wolfe line search along dir.
    const double f0 = res.f;
    Vector trial_g(n);
    Vector best_x = res.x;
    Vector best_g = res.grad;
    double best_f = f0;
    bool accepted = false;
    auto eval = [&](double alpha, double& f, double& dg) {
      const Vector xt = res.x + alpha * dir;
      f = objective(xt, trial_g);
      ++res.evaluations;
      if (!std::isfinite(f) || !trial_g.allFinite()) {
        f = std::numeric_limits<double>::infinity();
        dg = std::numeric_limits<double>::quiet_NaN();
        return;
      }
      dg = trial_g.dot(dir);
      if (f < best_f) {
        best_f = f;
        best_x = xt;
        best_g = trial_g;
      }
    };
    auto wolfe_ok = [&](double alpha, double f, double dg) {
      return f <= f0 + opts.c1 * alpha * dg0 && std::abs(dg) <= -opts.c2 * dg0;
    };

    double alpha_prev = 0.0;
    double f_prev = f0;
    double dg_prev = dg0;
    double alpha = 1.0;
    double accepted_alpha = 0.0;
    double accepted_f = 0.0;
    int evals = 0;
    double lo = 0.0, f_lo = f0, dg_lo = dg0, hi = 0.0, f_hi = 0.0, dg_hi = 0.0;
    bool zoom = false;
    while (evals < opts.max_line_search_evals) {
      double f = 0.0, dg = 0.0;
      eval(alpha, f, dg);
      ++evals;
      if (!std::isfinite(f) || f > f0 + opts.c1 * alpha * dg0 || (evals > 1 && f >= f_prev)) {
        lo = alpha_prev, f_lo = f_prev, dg_lo = dg_prev, hi = alpha, f_hi = f, dg_hi = dg;
        zoom = true;
        break;
      }
      if (wolfe_ok(alpha, f, dg)) {
        accepted = true;
        accepted_alpha = alpha;
        accepted_f = f;
        break;
      }
      if (dg >= 0.0) {
        lo = alpha, f_lo = f, dg_lo = dg, hi = alpha_prev, f_hi = f_prev, dg_hi = dg_prev;
        zoom = true;
        break;
      }
      alpha_prev = alpha, f_prev = f, dg_prev = dg;
      alpha *= 2.0;
    }
    while (zoom && !accepted && evals < opts.max_line_search_evals) {
      double a = 0.5 * (lo + hi);
      if (std::isfinite(f_hi) && std::isfinite(dg_hi)) a = detail::cubic_step(lo, f_lo, dg_lo, hi, f_hi, dg_hi);
      if (std::abs(hi - lo) <= 1e-16 * std::max(1.0, std::abs(lo))) break;
      double f = 0.0, dg = 0.0;
      eval(a, f, dg);
      ++evals;
      if (!std::isfinite(f) || f > f0 + opts.c1 * a * dg0 || f >= f_lo) {
        hi = a, f_hi = f, dg_hi = dg;
      } else {
        if (std::abs(dg) <= -opts.c2 * dg0) {
          accepted = true;
          accepted_alpha = a;
          accepted_f = f;
          break;
        }
        if (dg * (hi - lo) >= 0.0) hi = lo, f_hi = f_lo, dg_hi = dg_lo;
        lo = a, f_lo = f, dg_lo = dg;
      }
    }

    if (!accepted) {
      // Keep any strict decrease found, but report the failure.
      if (best_f < res.f) {
        res.x = best_x;
        res.f = best_f;
        res.grad = best_g;
      }
      res.status = converged(res.x, res.grad, res.f) ? LbfgsStatus::kConverged : LbfgsStatus::kLineSearchFailed;
      return res;
    }

    // The accepted point is always the most recent evaluation, so trial_g is its gradient.
    Vector x_new = res.x + accepted_alpha * dir;
    Vector g_new = trial_g;
    double f_new = accepted_f;
    const Vector clamped = x_new.cwiseMax(lower_bounds);
    if (clamped != x_new) {
      x_new = clamped;
      f_new = objective(x_new, g_new);
      ++res.evaluations;
      if (!std::isfinite(f_new) || !g_new.allFinite()) {
        res.status = LbfgsStatus::kNonFinite;
        return res;
      }
    }
    const Vector s = x_new - res.x;
    const Vector y = g_new - res.grad;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      pairs.emplace_back(s, y);
      if (static_cast<int>(pairs.size()) > opts.history) pairs.pop_front();
    }
    res.x = std::move(x_new);
    res.grad = std::move(g_new);
    res.f = f_new;
  }
  res.status = converged(res.x, res.grad, res.f) ? LbfgsStatus::kConverged : LbfgsStatus::kMaxIterations;
  return res;
}

template <typename Objective>
LbfgsResult lbfgs_minimize(Objective&& objective, Vector x0, const LbfgsOptions& opts = {}) {
  const Vector unbounded = Vector::Constant(x0.size(), -std::numeric_limits<double>::infinity());
  return lbfgs_minimize(std::forward<Objective>(objective), std::move(x0), opts, unbounded);
}

}  // namespace adkf
