// SPDX-License-Identifier: Apache-2.0
#pragma once

// Gradient descent with a Barzilai-Borwein trial step and Armijo backtracking.
// Shared by the full-parameter oracle and the noise-free trainers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/Dense>

namespace ehrenfest {

struct DescentOptions {
  double grad_tol = 1e-9;  ///< stop when ||grad||_inf <= grad_tol
  long max_iter = 100000;
  /// Iterations that use a conservative trial step (twice the last accepted
  /// step) before switching to Barzilai-Borwein steps. Large BB steps early on
  /// can jump between basins of attraction.
  long warmup_iter = 100;
  /// Stop when the loss has not improved by more than stall_tol (relative to
  /// 1 + |f|) over stall_window iterations. 0 disables the check.
  double stall_tol = 0.0;
  long stall_window = 2000;
};

struct DescentResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_inf = 0.0;
  long iterations = 0;
  bool converged = false;
};

/// Objective returning f(x) and writing the gradient into `grad`.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

inline DescentResult gradient_descent(const Objective& fn, Eigen::VectorXd x,
                                      const DescentOptions& opt = {}) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd g(n), g_new(n), x_new(n);
  double f = fn(x, g);
  double step = 1e-2 / std::max(1.0, g.lpNorm<Eigen::Infinity>());
  DescentResult out;
  double f_mark = f;
  long mark_iter = 0;
  long it = 0;
  for (; it < opt.max_iter; ++it) {
    const double ginf = g.lpNorm<Eigen::Infinity>();
    if (!(ginf > opt.grad_tol)) {
      out.converged = std::isfinite(ginf);
      break;
    }
    const double gg = g.squaredNorm();
    double t = step;
    double f_new = 0.0;
    bool accepted = false;
    // Near a minimum the Armijo decrease drops below the resolution of f;
    // there a step is accepted when f is unchanged to rounding and the
    // gradient shrinks.
    const double f_noise = 8.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(f));
    for (int bt = 0; bt < 60; ++bt) {
      x_new = x - t * g;
      f_new = fn(x_new, g_new);
      if (std::isfinite(f_new)) {
        if (f_new <= f - 1e-4 * t * gg) {
          accepted = true;
          break;
        }
        if (f_new <= f + f_noise && g_new.lpNorm<Eigen::Infinity>() < ginf) {
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted || x_new == x) break;  // no representable progress
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    // Alternate the two BB step lengths; fall back to growing the last step.
    if (it < opt.warmup_iter) {
      step = 2.0 * t;
    } else if (sy > 0.0) {
      step = (it % 2 == 0) ? s.squaredNorm() / sy : sy / y.squaredNorm();
    } else {
      step = 2.0 * t;
    }
    step = std::clamp(step, 1e-20, 1e20);
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    if (opt.stall_tol > 0.0 && it - mark_iter >= opt.stall_window) {
      if (f_mark - f <= opt.stall_tol * (1.0 + std::abs(f))) {
        ++it;
        break;
      }
      f_mark = f;
      mark_iter = it;
    }
  }
  out.x = std::move(x);
  out.f = f;
  out.grad_inf = g.lpNorm<Eigen::Infinity>();
  out.iterations = it;
  if (out.grad_inf <= opt.grad_tol) out.converged = true;
  return out;
}

}  // namespace ehrenfest
