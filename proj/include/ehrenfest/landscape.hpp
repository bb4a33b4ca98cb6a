// SPDX-License-Identifier: Apache-2.0
#pragma once

// Exact effective loss of an L2-regularised deep linear network with
// multiplicative neuron noise, as a function of the order parameter
// b = ||U|| / d0:
//
//   lbar(b, g) = -sum_i X m_i^2 / ((c/d0)^D a_i X + g) + E[y^2] + g D d0^2 b^2,
//   X = (d0 b)^(2D),  c = sigma^2 + d0,  m = E[x'y] in the eigenbasis of A0.
//
// Also hosts the closed forms derived from it: ridge regression (D = 0), the
// depth-1 critical point and its Landau expansion, bounds on nonzero
// minimisers, and the scalar mean-field polynomial.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ehrenfest/datastats.hpp"
#include "ehrenfest/error.hpp"

namespace ehrenfest {

enum class Activation { linear, tanh };

inline const char* to_string(Activation a) { return a == Activation::linear ? "linear" : "tanh"; }

/// Architecture and regulariser hyperparameters. All hidden widths equal
/// `width`; the input dimension comes from the data.
struct NetConfig {
  int depth = 1;           ///< D, number of hidden layers
  int width = 1;           ///< d0
  double noise_var = 0.0;  ///< sigma^2 of the multiplicative neuron noise
  int reg_exponent = 2;    ///< p in gamma * sum ||M||^p
  Activation activation = Activation::linear;

  void validate() const {
    if (depth < 0) throw InvalidInput("depth must be >= 0");
    if (width < 1) throw InvalidInput("width must be >= 1");
    if (!(noise_var >= 0.0) || !std::isfinite(noise_var))
      throw InvalidInput("noise_var must be finite and >= 0");
    if (reg_exponent < 2) throw InvalidInput("reg_exponent must be >= 2");
  }
};

namespace detail {

inline void check_gamma(double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw InvalidInput("gamma must be finite and >= 0");
}

inline void check_exact_landscape(const NetConfig& cfg) {
  cfg.validate();
  if (cfg.depth < 1) throw InvalidInput("effective landscape needs depth >= 1; use ridge_loss");
  if (cfg.reg_exponent != 2)
    throw InvalidInput(
        "the exact effective landscape holds for reg_exponent = 2 only; use meanfield_loss or "
        "the oracle");
}

/// (c/d0)^D, the factor multiplying a_i X in the denominators.
inline double noise_gain(const NetConfig& cfg) {
  const double d0 = cfg.width;
  return std::pow((cfg.noise_var + d0) / d0, cfg.depth);
}

/// Per-evaluation sums over eigendirections.
struct LandscapeSums {
  double x = 0.0;       ///< X = (d0 b)^(2D)
  double first = 0.0;   ///< sum m_i^2 X / den_i
  double second = 0.0;  ///< sum m_i^2 / den_i^2
};

inline LandscapeSums landscape_sums(double b, double gamma, const NetConfig& cfg,
                                    const MomentData& data) {
  LandscapeSums s;
  const double d0 = cfg.width;
  s.x = std::pow(d0 * b, 2 * cfg.depth);
  if (s.x == 0.0) {
    if (gamma > 0.0) {
      for (Eigen::Index i = 0; i < data.dim(); ++i)
        s.second += data.xy_rot()[i] * data.xy_rot()[i] / (gamma * gamma);
    }
    return s;
  }
  const double kappa = noise_gain(cfg);
  for (Eigen::Index i = 0; i < data.dim(); ++i) {
    const double m = data.xy_rot()[i];
    if (m == 0.0) continue;
    const double den = kappa * data.eigvals()[i] * s.x + gamma;
    // m^2 X / den written without X in the numerator: exact at gamma = 0 and
    // free of cancellation when X is subnormal.
    s.first += m * m / (kappa * data.eigvals()[i] + gamma / s.x);
    s.second += m * m / (den * den);
  }
  return s;
}

}  // namespace detail

/// The effective loss formula without domain checks on b; even in b.
inline double effective_loss_extended(double b, double gamma, const NetConfig& cfg,
                                      const MomentData& data) {
  detail::check_exact_landscape(cfg);
  detail::check_gamma(gamma);
  const auto s = detail::landscape_sums(b, gamma, cfg, data);
  const double d0 = cfg.width;
  return -s.first + data.y2() + gamma * cfg.depth * d0 * d0 * b * b;
}

/// Effective loss at b >= 0. Equals E[y^2] exactly at b = 0.
inline double effective_loss(double b, double gamma, const NetConfig& cfg, const MomentData& data) {
  if (!(b >= 0.0)) throw InvalidInput("effective_loss: b must be >= 0");
  return effective_loss_extended(b, gamma, cfg, data);
}

/// Analytic d/db of the effective loss.
inline double effective_loss_dgrad(double b, double gamma, const NetConfig& cfg,
                                   const MomentData& data) {
  if (!(b >= 0.0)) throw InvalidInput("effective_loss_dgrad: b must be >= 0");
  detail::check_exact_landscape(cfg);
  detail::check_gamma(gamma);
  const double d0 = cfg.width;
  const int D = cfg.depth;
  const auto s = detail::landscape_sums(b, gamma, cfg, data);
  // dX/db = 2 D d0 (d0 b)^(2D-1)
  const double dx = 2.0 * D * d0 * std::pow(d0 * b, 2 * D - 1);
  return -gamma * s.second * dx + 2.0 * gamma * D * d0 * d0 * b;
}

/// d/dgamma of the effective loss at fixed b. At a minimiser b* this is
/// L'(gamma) by the envelope theorem.
inline double effective_loss_dgamma(double b, double gamma, const NetConfig& cfg,
                                    const MomentData& data) {
  detail::check_exact_landscape(cfg);
  detail::check_gamma(gamma);
  const double d0 = cfg.width;
  const auto s = detail::landscape_sums(b, gamma, cfg, data);
  return s.x * s.second + cfg.depth * d0 * d0 * b * b;
}

/// Value of the regulariser gamma * (||U||^2 + sum ||W||_F^2) on the
/// global-minimum manifold at order parameter b.
inline double manifold_reg_term(double b, double gamma, const NetConfig& cfg,
                                const MomentData& data) {
  return gamma * effective_loss_dgamma(b, gamma, cfg, data);
}

/// Bounds on any nonzero global minimiser b* (gamma > 0).
struct BStarBounds {
  double lower = 0.0;       ///< (1/d0)(gamma/E0)^(1/(D-1)), D >= 2; 0 for D = 1
  double upper = 0.0;       ///< (E0 / (d0 (sigma^2+d0)^D a_max))^(1/(D+1))
  double upper_safe = 0.0;  ///< same with a_max replaced by the smallest signal-carrying a_i
  bool empty = false;       ///< lower > upper_safe: no nonzero minimiser exists
  bool degenerate = false;  ///< E0 = 0: no feature phase
};

/// The `upper` field is the textbook bound. It is only valid when the signal
/// lies in the top eigenspace of A0; `upper_safe` follows from stationarity for
/// any signal and is what minimize_b uses.
inline BStarBounds bstar_bounds(double gamma, const NetConfig& cfg, const MomentData& data) {
  cfg.validate();
  detail::check_gamma(gamma);
  if (cfg.depth < 1) throw InvalidInput("bstar_bounds: depth must be >= 1");
  BStarBounds out;
  const double e0 = signal_norms(data).e0;
  if (e0 == 0.0) {
    out.degenerate = true;
    out.empty = true;
    return out;
  }
  const int D = cfg.depth;
  const double d0 = cfg.width;
  const double c = cfg.noise_var + d0;
  if (D >= 2) out.lower = std::pow(gamma / e0, 1.0 / (D - 1)) / d0;
  const double inv = 1.0 / (D + 1);
  out.upper = std::pow(e0 / (d0 * std::pow(c, D) * data.a_max()), inv);
  out.upper_safe = std::pow(e0 / (d0 * std::pow(c, D) * data.a_signal_min()), inv);
  out.empty = out.lower > out.upper_safe;
  return out;
}

/// Global minimum of the effective loss over b >= 0.
struct BStar {
  double b = 0.0;
  double loss = 0.0;
  bool coexistence = false;  ///< a nonzero minimum ties with b = 0 within 1e-12
};

namespace detail {

/// Root of the b-gradient in [lo, hi] given a sign change; Illinois false
/// position guarded by bisection.
inline double refine_root(double lo, double hi, double glo, double ghi, double gamma,
                          const NetConfig& cfg, const MomentData& data) {
  int side = 0;
  for (int it = 0; it < 400 && hi - lo > 1e-12; ++it) {
    double mid = (lo * ghi - hi * glo) / (ghi - glo);
    if (!(mid > lo && mid < hi) || it % 4 == 3) mid = 0.5 * (lo + hi);
    const double g = effective_loss_dgrad(mid, gamma, cfg, data);
    if (std::abs(g) <= 1e-10) return mid;
    if ((g < 0.0) == (glo < 0.0)) {
      lo = mid;
      glo = g;
      if (side == -1) ghi *= 0.5;
      side = -1;
    } else {
      hi = mid;
      ghi = g;
      if (side == 1) glo *= 0.5;
      side = 1;
    }
  }
  return 0.5 * (lo + hi);
}

inline double golden_section(double lo, double hi, double gamma, const NetConfig& cfg,
                             const MomentData& data) {
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - r * (hi - lo), x2 = lo + r * (hi - lo);
  double f1 = effective_loss(x1, gamma, cfg, data), f2 = effective_loss(x2, gamma, cfg, data);
  while (hi - lo > 1e-12) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - r * (hi - lo);
      f1 = effective_loss(x1, gamma, cfg, data);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + r * (hi - lo);
      f2 = effective_loss(x2, gamma, cfg, data);
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Upper end of the b search interval.
inline double minimize_b_ceiling(double gamma, const NetConfig& cfg, const MomentData& data) {
  const auto bounds = bstar_bounds(gamma, cfg, data);
  double hi = 1.5 * bounds.upper_safe;
  if (cfg.depth == 1) hi = std::max(hi, 10.0 / cfg.width);
  return hi;
}

/// Global minimum of the effective loss: dense grid over [0, ceiling]
/// (2048 uniform plus 256 geometric points to resolve minima near the
/// origin), then local refinement of every grid-local minimum. Ties within
/// 1e-12 of the trivial value go to b = 0.
inline BStar minimize_b(double gamma, const NetConfig& cfg, const MomentData& data) {
  detail::check_exact_landscape(cfg);
  detail::check_gamma(gamma);
  const double y2 = data.y2();
  if (signal_norms(data).e0 == 0.0) return {0.0, y2, false};

  const double hi = minimize_b_ceiling(gamma, cfg, data);
  constexpr int kUniform = 2048;
  constexpr int kGeometric = 256;
  std::vector<double> grid;
  grid.reserve(kUniform + kGeometric);
  for (int j = 0; j < kUniform; ++j) grid.push_back(hi * j / (kUniform - 1));
  for (int j = 0; j < kGeometric; ++j) grid.push_back(hi * std::pow(10.0, -8.0 + 8.0 * j / kGeometric));
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  std::vector<double> f(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) f[j] = effective_loss(grid[j], gamma, cfg, data);

  double best_b = 0.0;
  double best_f = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < grid.size(); ++j) {
    const bool left_ok = f[j] <= f[j - 1];
    const bool right_ok = j + 1 == grid.size() || f[j] <= f[j + 1];
    if (!left_ok || !right_ok) continue;
    const double lo = grid[j - 1];
    const double up = j + 1 == grid.size() ? grid[j] : grid[j + 1];
    const double glo = effective_loss_dgrad(lo, gamma, cfg, data);
    const double ghi = effective_loss_dgrad(up, gamma, cfg, data);
    double b;
    if (glo < 0.0 && ghi > 0.0)
      b = detail::refine_root(lo, up, glo, ghi, gamma, cfg, data);
    else
      b = detail::golden_section(lo, up, gamma, cfg, data);
    double fb = effective_loss(b, gamma, cfg, data);
    if (f[j] < fb) {
      b = grid[j];
      fb = f[j];
    }
    if (fb < best_f) {
      best_f = fb;
      best_b = b;
    }
  }

  if (best_f < y2 - 1e-12) return {best_b, best_f, false};
  const bool tie = cfg.depth >= 2 && best_b > 0.0 && std::abs(best_f - y2) <= 1e-12;
  return {0.0, y2, tie};
}

/// Ridge regression (depth 0) closed form.
struct RidgeSolution {
  Vector weights;
  double loss = 0.0;
  bool singular = false;  ///< gamma = 0 with singular A0: minimum-norm solution returned
};

inline RidgeSolution ridge_loss(double gamma, const MomentData& data) {
  detail::check_gamma(gamma);
  RidgeSolution out;
  Vector w_rot = Vector::Zero(data.dim());
  double explained = 0.0;
  for (Eigen::Index i = 0; i < data.dim(); ++i) {
    const double den = data.eigvals()[i] + gamma;
    if (den == 0.0) {
      out.singular = true;
      continue;
    }
    w_rot[i] = data.xy_rot()[i] / den;
    explained += data.xy_rot()[i] * w_rot[i];
  }
  out.weights = data.rotation() * w_rot;
  out.loss = data.y2() - explained;
  return out;
}

/// Closed-form derivatives of the ridge free energy,
/// L^(n)(gamma) = (-1)^(n+1) n! m^T (A0 + gamma)^(-(n+1)) m for n >= 1.
inline double ridge_loss_derivative(double gamma, const MomentData& data, int order) {
  detail::check_gamma(gamma);
  if (order == 0) return ridge_loss(gamma, data).loss;
  double fact = 1.0;
  for (int k = 2; k <= order; ++k) fact *= k;
  const double sign = order % 2 == 1 ? 1.0 : -1.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < data.dim(); ++i) {
    const double m = data.xy_rot()[i];
    if (m == 0.0) continue;
    s += m * m / std::pow(data.eigvals()[i] + gamma, order + 1);
  }
  return sign * fact * s;
}

/// Depth-1 critical regularisation strength ||E[xy]||.
inline double critical_gamma_d1(const MomentData& data) { return signal_norms(data).e0; }

/// Expansion of the squared order parameter s = d0 b*^2 near the depth-1
/// critical point, s(delta) = beta1 delta + beta2 delta^2, delta = gamma - gamma*.
struct LandauCoefficients {
  double gamma_star = 0.0;
  double beta1 = 0.0;
  /// 3 E0 (E2^2 - E1^2) / (2 (sigma^2+d0) E1^4), the textbook closed form.
  double beta2 = 0.0;
  /// 3 E0 (E0^2 E2^2 - E1^4) / (2 (sigma^2+d0) E1^6), from expanding the
  /// stationarity condition directly. This one matches the numerical
  /// minimiser; the two agree for A0 = I and differ in general (e.g. any 1-D
  /// instance with a != 1, where s is exactly linear in delta).
  double beta2_expansion = 0.0;
};

inline LandauCoefficients landau_coefficients(const NetConfig& cfg, const MomentData& data) {
  cfg.validate();
  if (cfg.depth != 1) throw InvalidInput("landau_coefficients: depth must be 1");
  const auto n = signal_norms(data);
  if (n.e1 == 0.0) throw Undefined("landau_coefficients: E1 = 0, coefficients undefined");
  const double c = cfg.noise_var + cfg.width;
  const double e0s = n.e0 * n.e0, e1s = n.e1 * n.e1, e2s = n.e2 * n.e2;
  LandauCoefficients out;
  out.gamma_star = n.e0;
  out.beta1 = -e0s / (c * e1s);
  out.beta2 = 3.0 * n.e0 * (e2s - e1s) / (2.0 * c * e1s * e1s);
  out.beta2_expansion = 3.0 * n.e0 * (e0s * e2s - e1s * e1s) / (2.0 * c * e1s * e1s * e1s);
  return out;
}

/// Closed form -d0/(sigma^2+d0) E0^2/E1^2 for L''(gamma*-). Unverified: on the
/// exactly solvable 1-D instance numerical differentiation gives twice this
/// value. Callers must cross-check against a sweep; see classify_transition.
inline double second_derivative_left_formula(const NetConfig& cfg, const MomentData& data) {
  cfg.validate();
  if (cfg.depth != 1) throw InvalidInput("second_derivative_left_formula: depth must be 1");
  const auto n = signal_norms(data);
  if (n.e1 == 0.0) throw Undefined("second_derivative_left_formula: E1 = 0");
  const double d0 = cfg.width;
  return -d0 / (cfg.noise_var + d0) * (n.e0 * n.e0) / (n.e1 * n.e1);
}

/// L''(gamma*-) implied by beta1 and the envelope identity L' = 2 d0 s:
/// 2 d0 beta1.
inline double second_derivative_left_expansion(const NetConfig& cfg, const MomentData& data) {
  return 2.0 * cfg.width * landau_coefficients(cfg, data).beta1;
}

/// Structural constants and scalar moments of the mean-field polynomial.
struct MeanFieldModel {
  double c0 = 1.0;
  double c1 = 1.0;
  double c2 = 1.0;
  double ex2 = 1.0;  ///< E[x^2]
  double exy = 0.0;  ///< E[xy]
};

/// c0 E[x^2] b^(2D+2) - c1 E[xy] b^(D+1) + gamma c2 |b|^p, constant dropped.
/// Defined for b of either sign.
inline double meanfield_loss(double b, double gamma, const NetConfig& cfg,
                             const MeanFieldModel& m) {
  cfg.validate();
  detail::check_gamma(gamma);
  const int D = cfg.depth;
  return m.c0 * m.ex2 * std::pow(b, 2 * D + 2) - m.c1 * m.exy * std::pow(b, D + 1) +
         gamma * m.c2 * std::pow(std::abs(b), cfg.reg_exponent);
}

/// Limit of L^(D)(gamma) as D -> infinity for gamma > 0.
inline double depth_limit_loss(const MomentData& data) { return data.y2(); }

}  // namespace ehrenfest
