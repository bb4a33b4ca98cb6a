// SPDX-License-Identifier: Apache-2.0
#pragma once

// Ground truth in the full parameter space. The expected loss over the
// multiplicative neuron noise (mean 1, variance sigma^2) is integrated
// analytically by propagating second moments:
//
//   C1 = W1 A0 W1^T,  N(M) = M + sigma^2 diag(M),  C_{k+1} = W_{k+1} N(C_k) W_{k+1}^T,
//   E[f^2] = u^T N(C_D) u,  E[f y] = u^T W_D ... W_1 E[xy].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ehrenfest/datastats.hpp"
#include "ehrenfest/error.hpp"
#include "ehrenfest/landscape.hpp"
#include "ehrenfest/optimize.hpp"

namespace ehrenfest {

/// Network weights. For depth D >= 1: u has length d0, w[0] is d0 x d,
/// w[k >= 1] is d0 x d0. For D = 0 the model is linear regression: u has
/// length d and w is empty.
struct ParamSet {
  Vector u;
  std::vector<Matrix> w;

  /// Zero parameters of the right shapes.
  static ParamSet zeros(const NetConfig& cfg, Eigen::Index input_dim) {
    ParamSet p;
    if (cfg.depth == 0) {
      p.u = Vector::Zero(input_dim);
      return p;
    }
    p.u = Vector::Zero(cfg.width);
    p.w.push_back(Matrix::Zero(cfg.width, input_dim));
    for (int k = 1; k < cfg.depth; ++k) p.w.push_back(Matrix::Zero(cfg.width, cfg.width));
    return p;
  }

  [[nodiscard]] Eigen::Index size() const {
    Eigen::Index n = u.size();
    for (const auto& m : w) n += m.size();
    return n;
  }

  /// Flattens u then each w[k] (column-major).
  [[nodiscard]] Vector pack() const {
    Vector out(size());
    Eigen::Index at = 0;
    out.segment(at, u.size()) = u;
    at += u.size();
    for (const auto& m : w) {
      out.segment(at, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
      at += m.size();
    }
    return out;
  }

  /// Inverse of pack() into the shapes of *this.
  void unpack(const Vector& flat) {
    Eigen::Index at = 0;
    u = flat.segment(at, u.size());
    at += u.size();
    for (auto& m : w) {
      Eigen::Map<Vector>(m.data(), m.size()) = flat.segment(at, m.size());
      at += m.size();
    }
  }

  /// ||U|| / d0, the order parameter (||u|| for depth 0).
  [[nodiscard]] double order_parameter() const {
    const double width = w.empty() ? 1.0 : static_cast<double>(u.size());
    return u.norm() / width;
  }

  [[nodiscard]] bool all_finite() const {
    if (!u.allFinite()) return false;
    for (const auto& m : w)
      if (!m.allFinite()) return false;
    return true;
  }
};

namespace detail {

inline void check_shapes(const ParamSet& p, const NetConfig& cfg, Eigen::Index d) {
  if (cfg.depth == 0) {
    if (!p.w.empty() || p.u.size() != d) throw InvalidInput("ParamSet shape mismatch for depth 0");
    return;
  }
  const Eigen::Index d0 = cfg.width;
  if (static_cast<int>(p.w.size()) != cfg.depth || p.u.size() != d0)
    throw InvalidInput("ParamSet shape mismatch: expected depth " + std::to_string(cfg.depth) +
                       " and width " + std::to_string(cfg.width));
  if (p.w[0].rows() != d0 || p.w[0].cols() != d) throw InvalidInput("W1 must be d0 x d");
  for (std::size_t k = 1; k < p.w.size(); ++k)
    if (p.w[k].rows() != d0 || p.w[k].cols() != d0) throw InvalidInput("hidden W must be d0 x d0");
}

/// N(M) = M + sigma^2 diag(M).
inline Matrix noise_map(Matrix m, double noise_var) {
  if (noise_var != 0.0) m.diagonal() *= (1.0 + noise_var);
  return m;
}

inline double reg_value(const ParamSet& p, int reg_exponent) {
  auto term = [&](double sq) { return reg_exponent == 2 ? sq : std::pow(sq, 0.5 * reg_exponent); };
  double r = term(p.u.squaredNorm());
  for (const auto& m : p.w) r += term(m.squaredNorm());
  return r;
}

/// d/dM of ||M||^p = p ||M||^(p-2) M.
inline double reg_grad_scale(double sq, int reg_exponent) {
  if (reg_exponent == 2) return 2.0;
  if (sq == 0.0) return 0.0;
  return reg_exponent * std::pow(sq, 0.5 * reg_exponent - 1.0);
}

}  // namespace detail

/// E_{x,eps}[f(x) y] and E_{x,eps}[f(x)^2].
struct ForwardMoments {
  double fy = 0.0;
  double f2 = 0.0;
};

inline ForwardMoments forward_moments(const ParamSet& p, const MomentData& data, double noise_var) {
  const Matrix& a0 = data.cov();
  if (p.w.empty()) {
    if (p.u.size() != data.dim()) throw InvalidInput("forward_moments: shape mismatch");
    return {p.u.dot(data.xy()), p.u.dot(a0 * p.u)};
  }
  if (p.w[0].cols() != data.dim()) throw InvalidInput("forward_moments: W1 must have d columns");
  Matrix c = p.w[0] * a0 * p.w[0].transpose();
  Vector v = p.w[0] * data.xy();
  for (std::size_t k = 1; k < p.w.size(); ++k) {
    if (p.w[k].cols() != c.rows()) throw InvalidInput("forward_moments: shape mismatch");
    c = p.w[k] * detail::noise_map(std::move(c), noise_var) * p.w[k].transpose();
    v = p.w[k] * v;
  }
  if (p.u.size() != c.rows()) throw InvalidInput("forward_moments: u length mismatch");
  const Matrix nc = detail::noise_map(std::move(c), noise_var);
  return {p.u.dot(v), p.u.dot(nc * p.u)};
}

/// Expected regularised loss E(f - y)^2 + gamma sum ||M||^p.
inline double full_loss(const ParamSet& p, double gamma, const NetConfig& cfg,
                        const MomentData& data) {
  cfg.validate();
  detail::check_gamma(gamma);
  detail::check_shapes(p, cfg, data.dim());
  const auto fm = forward_moments(p, data, cfg.noise_var);
  return fm.f2 - 2.0 * fm.fy + data.y2() + gamma * detail::reg_value(p, cfg.reg_exponent);
}

/// full_loss and its gradient (written into `grad`, same shapes as p).
inline double full_loss_grad(const ParamSet& p, double gamma, const NetConfig& cfg,
                             const MomentData& data, ParamSet& grad) {
  const Matrix& a0 = data.cov();
  const double s2 = cfg.noise_var;
  const int p_exp = cfg.reg_exponent;
  grad.w.resize(p.w.size());
  if (p.w.empty()) {
    const Vector au = a0 * p.u;
    const double f2 = p.u.dot(au), fy = p.u.dot(data.xy());
    const double sq = p.u.squaredNorm();
    grad.u = 2.0 * au - 2.0 * data.xy() + gamma * detail::reg_grad_scale(sq, p_exp) * p.u;
    return f2 - 2.0 * fy + data.y2() + gamma * detail::reg_value(p, p_exp);
  }
  const std::size_t D = p.w.size();
  // Forward: covariances before the noise map and mean activations.
  std::vector<Matrix> c(D);
  std::vector<Vector> v(D + 1);
  v[0] = data.xy();
  c[0] = p.w[0] * a0 * p.w[0].transpose();
  v[1] = p.w[0] * v[0];
  for (std::size_t k = 1; k < D; ++k) {
    c[k] = p.w[k] * detail::noise_map(c[k - 1], s2) * p.w[k].transpose();
    v[k + 1] = p.w[k] * v[k];
  }
  const Matrix ncd = detail::noise_map(c[D - 1], s2);
  const Vector ncd_u = ncd * p.u;
  const double f2 = p.u.dot(ncd_u);
  const double fy = p.u.dot(v[D]);

  grad.u = 2.0 * ncd_u - 2.0 * v[D];
  // h = d f2 / d C_k, symmetric.
  Matrix h = detail::noise_map(p.u * p.u.transpose(), s2);
  Vector g = p.u;  // d fy / d v_k
  for (std::size_t k = D; k-- > 1;) {
    const Matrix nc_prev = detail::noise_map(c[k - 1], s2);
    grad.w[k] = 2.0 * h * p.w[k] * nc_prev - 2.0 * g * v[k].transpose();
    h = detail::noise_map(p.w[k].transpose() * h * p.w[k], s2);
    g = p.w[k].transpose() * g;
  }
  grad.w[0] = 2.0 * h * p.w[0] * a0 - 2.0 * g * v[0].transpose();

  double reg = 0.0;
  {
    const double sq = p.u.squaredNorm();
    reg += p_exp == 2 ? sq : std::pow(sq, 0.5 * p_exp);
    grad.u += gamma * detail::reg_grad_scale(sq, p_exp) * p.u;
  }
  for (std::size_t k = 0; k < D; ++k) {
    const double sq = p.w[k].squaredNorm();
    reg += p_exp == 2 ? sq : std::pow(sq, 0.5 * p_exp);
    grad.w[k] += gamma * detail::reg_grad_scale(sq, p_exp) * p.w[k];
  }
  return f2 - 2.0 * fy + data.y2() + gamma * reg;
}

/// Point on the global-minimum manifold at order parameter b, with every
/// sign-gauge vector r_i = (1, ..., 1):
///   U = sqrt(d0) b r,  W_i = b r r^T (i >= 2),
///   W_1 = r m^T d0^(D-1/2) b^D [d0^D (sigma^2+d0)^D b^(2D) A0 + gamma]^(-1).
inline ParamSet solution_manifold(double b, double gamma, const NetConfig& cfg,
                                  const MomentData& data) {
  cfg.validate();
  detail::check_gamma(gamma);
  if (cfg.depth < 1) throw InvalidInput("solution_manifold: depth must be >= 1");
  if (!(b >= 0.0)) throw InvalidInput("solution_manifold: b must be >= 0");
  const int D = cfg.depth;
  const double d0 = cfg.width;
  const double k = std::pow(d0 * (cfg.noise_var + d0), D) * std::pow(b, 2 * D);
  Vector inv_m(data.dim());
  for (Eigen::Index i = 0; i < data.dim(); ++i) {
    const double den = k * data.eigvals()[i] + gamma;
    if (den == 0.0) throw InvalidInput("solution_manifold: singular bracket (gamma = 0)");
    inv_m[i] = data.xy_rot()[i] / den;
  }
  const Vector row = data.rotation() * inv_m;  // [.]^(-1) E[xy]
  ParamSet p = ParamSet::zeros(cfg, data.dim());
  p.u = Vector::Constant(cfg.width, std::sqrt(d0) * b);
  const double scale = std::pow(d0, D - 0.5) * std::pow(b, D);
  p.w[0] = Vector::Ones(cfg.width) * (scale * row).transpose();
  for (int i = 1; i < D; ++i) p.w[static_cast<std::size_t>(i)] = Matrix::Constant(cfg.width, cfg.width, b);
  return p;
}

struct MultistartOptions {
  int n_starts = 20;
  std::uint64_t seed = 0;
  double scale_min = 1e-3;
  double scale_max = 1.0;
  DescentOptions descent{};
};

struct MultistartResult {
  ParamSet params;
  double loss = 0.0;
  int converged_starts = 0;
  bool converged = false;  ///< at least one start reached the gradient tolerance
};

/// Gaussian initialisation with entry standard deviation `scale`.
inline ParamSet random_params(const NetConfig& cfg, Eigen::Index input_dim, double scale,
                              std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  ParamSet p = ParamSet::zeros(cfg, input_dim);
  for (Eigen::Index i = 0; i < p.u.size(); ++i) p.u[i] = scale * normal(rng);
  for (auto& m : p.w)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = scale * normal(rng);
  return p;
}

/// Descends full_loss from `n_starts` seeded initialisations with entry
/// scales log-spaced in [scale_min, scale_max], plus any caller-supplied
/// `extra_starts`, and keeps the best terminal point. The returned loss
/// upper-bounds the true minimum.
inline MultistartResult multistart_minimize(double gamma, const NetConfig& cfg,
                                            const MomentData& data,
                                            const MultistartOptions& opt = {},
                                            std::span<const ParamSet> extra_starts = {}) {
  cfg.validate();
  detail::check_gamma(gamma);
  if (opt.n_starts < 1) throw InvalidInput("multistart_minimize: n_starts must be >= 1");
  ParamSet shape = ParamSet::zeros(cfg, data.dim());
  ParamSet grad = shape;
  ParamSet work = shape;
  const Objective fn = [&](const Vector& x, Vector& g) {
    work.unpack(x);
    const double f = full_loss_grad(work, gamma, cfg, data, grad);
    g = grad.pack();
    return f;
  };
  MultistartResult best;
  best.loss = std::numeric_limits<double>::infinity();
  const auto descend = [&](const ParamSet& init) {
    const DescentResult r = gradient_descent(fn, init.pack(), opt.descent);
    if (r.converged) ++best.converged_starts;
    if (r.f < best.loss) {
      best.loss = r.f;
      best.params = shape;
      best.params.unpack(r.x);
    }
  };
  for (int s = 0; s < opt.n_starts; ++s) {
    const double t = opt.n_starts == 1 ? 0.5 : static_cast<double>(s) / (opt.n_starts - 1);
    const double scale = opt.scale_min * std::pow(opt.scale_max / opt.scale_min, t);
    std::seed_seq seq{opt.seed, static_cast<std::uint64_t>(s), std::uint64_t{0x6d756c7469}};
    std::mt19937_64 rng(seq);
    descend(random_params(cfg, data.dim(), scale, rng));
  }
  for (const ParamSet& init : extra_starts) {
    detail::check_shapes(init, cfg, data.dim());
    descend(init);
  }
  best.converged = best.converged_starts > 0;
  return best;
}

/// One row of an order-parameter equivalence check.
struct EquivalenceRow {
  double gamma = 0.0;
  double reduced_loss = 0.0;  ///< minimize_b (ridge closed form for depth 0)
  double oracle_loss = 0.0;   ///< multistart over all parameters
  double gap = 0.0;           ///< |reduced - oracle|
  bool ok = true;
};

struct EquivalenceReport {
  std::vector<EquivalenceRow> rows;
  double tolerance = 0.0;  ///< max(1e-6, 1e-4 y2)
  int violations = 0;
};

/// Certifies min_b lbar(b, gamma) = min_w l(w, gamma) on a gamma grid.
/// Grid points are visited in increasing gamma and each multistart also
/// descends from the previous point's best parameters, which follows the
/// nonzero branch up to its end. Rows are reported in input order.
inline EquivalenceReport verify_equivalence(const std::vector<double>& gammas,
                                            const NetConfig& cfg, const MomentData& data,
                                            const MultistartOptions& opt = {}) {
  cfg.validate();
  EquivalenceReport rep;
  rep.tolerance = std::max(1e-6, 1e-4 * data.y2());
  rep.rows.resize(gammas.size());
  std::vector<std::size_t> order(gammas.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return gammas[a] < gammas[b]; });
  std::vector<ParamSet> carry;
  for (std::size_t idx : order) {
    const double g = gammas[idx];
    EquivalenceRow& row = rep.rows[idx];
    row.gamma = g;
    row.reduced_loss = cfg.depth == 0 ? ridge_loss(g, data).loss : minimize_b(g, cfg, data).loss;
    MultistartResult ms = multistart_minimize(g, cfg, data, opt, carry);
    row.oracle_loss = ms.loss;
    carry.assign(1, std::move(ms.params));
    row.gap = std::abs(row.reduced_loss - row.oracle_loss);
    row.ok = row.gap <= rep.tolerance;
    if (!row.ok) ++rep.violations;
  }
  return rep;
}

}  // namespace ehrenfest
