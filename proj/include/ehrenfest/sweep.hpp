// SPDX-License-Identifier: Apache-2.0
#pragma once

// Regularisation sweeps of the free energy L(gamma) = min_w l(w, gamma),
// finite-difference derivatives, and classification of transitions by the
// lowest discontinuous derivative.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ehrenfest/datastats.hpp"
#include "ehrenfest/error.hpp"
#include "ehrenfest/landscape.hpp"
#include "ehrenfest/oracle.hpp"

namespace ehrenfest {

enum class Engine { landscape, oracle, ridge, trained };

inline const char* to_string(Engine e) {
  switch (e) {
    case Engine::landscape: return "landscape";
    case Engine::oracle: return "oracle";
    case Engine::ridge: return "ridge";
    case Engine::trained: return "trained";
  }
  return "?";
}

inline Engine engine_from_string(const std::string& s) {
  if (s == "landscape") return Engine::landscape;
  if (s == "oracle") return Engine::oracle;
  if (s == "ridge") return Engine::ridge;
  if (s == "trained") return Engine::trained;
  throw ConfigError("unknown engine '" + s + "' (expected landscape, oracle or ridge)");
}

/// Minimiser summary at one regularisation strength.
struct SweepPoint {
  double loss = 0.0;
  double b_star = 0.0;    ///< ||U|| / d0 at the minimiser (||w|| for depth 0)
  double reg_term = 0.0;  ///< gamma * (sum of squared norms) at the minimiser
};

struct SweepRow {
  double gamma = 0.0;
  double loss = 0.0;
  double b_star = 0.0;
  double reg_term = 0.0;
  double d1 = 0.0;  ///< dL/dgamma
  double d2 = 0.0;  ///< d2L/dgamma2
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double h = 0.0;  ///< largest grid spacing
  Engine engine = Engine::landscape;
};

/// Maps gamma to the minimiser summary. Evaluators may keep state (the oracle
/// engine warm-starts from the previous call).
using PointEvaluator = std::function<SweepPoint(double gamma)>;

namespace detail {

/// Fornberg's recursion: weights c[k][j] such that f^(k)(x0) ~= sum_j c[k][j] f(xs[j]),
/// for k = 0..m, on an arbitrary set of distinct nodes.
inline std::vector<std::vector<double>> fd_weights(double x0, const std::vector<double>& xs, int m) {
  const int n = static_cast<int>(xs.size());
  std::vector<std::vector<double>> c(m + 1, std::vector<double>(n, 0.0));
  double c1 = 1.0;
  double c4 = xs[0] - x0;
  c[0][0] = 1.0;
  for (int i = 1; i < n; ++i) {
    const int mn = std::min(i, m);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = xs[i] - x0;
    for (int j = 0; j < i; ++j) {
      const double c3 = xs[i] - xs[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) c[k][i] = c1 * (k * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
        c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
      }
      for (int k = mn; k >= 1; --k) c[k][j] = (c4 * c[k][j] - k * c[k - 1][j]) / c3;
      c[0][j] = c4 * c[0][j] / c3;
    }
    c1 = c2;
  }
  return c;
}

/// Fills d1 and d2: three-point central differences inside, five-point
/// one-sided stencils at the two ends.
inline void fill_derivatives(std::vector<SweepRow>& rows) {
  const std::size_t n = rows.size();
  auto apply = [&](std::size_t at, std::size_t first, std::size_t count) {
    std::vector<double> xs(count);
    for (std::size_t j = 0; j < count; ++j) xs[j] = rows[first + j].gamma;
    const auto w = fd_weights(rows[at].gamma, xs, 2);
    double d1 = 0.0, d2 = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
      d1 += w[1][j] * rows[first + j].loss;
      d2 += w[2][j] * rows[first + j].loss;
    }
    rows[at].d1 = d1;
    rows[at].d2 = d2;
  };
  const std::size_t edge = std::min<std::size_t>(5, n);
  apply(0, 0, edge);
  for (std::size_t j = 1; j + 1 < n; ++j) apply(j, j - 1, 3);
  if (n > 1) apply(n - 1, n - edge, edge);
}

}  // namespace detail

/// Tabulates an evaluator on an increasing grid of at least 9 points.
inline SweepResult tabulate(const std::vector<double>& gammas, const PointEvaluator& eval,
                            Engine engine) {
  if (gammas.size() < 9) throw InvalidInput("sweep: need at least 9 grid points");
  for (std::size_t j = 0; j < gammas.size(); ++j) {
    if (!std::isfinite(gammas[j]) || gammas[j] < 0.0)
      throw InvalidInput("sweep: gamma values must be finite and >= 0");
    if (j > 0 && !(gammas[j] > gammas[j - 1]))
      throw InvalidInput("sweep: gamma grid must be strictly increasing");
  }
  SweepResult out;
  out.engine = engine;
  out.rows.reserve(gammas.size());
  for (double g : gammas) {
    const SweepPoint p = eval(g);
    out.rows.push_back({g, p.loss, p.b_star, p.reg_term, 0.0, 0.0});
  }
  for (std::size_t j = 1; j < gammas.size(); ++j) out.h = std::max(out.h, gammas[j] - gammas[j - 1]);
  detail::fill_derivatives(out.rows);
  return out;
}

/// Builds the evaluator for one of the built-in engines. The oracle engine
/// carries its best parameters from one call to the next as an extra start.
inline PointEvaluator make_evaluator(Engine engine, const NetConfig& cfg, const MomentData& data,
                                     const MultistartOptions& opt = {}) {
  cfg.validate();
  switch (engine) {
    case Engine::landscape:
      if (cfg.depth < 1) throw InvalidInput("engine landscape requires depth >= 1 (use ridge)");
      if (cfg.reg_exponent != 2)
        throw InvalidInput("engine landscape requires reg_exponent 2 (use oracle)");
      return [cfg, data](double g) {
        const BStar r = minimize_b(g, cfg, data);
        return SweepPoint{r.loss, r.b, r.b > 0.0 ? manifold_reg_term(r.b, g, cfg, data) : 0.0};
      };
    case Engine::ridge:
      if (cfg.depth != 0) throw InvalidInput("engine ridge requires depth 0");
      return [data](double g) {
        const RidgeSolution r = ridge_loss(g, data);
        const double n2 = r.weights.squaredNorm();
        return SweepPoint{r.loss, std::sqrt(n2), g * n2};
      };
    case Engine::oracle: {
      auto carry = std::make_shared<std::vector<ParamSet>>();
      return [cfg, data, opt, carry](double g) {
        MultistartResult r = multistart_minimize(g, cfg, data, opt, *carry);
        const SweepPoint p{r.loss, r.params.order_parameter(),
                           g * detail::reg_value(r.params, cfg.reg_exponent)};
        carry->assign(1, std::move(r.params));
        return p;
      };
    }
    case Engine::trained:
      break;
  }
  throw InvalidInput("make_evaluator: engine 'trained' has no built-in evaluator");
}

/// Sweeps L(gamma) with a built-in engine.
inline SweepResult run_sweep(const std::vector<double>& gammas, const NetConfig& cfg,
                             const MomentData& data, Engine engine,
                             const MultistartOptions& opt = {}) {
  return tabulate(gammas, make_evaluator(engine, cfg, data, opt), engine);
}

/// Linear or logarithmic grid with `count` points.
inline std::vector<double> make_grid(double lo, double hi, int count, bool log_spaced) {
  if (count < 2) throw InvalidInput("make_grid: count must be >= 2");
  if (!(hi > lo)) throw InvalidInput("make_grid: need max > min");
  if (log_spaced && !(lo > 0.0)) throw InvalidInput("make_grid: log grid needs min > 0");
  std::vector<double> g(count);
  for (int j = 0; j < count; ++j) {
    const double t = static_cast<double>(j) / (count - 1);
    g[j] = log_spaced ? lo * std::pow(hi / lo, t) : lo + (hi - lo) * t;
  }
  g.back() = hi;
  return g;
}

// ---------------------------------------------------------------------------
// Transition classification

enum class TransitionOrder { none, first, second, zeroth_flagged };

inline const char* to_string(TransitionOrder o) {
  switch (o) {
    case TransitionOrder::none: return "none";
    case TransitionOrder::first: return "first";
    case TransitionOrder::second: return "second";
    case TransitionOrder::zeroth_flagged: return "zeroth-flagged";
  }
  return "?";
}

struct Thresholds {
  double rel = 0.2;               ///< jump / local scale above which a derivative is discontinuous
  double abs = 1e-8;              ///< jumps below this are never significant
  double bracket_width = 1e-4;    ///< bisect the candidate interval down to this width
  int refinements = 2;            ///< stencil halvings a jump must survive
  double monotone_slack = 1e-9;   ///< allowed decrease of L between neighbours (times max(1,|L|))
  double b_zero = 1e-5;           ///< b <= b_zero * max(1, max b) counts as the trivial phase
};

/// One-sided limits at the critical point for one stencil spacing.
struct JumpLevel {
  double h = 0.0;
  double loss_left = 0.0, loss_right = 0.0;
  double d1_left = 0.0, d1_right = 0.0;
  double d2_left = 0.0, d2_right = 0.0;
  double reg_left = 0.0, reg_right = 0.0;
  bool loss_jump = false, d1_jump = false, d2_jump = false;
};

struct TransitionReport {
  TransitionOrder order = TransitionOrder::none;
  double gamma_star = 0.0;
  double gamma_star_halfwidth = 0.0;
  double loss_jump = 0.0;
  double d1_jump = 0.0;
  double d2_jump = 0.0;
  double b_jump = 0.0;  ///< |b*| difference across the final bracket
  double d1_left = 0.0, d1_right = 0.0;
  double d2_left = 0.0, d2_right = 0.0;
  double reg_jump = 0.0;     ///< discontinuity of the regularisation term (latent heat)
  double energy_jump = 0.0;  ///< discontinuity of L minus the regularisation term
  std::optional<double> landau_exponent;
  std::optional<double> landau_exponent_stderr;
  bool coexistence_flag = false;  ///< a nonzero branch and b = 0 meet with a jump in b
  bool b_switch = false;          ///< candidate located by a change of phase in b*
  std::vector<JumpLevel> levels;  ///< finest stencil last
};

namespace detail {

inline void check_monotone(const SweepResult& r, const Thresholds& th) {
  for (std::size_t j = 1; j < r.rows.size(); ++j) {
    const double prev = r.rows[j - 1].loss;
    const double cur = r.rows[j].loss;
    if (!std::isfinite(cur))
      throw CheckFailure("non-finite loss at gamma=" + std::to_string(r.rows[j].gamma));
    if (cur < prev - th.monotone_slack * std::max(1.0, std::abs(prev)))
      throw CheckFailure("free energy decreases between gamma=" + std::to_string(r.rows[j - 1].gamma) +
                         " and gamma=" + std::to_string(r.rows[j].gamma) +
                         "; refusing to classify (engine error upstream)");
  }
}

struct Bracket {
  double lo = 0.0, hi = 0.0;
  SweepPoint plo, phi;
  bool b_switch = false;
};

/// Interval where b* changes phase (largest b change wins); otherwise the
/// interval with the largest change in d2.
inline Bracket candidate_bracket(const SweepResult& r, double zero_tol) {
  const auto& rows = r.rows;
  auto is_zero = [&](double b) { return b <= zero_tol; };
  std::size_t best = rows.size();
  double best_db = -1.0;
  for (std::size_t j = 0; j + 1 < rows.size(); ++j) {
    if (is_zero(rows[j].b_star) == is_zero(rows[j + 1].b_star)) continue;
    const double db = std::abs(rows[j].b_star - rows[j + 1].b_star);
    if (db > best_db) {
      best_db = db;
      best = j;
    }
  }
  Bracket out;
  if (best == rows.size()) {
    double best_dd = -1.0;
    for (std::size_t j = 0; j + 1 < rows.size(); ++j) {
      const double dd = std::abs(rows[j + 1].d2 - rows[j].d2);
      if (dd > best_dd) {
        best_dd = dd;
        best = j;
      }
    }
  } else {
    out.b_switch = true;
  }
  const auto& a = rows[best];
  const auto& b = rows[best + 1];
  out.lo = a.gamma;
  out.hi = b.gamma;
  out.plo = {a.loss, a.b_star, a.reg_term};
  out.phi = {b.loss, b.b_star, b.reg_term};
  return out;
}

/// Zooms a bracket without a phase change in b*: re-grids the bracket and
/// its two neighbours of the same width and keeps the sub-interval with the
/// largest change in the three-point second difference.
inline Bracket zoom_by_curvature(Bracket br, const PointEvaluator& eval, double width,
                                 double grid_lo, double grid_hi) {
  while (br.hi - br.lo > width) {
    const double w = br.hi - br.lo;
    std::vector<double> xs;
    const double lo = std::max(grid_lo, br.lo - w);
    const double hi = std::min(grid_hi, br.hi + w);
    const int n = 13;
    for (int j = 0; j < n; ++j) xs.push_back(lo + (hi - lo) * j / (n - 1));
    std::vector<SweepPoint> ps;
    for (double x : xs) ps.push_back(eval(x));
    std::vector<double> d2(n, 0.0);
    for (int j = 1; j + 1 < n; ++j) {
      const double hh = xs[j + 1] - xs[j];
      d2[j] = (ps[j + 1].loss - 2.0 * ps[j].loss + ps[j - 1].loss) / (hh * hh);
    }
    int best = 1;
    double best_dd = -1.0;
    for (int j = 1; j + 2 < n; ++j) {
      const double dd = std::abs(d2[j + 1] - d2[j]);
      if (dd > best_dd) {
        best_dd = dd;
        best = j;
      }
    }
    br.lo = xs[best];
    br.hi = xs[best + 1];
    br.plo = ps[best];
    br.phi = ps[best + 1];
  }
  return br;
}

inline Bracket bisect_phase(Bracket br, const PointEvaluator& eval, double width, double zero_tol) {
  auto is_zero = [&](double b) { return b <= zero_tol; };
  while (br.hi - br.lo > width) {
    const double mid = 0.5 * (br.lo + br.hi);
    const SweepPoint p = eval(mid);
    if (is_zero(p.b_star) == is_zero(br.plo.b_star)) {
      br.lo = mid;
      br.plo = p;
    } else {
      br.hi = mid;
      br.phi = p;
    }
  }
  return br;
}

struct SideFit {
  double f = 0.0, d1 = 0.0, d2 = 0.0, reg = 0.0;
  double max_abs_f = 0.0, max_abs_d1 = 0.0, max_abs_d2 = 0.0;
};

/// Cubic through four points on one side of the bracket, extrapolated to x0.
inline SideFit one_sided(double x0, double edge, double dir, double h, const SweepPoint& at_edge,
                         const PointEvaluator& eval) {
  std::vector<double> xs(4);
  std::vector<SweepPoint> ps(4);
  xs[0] = edge;
  ps[0] = at_edge;
  for (int k = 1; k < 4; ++k) {
    xs[k] = edge + dir * k * h;
    ps[k] = eval(xs[k]);
  }
  SideFit out;
  const auto w = fd_weights(x0, xs, 2);
  for (int k = 0; k < 4; ++k) {
    out.f += w[0][k] * ps[k].loss;
    out.d1 += w[1][k] * ps[k].loss;
    out.d2 += w[2][k] * ps[k].loss;
    out.reg += w[0][k] * ps[k].reg_term;
  }
  // Magnitudes of L and its derivatives across the stencil set the local scale.
  for (int k = 0; k < 4; ++k) {
    const auto wk = fd_weights(xs[k], xs, 2);
    double d1 = 0.0, d2 = 0.0;
    for (int j = 0; j < 4; ++j) {
      d1 += wk[1][j] * ps[j].loss;
      d2 += wk[2][j] * ps[j].loss;
    }
    out.max_abs_f = std::max(out.max_abs_f, std::abs(ps[k].loss));
    out.max_abs_d1 = std::max(out.max_abs_d1, std::abs(d1));
    out.max_abs_d2 = std::max(out.max_abs_d2, std::abs(d2));
  }
  return out;
}

}  // namespace detail

struct ExponentFit {
  double exponent = 0.0;
  double std_error = 0.0;
  int points = 0;
};

/// Least-squares slope of log v against log t with its standard error.
inline ExponentFit fit_power_law(const std::vector<double>& t, const std::vector<double>& v) {
  if (t.size() != v.size()) throw InvalidInput("fit_power_law: size mismatch");
  const int n = static_cast<int>(t.size());
  if (n < 2) throw InvalidInput("fit_power_law: need at least 2 points");
  std::vector<double> lx(n), ly(n);
  double mx = 0.0, my = 0.0;
  for (int j = 0; j < n; ++j) {
    if (!(t[j] > 0.0) || !(v[j] > 0.0)) throw InvalidInput("fit_power_law: values must be > 0");
    lx[j] = std::log(t[j]);
    ly[j] = std::log(v[j]);
    mx += lx[j];
    my += ly[j];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (int j = 0; j < n; ++j) {
    sxx += (lx[j] - mx) * (lx[j] - mx);
    sxy += (lx[j] - mx) * (ly[j] - my);
  }
  if (sxx == 0.0) throw InvalidInput("fit_power_law: degenerate abscissae");
  ExponentFit out;
  out.exponent = sxy / sxx;
  const double icpt = my - out.exponent * mx;
  double ssr = 0.0;
  for (int j = 0; j < n; ++j) {
    const double e = ly[j] - icpt - out.exponent * lx[j];
    ssr += e * e;
  }
  out.std_error = n > 2 ? std::sqrt(ssr / (n - 2) / sxx) : 0.0;
  out.points = n;
  return out;
}

/// Exponent of b* ~ t^x, t = |gamma - gamma_star|, over rows with b* > 0 and
/// t in [1e-3, 1e-1].
inline ExponentFit fit_landau_exponent(const SweepResult& r, double gamma_star) {
  std::vector<double> t, v;
  for (const auto& row : r.rows) {
    const double dt = std::abs(row.gamma - gamma_star);
    if (row.b_star > 0.0 && dt >= 1e-3 * (1.0 - 1e-12) && dt <= 1e-1 * (1.0 + 1e-12)) {
      t.push_back(dt);
      v.push_back(row.b_star);
    }
  }
  if (t.size() < 10)
    throw InvalidInput("fit_landau_exponent: need >= 10 feature-phase points with t in [1e-3, 1e-1], got " +
                       std::to_string(t.size()));
  return fit_power_law(t, v);
}

/// Classifies the transition with the lowest discontinuous derivative of L.
/// The candidate interval is narrowed with `eval` to thresholds.bracket_width,
/// then one-sided cubic fits at spacings h, h/2, ... extrapolate L, L', L''
/// to the bracket midpoint from each side. A jump counts only when it exceeds
/// thresholds.rel times the local scale at every spacing. A jump in L itself
/// is reported as zeroth-flagged: the loss is continuous at finite depth, so
/// it points at a faulty engine.
inline TransitionReport classify_transition(const SweepResult& r, const PointEvaluator& eval,
                                            const Thresholds& th = {}) {
  if (r.rows.size() < 9) throw InvalidInput("classify_transition: need at least 9 rows");
  detail::check_monotone(r, th);
  double max_b = 0.0;
  for (const auto& row : r.rows) max_b = std::max(max_b, row.b_star);
  const double zero_tol = th.b_zero * std::max(1.0, max_b);

  detail::Bracket br = detail::candidate_bracket(r, zero_tol);
  const double grid_h = br.hi - br.lo;
  br = br.b_switch ? detail::bisect_phase(br, eval, th.bracket_width, zero_tol)
                   : detail::zoom_by_curvature(br, eval, th.bracket_width, r.rows.front().gamma,
                                               r.rows.back().gamma);

  TransitionReport rep;
  rep.b_switch = br.b_switch;
  rep.gamma_star = 0.5 * (br.lo + br.hi);
  rep.gamma_star_halfwidth = 0.5 * (br.hi - br.lo);
  rep.b_jump = std::abs(br.plo.b_star - br.phi.b_star);

  // Stencils reach 3h to the left, so keep them inside gamma >= 0.
  double h = std::max(grid_h / 4.0, 16.0 * th.bracket_width);
  h = std::min(h, br.lo / 3.0);
  bool l_all = true, d1_all = true, d2_all = true;
  for (int level = 0; level <= th.refinements; ++level, h *= 0.5) {
    if (!(h > 0.0)) {
      l_all = d1_all = d2_all = false;
      break;
    }
    const auto left = detail::one_sided(rep.gamma_star, br.lo, -1.0, h, br.plo, eval);
    const auto right = detail::one_sided(rep.gamma_star, br.hi, +1.0, h, br.phi, eval);
    JumpLevel lv;
    lv.h = h;
    lv.loss_left = left.f;
    lv.loss_right = right.f;
    lv.d1_left = left.d1;
    lv.d1_right = right.d1;
    lv.d2_left = left.d2;
    lv.d2_right = right.d2;
    lv.reg_left = left.reg;
    lv.reg_right = right.reg;
    auto significant = [&](double jump, double scale) {
      return jump > th.abs && jump > th.rel * scale;
    };
    lv.loss_jump = significant(std::abs(left.f - right.f), std::max(left.max_abs_f, right.max_abs_f));
    lv.d1_jump = significant(std::abs(left.d1 - right.d1), std::max(left.max_abs_d1, right.max_abs_d1));
    lv.d2_jump = significant(std::abs(left.d2 - right.d2), std::max(left.max_abs_d2, right.max_abs_d2));
    l_all = l_all && lv.loss_jump;
    d1_all = d1_all && lv.d1_jump;
    d2_all = d2_all && lv.d2_jump;
    rep.levels.push_back(lv);
  }
  if (!rep.levels.empty()) {
    const JumpLevel& fin = rep.levels.back();
    rep.loss_jump = std::abs(fin.loss_left - fin.loss_right);
    rep.d1_left = fin.d1_left;
    rep.d1_right = fin.d1_right;
    rep.d2_left = fin.d2_left;
    rep.d2_right = fin.d2_right;
    rep.d1_jump = std::abs(fin.d1_left - fin.d1_right);
    rep.d2_jump = std::abs(fin.d2_left - fin.d2_right);
    rep.reg_jump = std::abs(fin.reg_left - fin.reg_right);
    const double e_left = fin.loss_left - fin.reg_left;
    const double e_right = fin.loss_right - fin.reg_right;
    rep.energy_jump = std::abs(e_left - e_right);
  }
  if (l_all)
    rep.order = TransitionOrder::zeroth_flagged;
  else if (d1_all)
    rep.order = TransitionOrder::first;
  else if (d2_all)
    rep.order = TransitionOrder::second;
  rep.coexistence_flag = rep.order == TransitionOrder::first && br.b_switch;

  if (rep.order == TransitionOrder::second && br.b_switch) {
    // Feature side is where b* is nonzero.
    const double dir = br.plo.b_star > br.phi.b_star ? -1.0 : 1.0;
    SweepResult tail;
    for (int k = 0; k < 16; ++k) {
      const double t = 1e-3 * std::pow(100.0, k / 15.0);
      const double g = rep.gamma_star + dir * t;
      if (g < 0.0) continue;
      const SweepPoint p = eval(g);
      tail.rows.push_back({g, p.loss, p.b_star, p.reg_term, 0.0, 0.0});
    }
    try {
      const ExponentFit fit = fit_landau_exponent(tail, rep.gamma_star);
      rep.landau_exponent = fit.exponent;
      rep.landau_exponent_stderr = fit.std_error;
    } catch (const InvalidInput&) {
      // feature phase narrower than the fitting window
    }
  }
  return rep;
}

/// Classification with the built-in evaluator for the sweep's engine.
inline TransitionReport classify_transition(const SweepResult& r, const NetConfig& cfg,
                                            const MomentData& data, const Thresholds& th = {},
                                            const MultistartOptions& opt = {}) {
  return classify_transition(r, make_evaluator(r.engine, cfg, data, opt), th);
}

/// Discontinuity of the regularisation term at the classified transition.
inline double latent_heat(const TransitionReport& rep) {
  return rep.order == TransitionOrder::first || rep.order == TransitionOrder::zeroth_flagged
             ? rep.reg_jump
             : 0.0;
}

inline double latent_heat(const SweepResult& r, const PointEvaluator& eval, const Thresholds& th = {}) {
  return latent_heat(classify_transition(r, eval, th));
}

/// Depth-1 curvature at the critical point: the numerical one-sided values
/// next to the closed forms. `discrepancy` is set when the closed form
/// -d0/(sigma^2+d0) E0^2/E1^2 differs from the numerical left value by more
/// than 5%.
struct CurvatureCheck {
  double numeric_left = 0.0;
  double numeric_right = 0.0;
  double formula_left = 0.0;    ///< second_derivative_left_formula
  double expansion_left = 0.0;  ///< 2 d0 beta1
  bool discrepancy = false;
};

inline CurvatureCheck check_curvature(const TransitionReport& rep, const NetConfig& cfg,
                                      const MomentData& data) {
  CurvatureCheck out;
  // Left of gamma* is the feature phase at depth 1.
  out.numeric_left = rep.d2_left;
  out.numeric_right = rep.d2_right;
  out.formula_left = second_derivative_left_formula(cfg, data);
  out.expansion_left = second_derivative_left_expansion(cfg, data);
  out.discrepancy =
      std::abs(out.numeric_left - out.formula_left) > 0.05 * std::abs(out.formula_left);
  return out;
}

// ---------------------------------------------------------------------------
// Derivative identity and depth scans

/// Compares the numerical L' with d/dgamma of the effective loss at b*
/// (L'(gamma) = X sum m_i^2/den_i^2 + D d0^2 b*^2) on rows whose five-point
/// neighbourhood stays in one phase.
struct DerivativeIdentityReport {
  int checked = 0;
  int violations = 0;
  double max_rel_error = 0.0;
  double worst_gamma = 0.0;
};

inline DerivativeIdentityReport check_derivative_identity(const SweepResult& r, const NetConfig& cfg,
                                                          const MomentData& data,
                                                          double rel_tol = 0.01) {
  DerivativeIdentityReport out;
  const auto& rows = r.rows;
  auto phase = [](const SweepRow& row) { return row.b_star > 0.0; };
  for (std::size_t j = 2; j + 2 < rows.size(); ++j) {
    bool stable = true;
    for (std::size_t k = j - 2; k <= j + 2; ++k) stable = stable && phase(rows[k]) == phase(rows[j]);
    if (!stable) continue;
    const double expr = effective_loss_dgamma(rows[j].b_star, rows[j].gamma, cfg, data);
    const double err = std::abs(rows[j].d1 - expr);
    const double scale = std::max(std::abs(rows[j].d1), 1e-6);
    const double rel = err / scale;
    ++out.checked;
    if (rel > rel_tol) ++out.violations;
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_gamma = rows[j].gamma;
    }
  }
  return out;
}

struct DepthRow {
  int depth = 0;
  double loss = 0.0;
  double b_star = 0.0;
};

/// Minimum of the effective loss for each depth at fixed gamma.
inline std::vector<DepthRow> depth_scan(double gamma, const std::vector<int>& depths,
                                        const NetConfig& tmpl, const MomentData& data) {
  std::vector<DepthRow> out;
  out.reserve(depths.size());
  for (int D : depths) {
    NetConfig cfg = tmpl;
    cfg.depth = D;
    if (D == 0) {
      const RidgeSolution r = ridge_loss(gamma, data);
      out.push_back({D, r.loss, r.weights.norm()});
    } else {
      const BStar r = minimize_b(gamma, cfg, data);
      out.push_back({D, r.loss, r.b});
    }
  }
  return out;
}

}  // namespace ehrenfest
