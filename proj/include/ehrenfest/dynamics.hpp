// SPDX-License-Identifier: Apache-2.0
#pragma once

// Langevin training of the full network, the experiments built on it, and a
// sample-based tanh network.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "ehrenfest/datastats.hpp"
#include "ehrenfest/error.hpp"
#include "ehrenfest/landscape.hpp"
#include "ehrenfest/optimize.hpp"
#include "ehrenfest/oracle.hpp"
#include "ehrenfest/sweep.hpp"

namespace ehrenfest {

struct TrainerConfig {
  double step_size = 1e-3;  ///< eta
  double noise_temp = 0.0;  ///< T in sqrt(2 T eta) xi
  long steps = 10000;
  double init_scale = 0.0;  ///< s, entry standard deviation at initialisation
  std::uint64_t seed = 0;
  bool sample_noise = false;  ///< draw neuron noise per step instead of using the expectation
  long record_every = 10;
  bool record_log = false;  ///< also record 20 log-spaced steps per decade
  double grad_tol = 1e-8;  ///< noise-free runs stop once ||grad||_inf <= grad_tol
  int n_samples = 512;     ///< sample-set size for the tanh network
  std::uint64_t sample_seed = 0;

  void validate() const {
    if (!(step_size > 0.0) || !std::isfinite(step_size))
      throw InvalidInput("TrainerConfig: step_size must be > 0");
    if (!(noise_temp >= 0.0) || !std::isfinite(noise_temp))
      throw InvalidInput("TrainerConfig: noise_temp must be >= 0");
    if (steps < 1) throw InvalidInput("TrainerConfig: steps must be >= 1");
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale))
      throw InvalidInput("TrainerConfig: init_scale must be >= 0");
    if (record_every < 1) throw InvalidInput("TrainerConfig: record_every must be >= 1");
    if (n_samples < 2) throw InvalidInput("TrainerConfig: n_samples must be >= 2");
  }
};

struct TrajectoryRow {
  long step = 0;
  double loss = 0.0;
  double b = 0.0;
  double b_corrected = 0.0;  ///< b - diff_const * sqrt(step)
};

struct Trajectory {
  std::vector<TrajectoryRow> rows;
  ParamSet final_params;
  double diff_const = 0.0;
  bool converged = false;  ///< noise-free run reached grad_tol
  bool diverged = false;   ///< loss exceeded 1e6 * max(y2, 1) or became non-finite
};

// ---------------------------------------------------------------------------
// Sample-based network (tanh)

/// Samples whose empirical moments equal the given ones exactly: columns of
/// a scaled orthonormal basis are mapped through A0^(1/2) and the label gets
/// the regression part plus an orthogonal residual.
struct SampleSet {
  Matrix x;  ///< d x n
  Vector y;  ///< n
};

inline SampleSet synthesize_samples(const MomentData& data, int n, std::uint64_t seed) {
  const Eigen::Index d = data.dim();
  if (n < d + 1) throw InvalidInput("synthesize_samples: need n >= dim + 1 samples");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Matrix g(n, d + 1);
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = normal(rng);
  const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(n, d + 1);
  const Matrix z = std::sqrt(static_cast<double>(n)) * q;  // z^T z / n = I

  // Regression coefficients in the eigenbasis: w_i = m_i / a_i on a_i > 0.
  Vector w_rot = Vector::Zero(d);
  double explained = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double a = data.eigvals()[i];
    if (a > 0.0) {
      w_rot[i] = data.xy_rot()[i] / a;
      explained += data.xy_rot()[i] * w_rot[i];
    }
  }
  const double resid = std::sqrt(std::max(0.0, data.y2() - explained));
  SampleSet s;
  const Vector root = data.eigvals().cwiseSqrt();
  const Matrix x_rot = root.asDiagonal() * z.leftCols(d).transpose();  // d x n
  s.x = data.rotation() * x_rot;
  s.y = x_rot.transpose() * w_rot + resid * z.col(d);
  return s;
}

/// Mean squared error of the sample network plus the regulariser, with the
/// gradient written into `grad` when non-null. Hidden layers apply tanh when
/// cfg.activation is tanh and are linear otherwise.
inline double sample_loss_grad(const ParamSet& p, double gamma, const NetConfig& cfg,
                               const SampleSet& s, ParamSet* grad) {
  const Eigen::Index n = s.x.cols();
  const int D = cfg.depth;
  const bool nonlinear = cfg.activation == Activation::tanh;
  std::vector<Matrix> h;
  h.reserve(D + 1);
  h.push_back(s.x);
  for (int k = 0; k < D; ++k) {
    Matrix z = p.w[k] * h.back();
    if (nonlinear) z = z.array().tanh().matrix();
    h.push_back(std::move(z));
  }
  const Eigen::RowVectorXd f = p.u.transpose() * h.back();
  const Eigen::RowVectorXd r = f - s.y.transpose();
  const double mse = r.squaredNorm() / n;
  const double loss = mse + gamma * detail::reg_value(p, cfg.reg_exponent);
  if (grad == nullptr) return loss;

  const Eigen::RowVectorXd dr = (2.0 / n) * r;
  grad->u = h.back() * dr.transpose();
  grad->w.resize(D);
  Matrix back = p.u * dr;  // d(loss)/d(h_D)
  for (int k = D - 1; k >= 0; --k) {
    if (nonlinear) back = back.array() * (1.0 - h[k + 1].array().square());
    grad->w[k] = back * h[k].transpose();
    if (k > 0) back = p.w[k].transpose() * back;
  }
  const int pe = cfg.reg_exponent;
  grad->u += gamma * detail::reg_grad_scale(p.u.squaredNorm(), pe) * p.u;
  for (int k = 0; k < D; ++k)
    grad->w[k] += gamma * detail::reg_grad_scale(p.w[k].squaredNorm(), pe) * p.w[k];
  return loss;
}

namespace detail {

inline void check_trainable(const NetConfig& cfg) {
  cfg.validate();
  if (cfg.activation == Activation::tanh && cfg.noise_var != 0.0)
    throw InvalidInput("tanh networks are trained on samples and require noise_var = 0");
}

/// Expected-loss gradient for one draw of the neuron noise: each hidden
/// layer's output is scaled by eps ~ N(1, sigma^2).
inline double sampled_noise_grad(const ParamSet& p, double gamma, const NetConfig& cfg,
                                 const MomentData& data, std::mt19937_64& rng, ParamSet& grad,
                                 ParamSet& scratch) {
  std::normal_distribution<double> normal(1.0, std::sqrt(cfg.noise_var));
  NetConfig plain = cfg;
  plain.noise_var = 0.0;
  scratch = p;
  std::vector<Vector> eps(cfg.depth);
  for (int k = 0; k < cfg.depth; ++k) {
    eps[k].resize(cfg.width);
    for (int i = 0; i < cfg.width; ++i) eps[k][i] = normal(rng);
    scratch.w[k] = eps[k].asDiagonal() * p.w[k];
  }
  const double loss = full_loss_grad(scratch, 0.0, plain, data, grad);
  const int pe = cfg.reg_exponent;
  grad.u += gamma * reg_grad_scale(p.u.squaredNorm(), pe) * p.u;
  for (int k = 0; k < cfg.depth; ++k) {
    grad.w[k] = eps[k].asDiagonal() * grad.w[k];
    grad.w[k] += gamma * reg_grad_scale(p.w[k].squaredNorm(), pe) * p.w[k];
  }
  return loss;
}

inline double max_abs(const ParamSet& g) {
  double m = g.u.size() ? g.u.cwiseAbs().maxCoeff() : 0.0;
  for (const auto& w : g.w)
    if (w.size()) m = std::max(m, w.cwiseAbs().maxCoeff());
  return m;
}

inline void add_noise(ParamSet& p, double amp, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  for (Eigen::Index i = 0; i < p.u.size(); ++i) p.u[i] += amp * normal(rng);
  for (auto& w : p.w)
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) += amp * normal(rng);
}

}  // namespace detail

/// Langevin training: w <- w - eta grad + sqrt(2 T eta) xi from a seeded
/// Gaussian initialisation of scale s. Linear networks use the analytic
/// expected loss (or one noise draw per step with sample_noise); tanh
/// networks use a fixed sample set with exactly matching moments. The
/// recorded loss is always the objective being trained, not a noise draw.
inline Trajectory train(const TrainerConfig& tcfg, const NetConfig& cfg, double gamma,
                        const MomentData& data, double diff_const = 0.0) {
  tcfg.validate();
  detail::check_trainable(cfg);
  detail::check_gamma(gamma);
  const bool samples = cfg.activation == Activation::tanh;
  if (samples && tcfg.sample_noise)
    throw InvalidInput("train: sample_noise is only available for linear networks");
  SampleSet set;
  if (samples) set = synthesize_samples(data, tcfg.n_samples, tcfg.sample_seed);

  std::seed_seq seq{tcfg.seed, std::uint64_t{0x6c616e67}};
  std::mt19937_64 rng(seq);
  ParamSet p = random_params(cfg, data.dim(), tcfg.init_scale, rng);
  ParamSet grad = p, scratch = p;

  auto objective = [&](const ParamSet& q, ParamSet& g) {
    return samples ? sample_loss_grad(q, gamma, cfg, set, &g) : full_loss_grad(q, gamma, cfg, data, g);
  };

  Trajectory tr;
  tr.diff_const = diff_const;
  const double amp = std::sqrt(2.0 * tcfg.noise_temp * tcfg.step_size);
  const double blowup = 1e6 * std::max(1.0, data.y2());
  auto record = [&](long step, double loss) {
    const double b = p.order_parameter();
    tr.rows.push_back({step, loss, b, b - diff_const * std::sqrt(static_cast<double>(step))});
  };
  double next_log = 1.0;
  const double log_ratio = std::pow(10.0, 0.05);
  for (long step = 0;; ++step) {
    double loss = objective(p, grad);
    if (!std::isfinite(loss) || loss > blowup || !p.all_finite()) {
      record(step, loss);
      tr.diverged = true;
      break;
    }
    const bool done = step == tcfg.steps;
    const bool still = tcfg.noise_temp == 0.0 && detail::max_abs(grad) <= tcfg.grad_tol;
    bool on_log = false;
    if (tcfg.record_log && static_cast<double>(step) >= next_log) {
      on_log = true;
      while (next_log <= static_cast<double>(step)) next_log *= log_ratio;
    }
    if (step % tcfg.record_every == 0 || on_log || done || still) record(step, loss);
    if (still) {
      tr.converged = true;
      break;
    }
    if (done) break;
    if (tcfg.sample_noise && cfg.noise_var > 0.0)
      detail::sampled_noise_grad(p, gamma, cfg, data, rng, grad, scratch);
    p.u -= tcfg.step_size * grad.u;
    for (std::size_t k = 0; k < p.w.size(); ++k) p.w[k] -= tcfg.step_size * grad.w[k];
    if (amp > 0.0) detail::add_noise(p, amp, rng);
  }
  tr.final_params = std::move(p);
  return tr;
}

/// Largest rise of the loss above its value at step 0, clamped at 0.
inline double barrier_height(const Trajectory& tr) {
  if (tr.rows.empty()) return 0.0;
  double rise = 0.0;
  for (const auto& row : tr.rows) rise = std::max(rise, row.loss - tr.rows.front().loss);
  return rise;
}

/// Slope of b against sqrt(step) for pure parameter noise (no gradient) from
/// the origin, by least squares through the origin over the first quartile
/// of recorded steps. Only the last layer enters b, so only it is simulated;
/// its noise sequence is seeded from tcfg.seed.
inline double estimate_diffusion_const(const TrainerConfig& tcfg, const NetConfig& cfg) {
  tcfg.validate();
  cfg.validate();
  if (tcfg.noise_temp == 0.0) return 0.0;
  std::seed_seq seq{tcfg.seed, std::uint64_t{0x6e756c6c}};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal;
  const double amp = std::sqrt(2.0 * tcfg.noise_temp * tcfg.step_size);
  const double norm = cfg.depth == 0 ? 1.0 : static_cast<double>(cfg.width);
  Vector u = Vector::Zero(cfg.width);
  const long last = std::max<long>(tcfg.record_every, tcfg.steps / 4);
  double num = 0.0, den = 0.0;
  for (long step = 1; step <= last; ++step) {
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] += amp * normal(rng);
    if (step % tcfg.record_every != 0) continue;
    const double rt = std::sqrt(static_cast<double>(step));
    num += (u.norm() / norm) * rt;
    den += rt * rt;
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Power-law exponent of b against step over recorded steps in
/// [step_min, step_max], using the first recorded step at or after each of
/// ten log-spaced targets per decade so that every decade weighs the same.
inline ExponentFit early_time_exponent(const Trajectory& tr, long step_min, long step_max) {
  if (step_min < 1 || step_max <= step_min)
    throw InvalidInput("early_time_exponent: need 1 <= step_min < step_max");
  std::vector<double> t, v;
  const double decades = std::log10(static_cast<double>(step_max) / step_min);
  const int targets = std::max(2, static_cast<int>(std::ceil(10.0 * decades)) + 1);
  std::size_t at = 0;
  long last = -1;
  for (int k = 0; k < targets; ++k) {
    const double target = step_min * std::pow(10.0, decades * k / (targets - 1));
    while (at < tr.rows.size() && static_cast<double>(tr.rows[at].step) < target * (1.0 - 1e-12)) ++at;
    if (at == tr.rows.size() || tr.rows[at].step > step_max) break;
    const auto& row = tr.rows[at];
    if (row.step == last || !(row.b > 0.0)) continue;
    last = row.step;
    t.push_back(static_cast<double>(row.step));
    v.push_back(row.b);
  }
  return fit_power_law(t, v);
}

// ---------------------------------------------------------------------------
// Experiments

struct InitSensitivityRow {
  double gamma = 0.0;
  double loss_small = 0.0;  ///< from the smaller initialisation scale
  double loss_large = 0.0;
  bool converged_small = false;
  bool converged_large = false;
  double gap = 0.0;        ///< |loss_small - loss_large|
  bool entrapped = false;  ///< gap > tolerance: one run stopped in a local minimum
};

/// Noise-free training from two initialisation scales at each gamma.
inline std::vector<InitSensitivityRow> init_sensitivity(const TrainerConfig& small,
                                                        const TrainerConfig& large,
                                                        const NetConfig& cfg,
                                                        const std::vector<double>& gammas,
                                                        const MomentData& data, double tolerance) {
  if (small.noise_temp != 0.0 || large.noise_temp != 0.0)
    throw InvalidInput("init_sensitivity: runs must be noise-free");
  std::vector<InitSensitivityRow> out;
  for (double g : gammas) {
    const Trajectory a = train(small, cfg, g, data);
    const Trajectory b = train(large, cfg, g, data);
    InitSensitivityRow row;
    row.gamma = g;
    row.loss_small = a.rows.back().loss;
    row.loss_large = b.rows.back().loss;
    row.converged_small = a.converged;
    row.converged_large = b.converged;
    row.gap = std::abs(row.loss_small - row.loss_large);
    row.entrapped = row.gap > tolerance;
    out.push_back(row);
  }
  return out;
}

/// Oracle sweep for a regulariser gamma sum ||M||^p; the effective landscape
/// is only exact for p = 2.
inline SweepResult reg_exponent_experiment(const NetConfig& cfg, const std::vector<double>& gammas,
                                           const MomentData& data,
                                           const MultistartOptions& opt = {}) {
  return run_sweep(gammas, cfg, data, Engine::oracle, opt);
}

struct TanhSweepOptions {
  std::vector<double> init_scales{0.01, 0.3, 1.0};
  double input_scale = 1.0;  ///< inputs and labels are multiplied by this
  int n_samples = 512;
  std::uint64_t sample_seed = 0;
  std::uint64_t seed = 0;
  DescentOptions descent{1e-8, 20000};
};

/// Minimum trained loss over several initialisation scales. With input scale
/// c the network is trained on (c x, c y) at c^2 gamma; loss and reg_term are
/// divided by c^2 so that the result is comparable with the unscaled sweep
/// of a linear network.
inline PointEvaluator make_sample_evaluator(const NetConfig& cfg, const MomentData& data,
                                            const TanhSweepOptions& opt = {}) {
  detail::check_trainable(cfg);
  if (opt.init_scales.empty()) throw InvalidInput("sample sweep: need at least one init scale");
  if (!(opt.input_scale > 0.0)) throw InvalidInput("sample sweep: input_scale must be > 0");
  SampleSet set = synthesize_samples(data, opt.n_samples, opt.sample_seed);
  const double c = opt.input_scale;
  set.x *= c;
  set.y *= c;
  const double c2 = c * c;
  const Eigen::Index d = data.dim();
  return [cfg, opt, set, c2, d](double g) {
    ParamSet shape = ParamSet::zeros(cfg, d);
    ParamSet work = shape, grad = shape;
    const double gs = g * c2;
    const Objective fn = [&](const Vector& x, Vector& gv) {
      work.unpack(x);
      const double f = sample_loss_grad(work, gs, cfg, set, &grad);
      gv = grad.pack();
      return f;
    };
    DescentOptions descent = opt.descent;
    descent.grad_tol *= c2;  // the scaled objective is c^2 times the unscaled one
    double best = std::numeric_limits<double>::infinity();
    ParamSet best_p = shape;
    for (std::size_t k = 0; k < opt.init_scales.size(); ++k) {
      std::seed_seq seq{opt.seed, static_cast<std::uint64_t>(k), std::uint64_t{0x74616e68}};
      std::mt19937_64 rng(seq);
      const ParamSet init = random_params(cfg, d, opt.init_scales[k], rng);
      const DescentResult r = gradient_descent(fn, init.pack(), descent);
      if (r.f < best) {
        best = r.f;
        best_p.unpack(r.x);
      }
    }
    return SweepPoint{best / c2, best_p.order_parameter(),
                      gs * detail::reg_value(best_p, cfg.reg_exponent) / c2};
  };
}

inline SweepResult tanh_sweep(const NetConfig& cfg, const std::vector<double>& gammas,
                              const MomentData& data, const TanhSweepOptions& opt = {}) {
  return tabulate(gammas, make_sample_evaluator(cfg, data, opt), Engine::trained);
}

}  // namespace ehrenfest
