// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ehrenfest/ehrenfest.hpp"

using namespace ehrenfest;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

NetConfig net(int depth, int width = 1, double noise = 0.0) {
  NetConfig c;
  c.depth = depth;
  c.width = width;
  c.noise_var = noise;
  return c;
}

MomentData i1() { return make_synthetic(vec({1.0}), vec({0.5}), 1.0, 0); }
MomentData i1_scaled() { return make_synthetic(vec({2.0}), vec({0.5}), 1.0, 0); }
MomentData d3() { return make_synthetic(vec({1.5, 0.7, 0.2}), vec({1.0, -0.6, 0.3}), 3.0, 7); }

/// Spectrum in [lo, hi], signal in [-1, 1]^d, y2 at 1.5x the feasibility floor.
MomentData random_instance(int dim, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> a_dist(lo, hi), m_dist(-1.0, 1.0);
  Vector a(dim), m(dim);
  for (int i = 0; i < dim; ++i) {
    a[i] = a_dist(rng);
    m[i] = m_dist(rng);
  }
  const double floor = (m.array().square() / a.array()).sum();
  return make_synthetic(a, m, 1.5 * floor + 0.1, rng());
}

std::vector<MomentData> random_d4() {
  std::vector<MomentData> out;
  for (std::uint64_t s = 0; s < 5; ++s) out.push_back(random_instance(4, 0.5, 2.0, 400 + s));
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Verdict ridge_exactness() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  double worst_min = 0.0, worst_l = 0.0, worst_d1 = 0.0, worst_d2 = 0.0;
  const auto grid = make_grid(0.5, 1.5, 4001, false);
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 pick(100 + s);
    const int dim = std::uniform_int_distribution<int>(1, 8)(pick);
    const auto d = random_instance(dim, 0.5, 2.0, 100 + s);
    for (double g : {0.0, 0.1, 1.0}) {
      const double gap = std::abs(ridge_loss(g, d).loss - multistart_minimize(g, net(0), d).loss);
      worst_min = std::max(worst_min, gap);
    }
    const auto r = run_sweep(grid, net(0), d, Engine::ridge);
    for (const auto& row : r.rows) {
      worst_l = std::max(worst_l, std::abs(row.loss - ridge_loss(row.gamma, d).loss));
      worst_d1 = std::max(worst_d1, std::abs(row.d1 - ridge_loss_derivative(row.gamma, d, 1)));
      worst_d2 = std::max(worst_d2, std::abs(row.d2 - ridge_loss_derivative(row.gamma, d, 2)));
    }
  }
  const double secs = seconds_since(t0);
  v.detail << "max |ridge - multistart| = " << worst_min << ", max err L/L'/L'' = " << worst_l << "/"
           << worst_d1 << "/" << worst_d2 << ", " << secs << " s";
  v.require(worst_min <= 1e-8, "multistart gap <= 1e-8");
  v.require(worst_l <= 1e-6 && worst_d1 <= 1e-6 && worst_d2 <= 1e-6, "derivatives within 1e-6");
  v.require(secs < 5.0, "runtime < 5 s");
  return v;
}

Verdict order_parameter_reduction() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<MomentData> instances{i1(), d3(), random_instance(4, 0.5, 2.0, 77)};
  const auto grid = make_grid(0.02, 1.0, 10, false);
  int runs = 0, violations = 0;
  double worst = 0.0;
  for (int D : {1, 2, 3})
    for (int d0 : {1, 2, 4})
      for (double s2 : {0.0, 0.5})
        for (const auto& d : instances) {
          const auto rep = verify_equivalence(grid, net(D, d0, s2), d);
          ++runs;
          violations += rep.violations;
          for (const auto& row : rep.rows) worst = std::max(worst, row.gap / rep.tolerance);
        }
  const double secs = seconds_since(t0);
  v.detail << runs << " configurations x 10 gamma, violations = " << violations
           << ", worst gap/tolerance = " << worst << ", " << secs << " s";
  v.require(violations == 0, "no violations");
  v.require(secs < 120.0, "runtime < 2 min");
  return v;
}

struct DepthOneRun {
  std::string name;
  MomentData data;
  TransitionReport rep;
  SweepResult sweep;
};

std::vector<DepthOneRun> depth_one_runs() {
  std::vector<DepthOneRun> out;
  auto add = [&](const std::string& name, const MomentData& d) {
    const double e0 = signal_norms(d).e0;
    auto r = run_sweep(make_grid(0.1 * e0, 2.0 * e0, 96, false), net(1), d, Engine::landscape);
    auto rep = classify_transition(r, net(1), d);
    out.push_back({name, d, rep, std::move(r)});
  };
  add("I1", i1());
  int k = 0;
  for (const auto& d : random_d4()) add("random d=4 #" + std::to_string(k++), d);
  return out;
}

Verdict depth_one_critical_point(const std::vector<DepthOneRun>& runs) {
  Verdict v;
  for (const auto& run : runs) {
    const double e0 = signal_norms(run.data).e0;
    const double rel = std::abs(run.rep.gamma_star - e0) / e0;
    v.detail << run.name << ": " << to_string(run.rep.order) << " at " << run.rep.gamma_star << " (E0 " << e0
             << "); ";
    v.require(run.rep.order == TransitionOrder::second, run.name + " order second");
    v.require(rel <= 0.01, run.name + " gamma* within 1%");
  }
  return v;
}

Verdict depth_one_landau_slope() {
  Verdict v;
  const std::pair<const char*, MomentData> cases[] = {{"I1", i1()}, {"eigvals=[2]", i1_scaled()}};
  for (const auto& [name, d] : cases) {
    const auto lc = landau_coefficients(net(1), d);
    std::vector<double> x, y;
    for (int k = 0; k < 21; ++k) {
      const double delta = -1e-4 * std::pow(100.0, k / 20.0);
      const auto r = minimize_b(lc.gamma_star + delta, net(1), d);
      x.push_back(delta);
      y.push_back(r.b * r.b);
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i] / x.size(), my += y[i] / x.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double slope = sxy / sxx;
    v.detail << name << ": slope " << slope << " vs beta1 " << lc.beta1 << "; ";
    v.require(std::abs(slope - lc.beta1) <= 0.02 * std::abs(lc.beta1), std::string(name) + " within 2%");
  }
  return v;
}

Verdict depth_one_exponent(const std::vector<DepthOneRun>& runs) {
  Verdict v;
  for (const auto& run : runs) {
    if (!run.rep.landau_exponent) {
      v.require(false, run.name + " exponent available");
      continue;
    }
    const double x = *run.rep.landau_exponent;
    v.detail << run.name << ": " << x << "; ";
    v.require(std::abs(x - 0.5) <= 0.05, run.name + " exponent 0.5 +- 0.05");
  }
  return v;
}

Verdict second_derivative_jump(const std::vector<DepthOneRun>& runs) {
  Verdict v;
  const auto& run = runs.front();
  const auto cc = check_curvature(run.rep, net(1), run.data);
  v.detail << "L''_left = " << cc.numeric_left << ", L''_right = " << cc.numeric_right
           << ", closed form = " << cc.formula_left << ", expansion = " << cc.expansion_left
           << ", discrepancy flag = " << (cc.discrepancy ? "set" : "clear");
  v.require(std::abs(cc.numeric_left + 2.0) <= 0.1, "L''_left = -2 +- 5%");
  v.require(std::abs(cc.numeric_right) <= 1e-6, "L''_right = 0 +- 1e-6");
  v.require(std::abs(cc.formula_left + 1.0) <= 1e-12, "closed form emitted as -1");
  v.require(cc.discrepancy, "discrepancy flagged");
  return v;
}

Verdict depth_two_first_order() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = d3();
  const auto c = net(2, 2, 0.5);
  const auto r = run_sweep(make_grid(0.02, 1.0, 50, false), c, d, Engine::landscape);
  const auto rep = classify_transition(r, c, d);
  const double bound = bstar_bounds(rep.gamma_star, c, d).lower;
  // continuity: |L(g*+h) - L(g*-h)| must shrink with h, and no level flags a jump in L
  bool levels_ok = rep.levels.size() == 3;
  for (const auto& lv : rep.levels) levels_ok = levels_ok && !lv.loss_jump;
  auto gap = [&](double h) {
    return std::abs(minimize_b(rep.gamma_star + h, c, d).loss - minimize_b(rep.gamma_star - h, c, d).loss);
  };
  const double h = r.h;
  const double g0 = gap(h), g1 = gap(h / 2), g2 = gap(h / 4);
  const double secs = seconds_since(t0);
  v.detail << to_string(rep.order) << " at " << rep.gamma_star << ", b jump " << rep.b_jump << " >= " << bound
           << ", latent heat " << latent_heat(rep) << ", L gaps " << g0 << " / " << g1 << " / " << g2 << ", "
           << secs << " s";
  v.require(rep.order == TransitionOrder::first, "order first");
  v.require(rep.b_jump >= bound, "b jump bound");
  v.require(latent_heat(rep) > 0.0, "latent heat > 0");
  v.require(levels_ok && g1 <= 0.6 * g0 && g2 <= 0.6 * g1, "L continuous under two refinements");
  v.require(secs < 60.0, "runtime < 1 min");
  return v;
}

Verdict derivative_identity(const std::vector<DepthOneRun>& runs) {
  Verdict v;
  int checked = 0, violations = 0;
  double worst = 0.0;
  auto add = [&](const SweepResult& r, const NetConfig& c, const MomentData& d) {
    const auto id = check_derivative_identity(r, c, d);
    checked += id.checked;
    violations += id.violations;
    worst = std::max(worst, id.max_rel_error);
  };
  for (const auto& run : runs) add(run.sweep, net(1), run.data);
  for (int D : {2, 3}) {
    const auto c = net(D, 2, 0.5);
    add(run_sweep(make_grid(0.02, 1.0, 50, false), c, d3(), Engine::landscape), c, d3());
  }
  v.detail << checked << " grid points, violations = " << violations << ", worst relative error = " << worst;
  v.require(checked > 0 && violations == 0, "identity within 1%");
  return v;
}

Verdict depth_scan_limit() {
  Verdict v;
  const auto d = make_synthetic(vec({1.0}), vec({std::sqrt(0.9)}), 1.0, 0);
  std::vector<int> depths;
  for (int D = 1; D <= 20; ++D) depths.push_back(D);
  const auto tmpl = net(1, 4, 1.0);
  const auto rows = depth_scan(0.1, depths, tmpl, d);
  bool monotone = true;
  for (std::size_t k = 1; k < rows.size(); ++k) monotone = monotone && rows[k].loss >= rows[k - 1].loss;
  const double gap = d.y2() - rows.back().loss;
  double margin = d.y2();
  for (const auto& row : depth_scan(0.0, depths, tmpl, d)) margin = std::min(margin, d.y2() - row.loss);
  v.detail << "monotone = " << (monotone ? "yes" : "no") << ", y2 - L(20) = " << gap
           << ", min margin at gamma=0 = " << margin;
  v.require(monotone, "nondecreasing in depth");
  v.require(gap <= 0.01 * d.y2(), "y2 - L(20) <= 0.01 y2");
  v.require(margin > 1e-3, "gamma=0 margin > 1e-3");
  return v;
}

Verdict quartic_regulariser() {
  Verdict v;
  const auto d = d3();
  NetConfig c = net(2, 2, 0.5);
  const auto grid = make_grid(0.01, 10.0, 25, true);
  c.reg_exponent = 4;
  const auto r4 = reg_exponent_experiment(c, grid, d);
  double min_b = std::numeric_limits<double>::infinity();
  for (const auto& row : r4.rows) min_b = std::min(min_b, row.b_star);
  c.reg_exponent = 2;
  const auto r2 = run_sweep(grid, c, d, Engine::landscape);
  int trivial = 0;
  for (const auto& row : r2.rows) trivial += row.b_star == 0.0 ? 1 : 0;
  v.detail << "p=4 min b* = " << min_b << ", p=2 trivial points = " << trivial << "/" << r2.rows.size();
  v.require(min_b > 1e-3, "p=4 b* > 1e-3 everywhere");
  v.require(trivial > 0, "p=2 has a trivial phase");
  return v;
}

Verdict dynamics_phenomenology() {
  Verdict v;
  const auto d = d3();
  TrainerConfig t;
  t.step_size = 1e-5;
  t.noise_temp = 3e-4;
  t.steps = 4000000;
  t.init_scale = 0.0;
  t.record_every = 1000;
  t.record_log = true;
  t.seed = 0;
  const auto c2 = net(2, 2, 0.5);
  const auto tr2 = train(t, c2, 0.05, d, estimate_diffusion_const(t, c2));
  const double barrier2 = barrier_height(tr2);
  const auto fit = early_time_exponent(tr2, 1, 50000);
  const auto c1 = net(1, 2, 0.5);
  const auto tr1 = train(t, c1, 0.05, d, estimate_diffusion_const(t, c1));
  const double barrier1 = barrier_height(tr1);
  v.detail << "D=2 barrier " << barrier2 << ", early exponent " << fit.exponent << " (+- " << fit.std_error
           << ", " << fit.points << " pts), final loss " << tr2.rows.back().loss << "; D=1 barrier " << barrier1;
  v.require(!tr2.diverged && !tr1.diverged, "no divergence");
  v.require(barrier2 > 0.0, "D=2 barrier > 0");
  v.require(std::abs(fit.exponent - 0.5) <= 0.1, "early exponent 0.5 +- 0.1");
  v.require(barrier1 < 1e-3 * d.y2(), "D=1 barrier < 1e-3 y2");
  return v;
}

Verdict initialisation_sensitivity() {
  Verdict v;
  const auto d = d3();
  TrainerConfig small;
  small.step_size = 0.02;
  small.steps = 300000;
  small.init_scale = 0.01;
  small.record_every = 1000;
  TrainerConfig large = small;
  large.init_scale = 0.3;
  const auto rows = init_sensitivity(small, large, net(2, 2, 0.5), make_grid(0.05, 0.5, 10, false), d,
                                     1e-2 * d.y2());
  int trapped = 0;
  double worst = 0.0;
  for (const auto& r : rows) {
    trapped += r.entrapped ? 1 : 0;
    worst = std::max(worst, r.gap);
  }
  v.detail << trapped << "/" << rows.size() << " gamma values entrapped, largest gap " << worst;
  v.require(trapped > 0, "at least one entrapped gamma");
  return v;
}

Verdict tanh_smoke() {
  Verdict v;
  const auto d = d3();
  struct Case {
    int depth;
    std::vector<double> grid;
    TransitionOrder expect;
  };
  const Case cases[] = {{1, make_grid(0.05, 2.0, 40, false), TransitionOrder::second},
                        {2, make_grid(0.02, 1.0, 50, false), TransitionOrder::first}};
  for (const auto& cs : cases) {
    NetConfig c = net(cs.depth, 2);
    c.activation = Activation::tanh;
    TanhSweepOptions small;
    small.input_scale = 1e-2;
    const auto lin = run_sweep(cs.grid, net(cs.depth, 2), d, Engine::landscape);
    const auto th = tanh_sweep(c, cs.grid, d, small);
    double worst = 0.0;
    for (std::size_t k = 0; k < lin.rows.size(); ++k)
      worst = std::max(worst, std::abs(th.rows[k].loss - lin.rows[k].loss) / lin.rows[k].loss);
    TanhSweepOptions unit;
    const auto r = tanh_sweep(c, cs.grid, d, unit);
    const auto rep = classify_transition(r, make_sample_evaluator(c, d, unit));
    v.detail << "D=" << cs.depth << ": linear-regime gap " << worst << ", order at scale 1 "
             << to_string(rep.order) << " (gamma* " << rep.gamma_star << "); ";
    v.require(worst <= 0.02, "D=" + std::to_string(cs.depth) + " within 2% of linear");
    v.require(rep.order == cs.expect, "D=" + std::to_string(cs.depth) + " order");
  }
  return v;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << " [exception: " << e.what() << "]";
    }
    failures += v.pass ? 0 : 1;
    std::printf("%s %2d %s (%.2f s): %s\n", v.pass ? "PASS" : "FAIL", id, name, seconds_since(t0),
                v.detail.str().c_str());
    std::fflush(stdout);
  };

  std::vector<DepthOneRun> runs;
  try {
    runs = depth_one_runs();
  } catch (const std::exception& e) {
    std::printf("depth-one sweeps failed: %s\n", e.what());
  }
  auto with_runs = [&](Verdict (*fn)(const std::vector<DepthOneRun>&)) {
    return [&runs, fn] {
      if (runs.empty()) throw Error("depth-one sweeps unavailable");
      return fn(runs);
    };
  };

  report(1, "ridge exactness", ridge_exactness);
  report(2, "order-parameter reduction", order_parameter_reduction);
  report(3, "depth-1 critical point", with_runs(depth_one_critical_point));
  report(4, "depth-1 Landau slope", depth_one_landau_slope);
  report(5, "depth-1 exponent", with_runs(depth_one_exponent));
  report(6, "second-derivative discontinuity", with_runs(second_derivative_jump));
  report(7, "depth-2 first order", depth_two_first_order);
  report(8, "derivative identity", with_runs(derivative_identity));
  report(9, "depth scan", depth_scan_limit);
  report(10, "quartic regulariser", quartic_regulariser);
  report(11, "dynamics phenomenology", dynamics_phenomenology);
  report(12, "initialisation sensitivity", initialisation_sensitivity);
  report(13, "tanh smoke", tanh_smoke);
  std::printf("%d/13 criteria passed\n", 13 - failures);
  return failures == 0 ? 0 : 1;
}
