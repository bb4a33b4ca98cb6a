// SPDX-License-Identifier: Apache-2.0
#pragma once

// Command-line front end. Each command reads one JSON run configuration,
// produces its artifacts in memory, writes them atomically into the output
// directory and finishes with manifest.json.
//
// Exit codes: 0 success, 1 unexpected error, 2 configuration error,
// 3 failed check, 4 numerical divergence.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "ehrenfest/datastats.hpp"
#include "ehrenfest/dynamics.hpp"
#include "ehrenfest/error.hpp"
#include "ehrenfest/io.hpp"
#include "ehrenfest/landscape.hpp"
#include "ehrenfest/oracle.hpp"
#include "ehrenfest/sweep.hpp"
#include "ehrenfest/version.hpp"

namespace ehrenfest::cli {

using json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitCheck = 3;
inline constexpr int kExitDivergence = 4;

inline constexpr const char* kManifestFormat = "ehrenfest-manifest/1";

// ---------------------------------------------------------------------------
// Run configuration

struct GridSpec {
  double min = 0.05;
  double max = 1.0;
  int count = 40;
  bool log = false;

  std::vector<double> values() const { return make_grid(min, max, count, log); }
};

struct DataSpec {
  bool synthetic = true;
  std::vector<double> eigvals;
  std::vector<double> signal;
  double y2 = 1.0;
  std::uint64_t seed = 0;
  std::string csv;  ///< absolute path once resolved
};

struct BGrid {
  double min = -2.0;
  double max = 2.0;
  int count = 201;
};

struct TrainSpec {
  TrainerConfig trainer;
  double gamma = 0.1;
  /// When set, `train` also compares noise-free runs from init_scale and
  /// this scale over the gamma grid.
  std::optional<double> compare_init_scale;
  double entrapment_rel = 1e-2;  ///< entrapment tolerance as a fraction of y2
};

struct DepthScanSpec {
  double gamma = 0.1;
  std::vector<int> depths{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
};

struct RunConfig {
  NetConfig net;
  DataSpec data;
  GridSpec gamma;
  std::string engine = "auto";
  std::uint64_t seed = 0;
  BGrid b_grid;
  TrainSpec train;
  DepthScanSpec depthscan;
  MultistartOptions multistart;
  Thresholds thresholds;
  TanhSweepOptions tanh;
  std::string output_dir = "out";
};

namespace detail {

/// Typed, strict access to one JSON object. Every key must be consumed;
/// finish() rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(j_.at(key), where(key));
  }

  void get(const char* key, double& out) {
    if (!mark(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) fail(key, "expected a number");
    out = v.get<double>();
    if (!std::isfinite(out)) fail(key, "expected a finite number");
  }

  void get(const char* key, int& out) {
    if (!mark(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) fail(key, "expected an integer");
    const auto x = v.get<long long>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      fail(key, "integer out of range");
    out = static_cast<int>(x);
  }

  void get(const char* key, long& out) {
    if (!mark(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) fail(key, "expected an integer");
    out = v.get<long>();
  }

  void get(const char* key, std::uint64_t& out) {
    if (!mark(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void get(const char* key, bool& out) {
    if (!mark(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) fail(key, "expected true or false");
    out = v.get<bool>();
  }

  void get(const char* key, std::string& out) {
    if (!mark(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) fail(key, "expected a string");
    out = v.get<std::string>();
  }

  void get(const char* key, std::vector<double>& out) {
    if (!mark(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(key, "expected an array of numbers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "expected an array of numbers");
      out.push_back(e.get<double>());
    }
  }

  void get(const char* key, std::vector<int>& out) {
    if (!mark(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) fail(key, "expected an array of integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(key, "expected an array of integers");
      out.push_back(e.get<int>());
    }
  }

  void get(const char* key, std::optional<double>& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    double v = 0.0;
    get(key, v);
    out = v;
  }

  template <class T>
  void require(const char* key, T& out) {
    if (!has(key)) fail(key, "required field is missing");
    get(key, out);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(it.key(), "unknown field");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(where(key) + ": " + what);
  }

 private:
  bool mark(const char* key) {
    if (!j_.contains(key)) return false;
    seen_.insert(key);
    return !j_.at(key).is_null();
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<config>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::filesystem::path absolute_from(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return std::filesystem::weakly_canonical(path);
}

}  // namespace detail

/// Parses a run configuration. A manifest written by a previous run is also
/// accepted; its resolved configuration is used. Relative csv paths are
/// resolved against `base_dir`.
inline RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir = ".") {
  const json* src = &doc;
  if (doc.is_object() && doc.contains("format")) {
    if (!doc.at("format").is_string() || doc.at("format").get<std::string>() != kManifestFormat)
      throw ConfigError("format: unsupported document format");
    if (!doc.contains("config")) throw ConfigError("manifest without a config section");
    src = &doc.at("config");
  }
  detail::Reader r(*src, "");
  RunConfig c;
  r.require("depth", c.net.depth);
  r.get("width", c.net.width);
  r.get("noise_var", c.net.noise_var);
  r.get("reg_exponent", c.net.reg_exponent);
  if (r.has("activation")) {
    std::string a;
    r.get("activation", a);
    if (a == "linear")
      c.net.activation = Activation::linear;
    else if (a == "tanh")
      c.net.activation = Activation::tanh;
    else
      r.fail("activation", "expected \"linear\" or \"tanh\"");
  }

  if (!r.has("data")) r.fail("data", "required field is missing");
  {
    detail::Reader d = r.child("data");
    const bool syn = d.has("synthetic");
    const bool csv = d.has("csv");
    if (syn == csv) d.fail("", "exactly one of \"synthetic\" or \"csv\" is required");
    if (syn) {
      detail::Reader s = d.child("synthetic");
      s.require("eigvals", c.data.eigvals);
      s.require("signal", c.data.signal);
      s.require("y2", c.data.y2);
      s.get("seed", c.data.seed);
      s.finish();
      if (c.data.eigvals.size() != c.data.signal.size())
        s.fail("signal", "must have the same length as eigvals");
      if (c.data.eigvals.empty()) s.fail("eigvals", "must not be empty");
    } else {
      c.data.synthetic = false;
      d.get("csv", c.data.csv);
      c.data.csv = detail::absolute_from(base_dir, c.data.csv).string();
    }
    d.finish();
  }

  if (r.has("gamma")) {
    detail::Reader g = r.child("gamma");
    g.get("min", c.gamma.min);
    g.get("max", c.gamma.max);
    g.get("count", c.gamma.count);
    if (g.has("scale")) {
      std::string s;
      g.get("scale", s);
      if (s == "log")
        c.gamma.log = true;
      else if (s == "linear")
        c.gamma.log = false;
      else
        g.fail("scale", "expected \"linear\" or \"log\"");
    }
    g.finish();
  }

  r.get("engine", c.engine);
  if (c.engine != "auto") {
    try {
      (void)engine_from_string(c.engine);
    } catch (const ConfigError&) {
      r.fail("engine", "expected auto, landscape, oracle, ridge or trained");
    }
  }
  r.get("seed", c.seed);
  if (r.has("output_dir")) r.get("output_dir", c.output_dir);

  if (r.has("landscape")) {
    detail::Reader b = r.child("landscape");
    b.get("b_min", c.b_grid.min);
    b.get("b_max", c.b_grid.max);
    b.get("b_count", c.b_grid.count);
    b.finish();
  }

  if (r.has("trainer")) {
    detail::Reader t = r.child("trainer");
    TrainerConfig& tc = c.train.trainer;
    t.get("gamma", c.train.gamma);
    t.get("step_size", tc.step_size);
    t.get("noise_temp", tc.noise_temp);
    t.get("steps", tc.steps);
    t.get("init_scale", tc.init_scale);
    t.get("sample_noise", tc.sample_noise);
    t.get("record_every", tc.record_every);
    t.get("record_log", tc.record_log);
    t.get("grad_tol", tc.grad_tol);
    t.get("n_samples", tc.n_samples);
    t.get("sample_seed", tc.sample_seed);
    t.get("compare_init_scale", c.train.compare_init_scale);
    t.get("entrapment_rel", c.train.entrapment_rel);
    t.finish();
  }

  if (r.has("depthscan")) {
    detail::Reader s = r.child("depthscan");
    s.get("gamma", c.depthscan.gamma);
    s.get("depths", c.depthscan.depths);
    s.finish();
  }

  if (r.has("multistart")) {
    detail::Reader m = r.child("multistart");
    m.get("n_starts", c.multistart.n_starts);
    m.get("scale_min", c.multistart.scale_min);
    m.get("scale_max", c.multistart.scale_max);
    m.get("grad_tol", c.multistart.descent.grad_tol);
    m.get("max_iter", c.multistart.descent.max_iter);
    m.finish();
  }

  if (r.has("thresholds")) {
    detail::Reader t = r.child("thresholds");
    t.get("rel", c.thresholds.rel);
    t.get("abs", c.thresholds.abs);
    t.get("bracket_width", c.thresholds.bracket_width);
    t.get("refinements", c.thresholds.refinements);
    t.get("monotone_slack", c.thresholds.monotone_slack);
    t.get("b_zero", c.thresholds.b_zero);
    t.finish();
  }

  if (r.has("tanh")) {
    detail::Reader t = r.child("tanh");
    t.get("init_scales", c.tanh.init_scales);
    t.get("input_scale", c.tanh.input_scale);
    t.get("n_samples", c.tanh.n_samples);
    t.get("sample_seed", c.tanh.sample_seed);
    t.get("grad_tol", c.tanh.descent.grad_tol);
    t.get("max_iter", c.tanh.descent.max_iter);
    t.finish();
  }
  r.finish();

  try {
    c.net.validate();
    c.train.trainer.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (c.multistart.n_starts < 1) throw ConfigError("multistart.n_starts must be >= 1");
  if (!(c.multistart.scale_min > 0.0) || c.multistart.scale_max < c.multistart.scale_min)
    throw ConfigError("multistart: need 0 < scale_min <= scale_max");
  if (!(c.train.entrapment_rel >= 0.0)) throw ConfigError("trainer.entrapment_rel must be >= 0");
  if (c.thresholds.refinements < 0) throw ConfigError("thresholds.refinements must be >= 0");
  return c;
}

/// Resolves the seed into the components that consume one.
inline void apply_seed(RunConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.train.trainer.seed = seed;
  c.multistart.seed = seed;
  c.tanh.seed = seed;
}

/// The engine a sweep uses for this configuration.
inline Engine resolve_engine(const RunConfig& c) {
  if (c.engine == "auto") {
    if (c.net.activation == Activation::tanh) return Engine::trained;
    if (c.net.depth == 0) return Engine::ridge;
    return c.net.reg_exponent == 2 ? Engine::landscape : Engine::oracle;
  }
  const Engine e = engine_from_string(c.engine);
  if (c.net.activation == Activation::tanh && e != Engine::trained)
    throw ConfigError("activation tanh requires engine trained");
  if (e == Engine::trained && c.net.activation != Activation::tanh)
    throw ConfigError("engine trained is only available for activation tanh");
  return e;
}

/// Fully resolved configuration: every field explicit, output_dir omitted.
inline json to_json(const RunConfig& c) {
  json j;
  j["depth"] = c.net.depth;
  j["width"] = c.net.width;
  j["noise_var"] = c.net.noise_var;
  j["reg_exponent"] = c.net.reg_exponent;
  j["activation"] = to_string(c.net.activation);
  if (c.data.synthetic) {
    j["data"] = {{"synthetic",
                  {{"eigvals", c.data.eigvals},
                   {"signal", c.data.signal},
                   {"y2", c.data.y2},
                   {"seed", c.data.seed}}}};
  } else {
    j["data"] = {{"csv", c.data.csv}};
  }
  j["gamma"] = {{"min", c.gamma.min},
                {"max", c.gamma.max},
                {"count", c.gamma.count},
                {"scale", c.gamma.log ? "log" : "linear"}};
  j["engine"] = c.engine;
  j["seed"] = c.seed;
  j["landscape"] = {{"b_min", c.b_grid.min}, {"b_max", c.b_grid.max}, {"b_count", c.b_grid.count}};
  const TrainerConfig& t = c.train.trainer;
  j["trainer"] = {{"gamma", c.train.gamma},
                  {"step_size", t.step_size},
                  {"noise_temp", t.noise_temp},
                  {"steps", t.steps},
                  {"init_scale", t.init_scale},
                  {"sample_noise", t.sample_noise},
                  {"record_every", t.record_every},
                  {"record_log", t.record_log},
                  {"grad_tol", t.grad_tol},
                  {"n_samples", t.n_samples},
                  {"sample_seed", t.sample_seed},
                  {"compare_init_scale", c.train.compare_init_scale
                                             ? json(*c.train.compare_init_scale)
                                             : json(nullptr)},
                  {"entrapment_rel", c.train.entrapment_rel}};
  j["depthscan"] = {{"gamma", c.depthscan.gamma}, {"depths", c.depthscan.depths}};
  j["multistart"] = {{"n_starts", c.multistart.n_starts},
                     {"scale_min", c.multistart.scale_min},
                     {"scale_max", c.multistart.scale_max},
                     {"grad_tol", c.multistart.descent.grad_tol},
                     {"max_iter", c.multistart.descent.max_iter}};
  j["thresholds"] = {{"rel", c.thresholds.rel},
                     {"abs", c.thresholds.abs},
                     {"bracket_width", c.thresholds.bracket_width},
                     {"refinements", c.thresholds.refinements},
                     {"monotone_slack", c.thresholds.monotone_slack},
                     {"b_zero", c.thresholds.b_zero}};
  j["tanh"] = {{"init_scales", c.tanh.init_scales},
               {"input_scale", c.tanh.input_scale},
               {"n_samples", c.tanh.n_samples},
               {"sample_seed", c.tanh.sample_seed},
               {"grad_tol", c.tanh.descent.grad_tol},
               {"max_iter", c.tanh.descent.max_iter}};
  return j;
}

inline MomentData load_data(const RunConfig& c) {
  try {
    if (c.data.synthetic) {
      const Vector ev = Eigen::Map<const Vector>(c.data.eigvals.data(),
                                                 static_cast<Eigen::Index>(c.data.eigvals.size()));
      const Vector sg = Eigen::Map<const Vector>(c.data.signal.data(),
                                                 static_cast<Eigen::Index>(c.data.signal.size()));
      return make_synthetic(ev, sg, c.data.y2, c.data.seed);
    }
    return from_samples(read_samples_csv(c.data.csv));
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands

/// Files and check results of one command.
struct Outcome {
  std::vector<std::pair<std::string, std::string>> files;  ///< name, content
  json checks = json::object();
  int exit_code = kExitOk;
  std::string message;  ///< reason for a nonzero exit code
};

namespace detail {

inline std::vector<double> sweep_grid(const RunConfig& c) {
  if (c.gamma.count < 9) throw ConfigError("gamma.count must be >= 9 for sweep commands");
  try {
    return c.gamma.values();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("gamma: ") + e.what());
  }
}

inline PointEvaluator evaluator(const RunConfig& c, const MomentData& data, Engine e) {
  try {
    if (e == Engine::trained) return make_sample_evaluator(c.net, data, c.tanh);
    return make_evaluator(e, c.net, data, c.multistart);
  } catch (const InvalidInput& err) {
    throw ConfigError(err.what());
  }
}

inline SweepResult sweep(const RunConfig& c, const MomentData& data, Engine e) {
  return tabulate(sweep_grid(c), evaluator(c, data, e), e);
}

/// The exact landscape formulas apply to this configuration.
inline bool exact_landscape(const NetConfig& n) {
  return n.depth >= 1 && n.reg_exponent == 2 && n.activation == Activation::linear;
}

}  // namespace detail

inline Outcome cmd_landscape(const RunConfig& c, const MomentData& data) {
  if (!detail::exact_landscape(c.net))
    throw ConfigError("landscape needs a linear network with depth >= 1 and reg_exponent 2");
  if (c.b_grid.count < 2 || !(c.b_grid.max > c.b_grid.min))
    throw ConfigError("landscape: need b_count >= 2 and b_max > b_min");
  std::vector<double> gammas;
  try {
    gammas = c.gamma.values();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("gamma: ") + e.what());
  }
  const std::vector<double> bs = make_grid(c.b_grid.min, c.b_grid.max, c.b_grid.count, false);
  std::vector<io::LandscapePoint> pts;
  pts.reserve(gammas.size() * bs.size());
  for (double g : gammas)
    for (double b : bs) pts.push_back({g, b, effective_loss_extended(b, g, c.net, data)});
  Outcome out;
  out.files.emplace_back("landscape.csv", io::landscape_csv(pts));
  return out;
}

inline Outcome cmd_sweep(const RunConfig& c, const MomentData& data) {
  const Engine e = resolve_engine(c);
  const SweepResult r = detail::sweep(c, data, e);
  Outcome out;
  out.files.emplace_back("sweep.csv", io::sweep_csv(r));
  out.checks["engine"] = to_string(e);
  if (detail::exact_landscape(c.net)) {
    const DerivativeIdentityReport id = check_derivative_identity(r, c.net, data);
    out.checks["derivative_identity"] = {{"checked", id.checked},
                                         {"violations", id.violations},
                                         {"max_rel_error", id.max_rel_error},
                                         {"worst_gamma", id.worst_gamma}};
    if (id.violations > 0) {
      out.exit_code = kExitCheck;
      out.message = "numerical L' disagrees with the closed-form derivative at " +
                    std::to_string(id.violations) + " grid points";
    }
  }
  return out;
}

inline Outcome cmd_classify(const RunConfig& c, const MomentData& data) {
  const Engine e = resolve_engine(c);
  const SweepResult r = detail::sweep(c, data, e);
  Outcome out;
  out.files.emplace_back("sweep.csv", io::sweep_csv(r));
  // A fresh evaluator so the oracle's warm start does not depend on the sweep.
  const TransitionReport rep = classify_transition(r, detail::evaluator(c, data, e), c.thresholds);
  json t = io::to_json(rep);
  t["engine"] = to_string(e);
  if (detail::exact_landscape(c.net)) {
    if (c.net.depth == 1 && rep.order == TransitionOrder::second) {
      t["curvature_check"] = io::to_json(check_curvature(rep, c.net, data));
    }
    if (c.net.depth >= 2 && rep.order == TransitionOrder::first) {
      const BStarBounds bb = bstar_bounds(rep.gamma_star, c.net, data);
      t["b_jump_lower_bound"] = bb.lower;
      t["b_jump_bound_satisfied"] = rep.b_jump >= bb.lower;
    }
  }
  out.files.emplace_back("transition.json", io::dump(t));
  out.checks["order"] = to_string(rep.order);
  out.checks["gamma_star"] = rep.gamma_star;
  return out;
}

inline Outcome cmd_train(const RunConfig& c, const MomentData& data) {
  TrainerConfig tc = c.train.trainer;
  const double diff_const = estimate_diffusion_const(tc, c.net);
  const Trajectory tr = train(tc, c.net, c.train.gamma, data, diff_const);
  Outcome out;
  out.files.emplace_back("trajectory.csv", io::trajectory_csv(tr));
  json side = {{"gamma", c.train.gamma},
               {"seed", tc.seed},
               {"diff_const", diff_const},
               {"barrier_height", barrier_height(tr)},
               {"final_loss", tr.rows.back().loss},
               {"final_b", tr.rows.back().b},
               {"final_step", tr.rows.back().step},
               {"converged", tr.converged},
               {"diverged", tr.diverged}};
  if (c.train.compare_init_scale && !tr.diverged) {
    TrainerConfig large = tc;
    large.init_scale = *c.train.compare_init_scale;
    std::vector<double> gammas;
    try {
      gammas = c.gamma.values();
    } catch (const InvalidInput& e) {
      throw ConfigError(std::string("gamma: ") + e.what());
    }
    const auto rows = init_sensitivity(tc, large, c.net, gammas, data,
                                       c.train.entrapment_rel * data.y2());
    int entrapped = 0;
    for (const auto& row : rows) entrapped += row.entrapped ? 1 : 0;
    out.files.emplace_back("init_sensitivity.csv", io::init_sensitivity_csv(rows));
    side["init_sensitivity"] = {{"init_scale_small", tc.init_scale},
                                {"init_scale_large", large.init_scale},
                                {"tolerance", c.train.entrapment_rel * data.y2()},
                                {"entrapped_points", entrapped}};
  }
  out.files.emplace_back("train.json", io::dump(side));
  out.checks["diverged"] = tr.diverged;
  if (tr.diverged) {
    out.exit_code = kExitDivergence;
    out.message = "training diverged at step " + std::to_string(tr.rows.back().step);
  }
  return out;
}

inline Outcome cmd_depthscan(const RunConfig& c, const MomentData& data) {
  const std::vector<int>& depths = c.depthscan.depths;
  if (depths.empty()) throw ConfigError("depthscan.depths must not be empty");
  for (std::size_t k = 0; k < depths.size(); ++k) {
    if (depths[k] < 0) throw ConfigError("depthscan.depths must be >= 0");
    if (k > 0 && depths[k] <= depths[k - 1])
      throw ConfigError("depthscan.depths must be strictly increasing");
  }
  if (!(c.depthscan.gamma >= 0.0)) throw ConfigError("depthscan.gamma must be >= 0");
  if (c.net.reg_exponent != 2 || c.net.activation != Activation::linear)
    throw ConfigError("depthscan needs a linear network with reg_exponent 2");
  const auto rows = depth_scan(c.depthscan.gamma, depths, c.net, data);
  Outcome out;
  out.files.emplace_back("depthscan.csv", io::depthscan_csv(rows));
  int decreases = 0;
  for (std::size_t k = 1; k < rows.size(); ++k)
    if (rows[k].loss < rows[k - 1].loss - 1e-12 * std::max(1.0, std::abs(rows[k - 1].loss))) ++decreases;
  out.checks["monotone_in_depth"] = decreases == 0;
  out.checks["gap_to_y2"] = data.y2() - rows.back().loss;
  if (decreases > 0) {
    out.exit_code = kExitCheck;
    out.message = "loss decreases with depth at " + std::to_string(decreases) + " step(s)";
  }
  return out;
}

inline Outcome cmd_verify(const RunConfig& c, const MomentData& data) {
  if (c.net.activation != Activation::linear || c.net.reg_exponent != 2)
    throw ConfigError("verify needs a linear network with reg_exponent 2");
  std::vector<double> gammas;
  try {
    gammas = c.gamma.values();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("gamma: ") + e.what());
  }
  const EquivalenceReport rep = verify_equivalence(gammas, c.net, data, c.multistart);
  Outcome out;
  out.files.emplace_back("equivalence.json", io::dump(io::to_json(rep)));
  out.checks["violations"] = rep.violations;
  if (rep.violations > 0) {
    out.exit_code = kExitCheck;
    out.message = std::to_string(rep.violations) + " grid point(s) exceed the equivalence tolerance";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runner

inline std::string fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline json versions() {
  return {{"ehrenfest", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

struct Invocation {
  std::string command;
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> engine;
};

inline Outcome dispatch(const std::string& command, const RunConfig& c, const MomentData& data) {
  if (command == "landscape") return cmd_landscape(c, data);
  if (command == "sweep") return cmd_sweep(c, data);
  if (command == "classify") return cmd_classify(c, data);
  if (command == "train") return cmd_train(c, data);
  if (command == "depthscan") return cmd_depthscan(c, data);
  if (command == "verify") return cmd_verify(c, data);
  throw ConfigError("unknown command: " + command);
}

/// Runs one command. Writes artifacts and manifest.json into the output
/// directory; on failure writes diagnostics.json there when the directory is
/// known. Returns the exit code.
inline int execute(const Invocation& inv, std::ostream& out, std::ostream& err) {
  std::optional<std::filesystem::path> dir;
  auto diagnose = [&](int code, const std::string& kind, const std::string& msg) {
    const json d = {{"status", "error"}, {"command", inv.command}, {"exit_code", code},
                    {"kind", kind}, {"message", msg}};
    err << d.dump() << "\n";
    if (dir) {
      try {
        io::write_atomic(*dir / "diagnostics.json", io::dump(d));
      } catch (const std::exception&) {
        // the stderr copy is enough
      }
    }
    return code;
  };
  try {
    json doc;
    {
      std::ifstream in(inv.config_path);
      if (!in) throw ConfigError("cannot read config file " + inv.config_path);
      try {
        doc = json::parse(in);
      } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
      }
    }
    const std::filesystem::path base =
        std::filesystem::absolute(inv.config_path).parent_path();
    RunConfig c = parse_config(doc, base);
    apply_seed(c, inv.seed.value_or(c.seed));
    if (inv.engine) {
      c.engine = *inv.engine;
      (void)resolve_engine(c);
    }
    dir = std::filesystem::path(inv.out_dir.value_or(c.output_dir));
    const MomentData data = load_data(c);
    Outcome oc = dispatch(inv.command, c, data);

    json manifest;
    manifest["format"] = kManifestFormat;
    manifest["command"] = inv.command;
    manifest["status"] = oc.exit_code == kExitOk ? "ok" : "check_failed";
    manifest["seed"] = c.seed;
    manifest["config"] = to_json(c);
    manifest["versions"] = versions();
    json arts = json::array();
    for (const auto& [name, content] : oc.files) {
      io::write_atomic(*dir / name, content);
      arts.push_back({{"path", name}, {"bytes", content.size()}, {"fnv1a64", fnv1a64(content)}});
    }
    manifest["artifacts"] = arts;
    manifest["checks"] = oc.checks;
    io::write_atomic(*dir / "manifest.json", io::dump(manifest));
    if (oc.exit_code != kExitOk)
      return diagnose(oc.exit_code, oc.exit_code == kExitCheck ? "check_failure" : "divergence",
                      oc.message);
    out << inv.command << ": wrote " << oc.files.size() + 1 << " file(s) to " << dir->string() << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    return diagnose(kExitConfig, "config_error", e.what());
  } catch (const CheckFailure& e) {
    return diagnose(kExitCheck, "check_failure", e.what());
  } catch (const Divergence& e) {
    return diagnose(kExitDivergence, "divergence", e.what());
  } catch (const InvalidInput& e) {
    return diagnose(kExitConfig, "invalid_input", e.what());
  } catch (const std::exception& e) {
    return diagnose(kExitError, "error", e.what());
  }
}

/// Parses argv and runs the selected command.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Effective loss landscapes and phase transitions of deep linear networks"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  Invocation inv;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string engine;
  const std::pair<const char*, const char*> commands[] = {
      {"landscape", "tabulate the effective loss over a b x gamma grid"},
      {"sweep", "sweep the minimum loss over the gamma grid"},
      {"classify", "sweep and classify the phase transition"},
      {"train", "run gradient descent or Langevin training"},
      {"depthscan", "minimum loss as a function of depth"},
      {"verify", "check the reduced loss against full-parameter minimisation"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config_path, "run configuration (JSON)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "seed (overrides the config)");
    sub->add_option("--engine", engine, "sweep engine")
        ->check(CLI::IsMember({"landscape", "oracle", "ridge"}));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  for (CLI::App* sub : app.get_subcommands()) {
    inv.command = sub->get_name();
    if (sub->count("--out")) inv.out_dir = out_dir;
    if (sub->count("--seed")) inv.seed = seed;
    if (sub->count("--engine")) inv.engine = engine;
  }
  return execute(inv, out, err);
}

}  // namespace ehrenfest::cli
