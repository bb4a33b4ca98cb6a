// SPDX-License-Identifier: Apache-2.0
#pragma once

// CSV and JSON serialisation of results. Numbers use the shortest
// round-trip representation so that reruns are byte-identical.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "ehrenfest/dynamics.hpp"
#include "ehrenfest/error.hpp"
#include "ehrenfest/oracle.hpp"
#include "ehrenfest/sweep.hpp"

namespace ehrenfest::io {

using json = nlohmann::ordered_json;

inline std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Writes `content` to a sibling temporary file and renames it over `path`.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

namespace detail {

inline void csv_row(std::string& out, std::initializer_list<std::string> cells) {
  bool first = true;
  for (const auto& c : cells) {
    if (!first) out += ',';
    out += c;
    first = false;
  }
  out += '\n';
}

}  // namespace detail

inline std::string sweep_csv(const SweepResult& r) {
  std::string out = "gamma,loss,b_star,reg_term,d1,d2\n";
  for (const auto& row : r.rows)
    detail::csv_row(out, {fmt_double(row.gamma), fmt_double(row.loss), fmt_double(row.b_star),
                          fmt_double(row.reg_term), fmt_double(row.d1), fmt_double(row.d2)});
  return out;
}

inline std::string trajectory_csv(const Trajectory& tr) {
  std::string out = "step,loss,b,b_corrected\n";
  for (const auto& row : tr.rows)
    detail::csv_row(out, {std::to_string(row.step), fmt_double(row.loss), fmt_double(row.b),
                          fmt_double(row.b_corrected)});
  return out;
}

inline std::string depthscan_csv(const std::vector<DepthRow>& rows) {
  std::string out = "depth,loss,b_star\n";
  for (const auto& row : rows)
    detail::csv_row(out, {std::to_string(row.depth), fmt_double(row.loss), fmt_double(row.b_star)});
  return out;
}

struct LandscapePoint {
  double gamma = 0.0;
  double b = 0.0;
  double loss = 0.0;
};

inline std::string landscape_csv(const std::vector<LandscapePoint>& pts) {
  std::string out = "gamma,b,loss\n";
  for (const auto& p : pts) detail::csv_row(out, {fmt_double(p.gamma), fmt_double(p.b), fmt_double(p.loss)});
  return out;
}

inline std::string init_sensitivity_csv(const std::vector<InitSensitivityRow>& rows) {
  std::string out = "gamma,loss_small,loss_large,converged_small,converged_large,gap,entrapped\n";
  for (const auto& r : rows)
    detail::csv_row(out, {fmt_double(r.gamma), fmt_double(r.loss_small), fmt_double(r.loss_large),
                          r.converged_small ? "1" : "0", r.converged_large ? "1" : "0",
                          fmt_double(r.gap), r.entrapped ? "1" : "0"});
  return out;
}

inline json to_json(const TransitionReport& r) {
  json j;
  j["order"] = to_string(r.order);
  j["gamma_star"] = r.gamma_star;
  j["gamma_star_halfwidth"] = r.gamma_star_halfwidth;
  j["loss_jump"] = r.loss_jump;
  j["d1_jump"] = r.d1_jump;
  j["d2_jump"] = r.d2_jump;
  j["b_jump"] = r.b_jump;
  j["d1_left"] = r.d1_left;
  j["d1_right"] = r.d1_right;
  j["d2_left"] = r.d2_left;
  j["d2_right"] = r.d2_right;
  j["latent_heat"] = latent_heat(r);
  j["reg_jump"] = r.reg_jump;
  j["energy_jump"] = r.energy_jump;
  j["landau_exponent"] = r.landau_exponent ? json(*r.landau_exponent) : json(nullptr);
  j["landau_exponent_stderr"] =
      r.landau_exponent_stderr ? json(*r.landau_exponent_stderr) : json(nullptr);
  j["coexistence_flag"] = r.coexistence_flag;
  j["located_by"] = r.b_switch ? "b_star phase change" : "largest d2 change";
  json levels = json::array();
  for (const auto& lv : r.levels) {
    levels.push_back({{"h", lv.h},
                      {"loss_left", lv.loss_left},
                      {"loss_right", lv.loss_right},
                      {"d1_left", lv.d1_left},
                      {"d1_right", lv.d1_right},
                      {"d2_left", lv.d2_left},
                      {"d2_right", lv.d2_right},
                      {"loss_jump", lv.loss_jump},
                      {"d1_jump", lv.d1_jump},
                      {"d2_jump", lv.d2_jump}});
  }
  j["levels"] = levels;
  return j;
}

inline json to_json(const CurvatureCheck& c) {
  return {{"numeric_left", c.numeric_left},
          {"numeric_right", c.numeric_right},
          {"formula_left", c.formula_left},
          {"expansion_left", c.expansion_left},
          {"discrepancy", c.discrepancy}};
}

inline json to_json(const EquivalenceReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"gamma", row.gamma},
                    {"reduced_loss", row.reduced_loss},
                    {"oracle_loss", row.oracle_loss},
                    {"gap", row.gap},
                    {"ok", row.ok}});
  return {{"tolerance", r.tolerance}, {"violations", r.violations}, {"rows", rows}};
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace ehrenfest::io
