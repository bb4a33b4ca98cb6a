// SPDX-License-Identifier: Apache-2.0
#pragma once

// Second-moment statistics of a regression dataset: A0 = E[xx^T], E[xy],
// E[y^2], together with the eigen-rotation that diagonalises A0. Every
// quantity downstream (effective landscape, ridge closed form, full network
// loss) consumes the data only through these moments.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ehrenfest/error.hpp"

namespace ehrenfest {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// One labelled sample (x, y).
struct Sample {
  Vector x;
  double y = 0.0;
};

/// Norms of the input-label correlation under powers of A0.
struct SignalNorms {
  double e0 = 0.0;  ///< ||E[xy]||
  double e1 = 0.0;  ///< sqrt(E[xy]^T A0 E[xy])
  double e2 = 0.0;  ///< sqrt(E[xy]^T A0^2 E[xy])
};

/// Immutable moment statistics of the data.
///
/// Invariants established at construction:
///  - cov symmetric, eigenvalues clamped to 0 when within -1e-12 of it;
///  - eigvals sorted descending, cov = rotation * diag(eigvals) * rotation^T;
///  - xy_rot = rotation^T * xy;
///  - the moments are realisable: y2 >= xy^T pinv(cov) xy - 1e-9 and
///    xy has no component along null directions of cov.
class MomentData {
 public:
  /// Builds from raw moments; eigendecomposes cov.
  static MomentData from_moments(const Matrix& cov, const Vector& xy, double y2) {
    const Eigen::Index d = cov.rows();
    if (d < 1 || cov.cols() != d) throw InvalidInput("cov must be a non-empty square matrix");
    if (xy.size() != d) throw InvalidInput("xy length must equal cov dimension");
    if (!cov.allFinite() || !xy.allFinite() || !std::isfinite(y2))
      throw InvalidInput("moments must be finite");
    const double scale = 1.0 + cov.cwiseAbs().maxCoeff();
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw InvalidInput("cov is not symmetric");
    const Matrix sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
    if (solver.info() != Eigen::Success) throw InvalidInput("eigendecomposition of cov failed");
    // Eigen returns ascending order.
    Vector vals = solver.eigenvalues().reverse();
    Matrix rot = solver.eigenvectors().rowwise().reverse();
    return MomentData(std::move(vals), std::move(rot), Vector(rot.transpose() * xy), y2, sym,
                      xy);
  }

  /// Builds from a spectrum, an explicit orthogonal rotation and the signal
  /// expressed in the eigenbasis. eigvals need not be sorted; they are sorted
  /// descending jointly with the rotation columns and the signal.
  static MomentData from_spectrum(const Vector& eigvals, const Matrix& rotation,
                                  const Vector& signal, double y2) {
    const Eigen::Index d = eigvals.size();
    if (d < 1) throw InvalidInput("eigvals must be non-empty");
    if (signal.size() != d) throw InvalidInput("signal length must equal eigvals length");
    if (rotation.rows() != d || rotation.cols() != d)
      throw InvalidInput("rotation must be dim x dim");
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index i, Eigen::Index j) { return eigvals[i] > eigvals[j]; });
    Vector vals(d), sig(d);
    Matrix rot(d, d);
    for (Eigen::Index k = 0; k < d; ++k) {
      vals[k] = eigvals[order[static_cast<std::size_t>(k)]];
      sig[k] = signal[order[static_cast<std::size_t>(k)]];
      rot.col(k) = rotation.col(order[static_cast<std::size_t>(k)]);
    }
    Matrix cov = rot * vals.asDiagonal() * rot.transpose();
    cov = 0.5 * (cov + cov.transpose());
    Vector xy = rot * sig;
    return MomentData(std::move(vals), std::move(rot), std::move(sig), y2, std::move(cov),
                      std::move(xy));
  }

  [[nodiscard]] Eigen::Index dim() const { return cov_.rows(); }
  [[nodiscard]] const Matrix& cov() const { return cov_; }
  [[nodiscard]] const Vector& xy() const { return xy_; }
  [[nodiscard]] double y2() const { return y2_; }
  [[nodiscard]] const Vector& eigvals() const { return eigvals_; }
  [[nodiscard]] const Matrix& rotation() const { return rotation_; }
  [[nodiscard]] const Vector& xy_rot() const { return xy_rot_; }
  [[nodiscard]] double a_max() const { return eigvals_[0]; }

  /// Smallest eigenvalue among eigendirections that carry signal (+inf when
  /// the signal is zero).
  [[nodiscard]] double a_signal_min() const {
    double lo = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < dim(); ++i)
      if (xy_rot_[i] != 0.0) lo = std::min(lo, eigvals_[i]);
    return lo;
  }

  /// xy^T pinv(cov) xy, the smallest y2 any joint distribution can have.
  [[nodiscard]] double min_feasible_y2() const { return min_feasible_y2(eigvals_, xy_rot_); }

  static double min_feasible_y2(const Vector& eigvals, const Vector& signal) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < eigvals.size(); ++i)
      if (eigvals[i] > 0.0) s += signal[i] * signal[i] / eigvals[i];
    return s;
  }

 private:
  MomentData(Vector eigvals, Matrix rotation, Vector xy_rot, double y2, Matrix cov, Vector xy)
      : eigvals_(std::move(eigvals)),
        rotation_(std::move(rotation)),
        xy_rot_(std::move(xy_rot)),
        y2_(y2),
        cov_(std::move(cov)),
        xy_(std::move(xy)) {
    validate();
  }

  void validate() {
    if (!eigvals_.allFinite() || !rotation_.allFinite() || !xy_rot_.allFinite() ||
        !std::isfinite(y2_))
      throw InvalidInput("moments must be finite");
    const Eigen::Index d = eigvals_.size();
    if ((rotation_.transpose() * rotation_ - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-10)
      throw InvalidInput("rotation is not orthogonal");
    for (Eigen::Index i = 0; i < d; ++i) {
      if (eigvals_[i] < -1e-12) {
        std::ostringstream os;
        os << "cov is not positive semidefinite (eigenvalue " << eigvals_[i] << ")";
        throw InvalidInput(os.str());
      }
      if (eigvals_[i] < 0.0) eigvals_[i] = 0.0;
    }
    if (y2_ < 0.0) throw InvalidInput("y2 must be nonnegative");
    const double signal_scale = 1.0 + xy_rot_.norm();
    for (Eigen::Index i = 0; i < d; ++i) {
      if (eigvals_[i] == 0.0) {
        if (std::abs(xy_rot_[i]) > 1e-9 * signal_scale)
          throw InvalidInput("xy has a component along a zero-variance direction of cov");
        xy_rot_[i] = 0.0;
      }
    }
    const double need = min_feasible_y2();
    if (y2_ < need - 1e-9) {
      std::ostringstream os;
      os.precision(17);
      os << "infeasible moments: y2 = " << y2_ << " but the minimal feasible y2 is " << need;
      throw InvalidInput(os.str());
    }
  }

  Vector eigvals_;
  Matrix rotation_;
  Vector xy_rot_;
  double y2_;
  Matrix cov_;
  Vector xy_;
};

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign of R's diagonal folded into Q).
inline Matrix random_orthogonal(Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

/// Synthetic moments with a prescribed spectrum and signal in the eigenbasis;
/// the rotation is a seeded random orthogonal matrix. Throws InvalidInput when
/// y2 is below the minimal feasible value.
inline MomentData make_synthetic(const Vector& eigvals, const Vector& signal, double y2,
                                 std::uint64_t seed) {
  if (eigvals.size() != signal.size())
    throw InvalidInput("make_synthetic: signal and eigvals must have the same length");
  if (eigvals.size() < 1) throw InvalidInput("make_synthetic: empty spectrum");
  return MomentData::from_spectrum(eigvals, random_orthogonal(eigvals.size(), seed), signal, y2);
}

/// Population moments (divide by n) of a sample set.
inline MomentData from_samples(const std::vector<Sample>& rows) {
  if (rows.empty()) throw InvalidInput("from_samples: need at least one row");
  const Eigen::Index d = rows.front().x.size();
  if (d < 1) throw InvalidInput("from_samples: row 0 has an empty x");
  Matrix cov = Matrix::Zero(d, d);
  Vector xy = Vector::Zero(d);
  double y2 = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Sample& s = rows[r];
    if (s.x.size() != d)
      throw InvalidInput("from_samples: row " + std::to_string(r) + " has inconsistent dimension");
    if (!s.x.allFinite() || !std::isfinite(s.y))
      throw InvalidInput("from_samples: row " + std::to_string(r) + " has a non-finite entry");
    cov.selfadjointView<Eigen::Lower>().rankUpdate(s.x);
    xy += s.x * s.y;
    y2 += s.y * s.y;
  }
  const double n = static_cast<double>(rows.size());
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= n;
  xy /= n;
  y2 /= n;
  return MomentData::from_moments(cov, xy, y2);
}

inline SignalNorms signal_norms(const MomentData& data) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (Eigen::Index i = 0; i < data.dim(); ++i) {
    const double m2 = data.xy_rot()[i] * data.xy_rot()[i];
    const double a = data.eigvals()[i];
    s0 += m2;
    s1 += a * m2;
    s2 += a * a * m2;
  }
  return {std::sqrt(s0), std::sqrt(s1), std::sqrt(s2)};
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

/// Reads samples from CSV with header `x_1,...,x_d,y`.
inline std::vector<Sample> read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("csv: missing header");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2) throw InvalidInput("csv: header needs at least x_1 and y");
  for (std::size_t i = 0; i + 1 < header.size(); ++i)
    if (detail::trim(header[i]) != "x_" + std::to_string(i + 1))
      throw InvalidInput("csv: header column " + std::to_string(i + 1) + " must be x_" +
                         std::to_string(i + 1));
  if (detail::trim(header.back()) != "y") throw InvalidInput("csv: last header column must be y");
  const std::size_t d = header.size() - 1;

  std::vector<Sample> rows;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != d + 1)
      throw InvalidInput("csv: row " + std::to_string(row) + " has " +
                         std::to_string(cells.size()) + " columns, expected " +
                         std::to_string(d + 1));
    Sample s{Vector(static_cast<Eigen::Index>(d)), 0.0};
    for (std::size_t c = 0; c <= d; ++c) {
      const std::string_view cell = detail::trim(cells[c]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw InvalidInput("csv: row " + std::to_string(row) + " column " +
                           std::to_string(c + 1) + " is not a finite number");
      if (c < d)
        s.x[static_cast<Eigen::Index>(c)] = v;
      else
        s.y = v;
    }
    rows.push_back(std::move(s));
    ++row;
  }
  if (rows.empty()) throw InvalidInput("csv: no data rows");
  return rows;
}

inline std::vector<Sample> read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("csv: cannot open " + path);
  return read_samples_csv(in);
}

}  // namespace ehrenfest
