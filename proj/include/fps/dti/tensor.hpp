#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fps/common.hpp"

namespace fps::dti {

using Vec3 = std::array<double, 3>;

/// Measurement 0 is the b = 0 image; measurement k + 1 uses directions[k]
/// at b[k] (s/mm^2).
struct GradientScheme {
  std::vector<Vec3> directions;
  std::vector<double> b;
  bool includes_b0 = true;

  /// {(1,1,0),(1,0,1),(0,1,1),(1,-1,0),(1,0,-1),(0,1,-1)}/sqrt(2) plus b0.
  static GradientScheme standard(double bvalue = 1000.0) {
    const double r = 1.0 / std::sqrt(2.0);
    GradientScheme s;
    s.directions = {{r, r, 0}, {r, 0, r}, {0, r, r}, {r, -r, 0}, {r, 0, -r}, {0, r, -r}};
    s.b.assign(6, bvalue);
    return s;
  }

  std::size_t measurements() const { return directions.size() + (includes_b0 ? 1 : 0); }

  void validate() const {
    require(includes_b0, ErrorKind::scheme, "gradient scheme needs a b = 0 measurement");
    require(directions.size() >= 6, ErrorKind::scheme, "gradient scheme needs at least 6 directions");
    require(b.size() == directions.size(), ErrorKind::scheme, "gradient scheme needs one b-value per direction");
    for (std::size_t k = 0; k < directions.size(); ++k) {
      const auto& g = directions[k];
      const double n = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
      require(std::abs(n - 1.0) <= 1e-9, ErrorKind::scheme, "gradient direction " + std::to_string(k) + " is not unit norm");
      require(std::isfinite(b[k]) && b[k] > 0.0, ErrorKind::scheme,
              "gradient direction " + std::to_string(k) + " needs a positive b-value");
    }
  }
};

/// Text table, one measurement per line: gx gy gz b. The b0 row is 0 0 0 0.
inline std::string format_scheme(const GradientScheme& s) {
  std::ostringstream o;
  o.precision(17);
  if (s.includes_b0) o << "0 0 0 0\n";
  for (std::size_t k = 0; k < s.directions.size(); ++k)
    o << s.directions[k][0] << ' ' << s.directions[k][1] << ' ' << s.directions[k][2] << ' ' << s.b[k] << '\n';
  return o.str();
}

inline GradientScheme parse_scheme(const std::string& text) {
  GradientScheme s;
  s.includes_b0 = false;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0, b0_rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream ls(line);
    double gx, gy, gz, b;
    if (!(ls >> gx)) continue;
    std::string extra;
    require(static_cast<bool>(ls >> gy >> gz >> b) && !(ls >> extra), ErrorKind::scheme,
            "scheme line " + std::to_string(lineno) + ": expected gx gy gz b");
    if (b == 0.0) {
      ++b0_rows;
      continue;
    }
    s.directions.push_back({gx, gy, gz});
    s.b.push_back(b);
  }
  require(b0_rows <= 1, ErrorKind::scheme, "scheme: more than one b = 0 row");
  s.includes_b0 = b0_rows == 1;
  s.validate();
  return s;
}

struct DiffusionTensor {
  double dxx = 0, dyy = 0, dzz = 0, dxy = 0, dxz = 0, dyz = 0;

  double quadratic(const Vec3& g) const {
    return g[0] * g[0] * dxx + g[1] * g[1] * dyy + g[2] * g[2] * dzz + 2 * g[0] * g[1] * dxy + 2 * g[0] * g[2] * dxz +
           2 * g[1] * g[2] * dyz;
  }
  double trace() const { return dxx + dyy + dzz; }
  std::array<double, 6> values() const { return {dxx, dyy, dzz, dxy, dxz, dyz}; }
  static DiffusionTensor from(const std::array<double, 6>& v) { return {v[0], v[1], v[2], v[3], v[4], v[5]}; }
  bool operator==(const DiffusionTensor&) const = default;
};

/// signals[m][v]: measurement m (see GradientScheme) at voxel v.
using SignalStack = std::vector<std::vector<double>>;

inline SignalStack synth_dwi(const std::vector<DiffusionTensor>& field, const GradientScheme& scheme,
                             const std::vector<double>& s0) {
  scheme.validate();
  require(s0.size() == field.size(), ErrorKind::shape, "synth_dwi: s0 and tensor fields differ in size");
  for (double v : s0) require(v > 0.0, ErrorKind::invalid_input, "synth_dwi: s0 must be positive");
  SignalStack out(scheme.measurements(), std::vector<double>(field.size()));
  out[0] = s0;
  for (std::size_t k = 0; k < scheme.directions.size(); ++k)
    for (std::size_t v = 0; v < field.size(); ++v)
      out[k + 1][v] = s0[v] * std::exp(-scheme.b[k] * field[v].quadratic(scheme.directions[k]));
  return out;
}

struct TensorFit {
  std::vector<DiffusionTensor> tensors;
  std::vector<double> s0;
  std::vector<std::uint8_t> fitted;  // 0 where a signal was non-positive
};

/// Unknowns (ln s0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz); one row per measurement.
inline Eigen::MatrixXd design_matrix(const GradientScheme& scheme) {
  Eigen::MatrixXd A(scheme.measurements(), 7);
  A.row(0) << 1, 0, 0, 0, 0, 0, 0;
  for (std::size_t k = 0; k < scheme.directions.size(); ++k) {
    const auto& g = scheme.directions[k];
    const double b = scheme.b[k];
    A.row(k + 1) << 1, -b * g[0] * g[0], -b * g[1] * g[1], -b * g[2] * g[2], -2 * b * g[0] * g[1],
        -2 * b * g[0] * g[2], -2 * b * g[1] * g[2];
  }
  return A;
}

/// Log-linear least squares per voxel. Voxels with any non-positive or
/// non-finite signal are left at zero with fitted = 0.
inline TensorFit fit_tensor(const SignalStack& signals, const GradientScheme& scheme) {
  scheme.validate();
  require(signals.size() == scheme.measurements(), ErrorKind::shape,
          "fit_tensor: expected " + std::to_string(scheme.measurements()) + " measurements, got " +
              std::to_string(signals.size()));
  const std::size_t n = signals.empty() ? 0 : signals[0].size();
  for (const auto& s : signals) require(s.size() == n, ErrorKind::shape, "fit_tensor: measurement sizes differ");

  const Eigen::MatrixXd A = design_matrix(scheme);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  require(qr.rank() == 7, ErrorKind::scheme, "fit_tensor: rank-deficient gradient design (coplanar directions?)");
  const Eigen::MatrixXd pinv = qr.solve(Eigen::MatrixXd::Identity(A.rows(), A.rows()));

  TensorFit fit;
  fit.tensors.assign(n, {});
  fit.s0.assign(n, 0.0);
  fit.fitted.assign(n, 0);
  Eigen::VectorXd y(A.rows());
  for (std::size_t v = 0; v < n; ++v) {
    bool ok = true;
    for (std::size_t m = 0; m < signals.size() && ok; ++m) {
      const double s = signals[m][v];
      ok = std::isfinite(s) && s > 0.0;
      if (ok) y(m) = std::log(s);
    }
    if (!ok) continue;
    const Eigen::VectorXd x = pinv * y;
    fit.s0[v] = std::exp(x(0));
    fit.tensors[v] = {x(1), x(2), x(3), x(4), x(5), x(6)};
    fit.fitted[v] = 1;
  }
  return fit;
}

struct EigenDecomposition {
  Vec3 values{};                      // descending
  std::array<Vec3, 3> vectors{};      // vectors[i] pairs with values[i]
  bool negative = false;              // any eigenvalue < 0
};

/// Cyclic Jacobi until the off-diagonal Frobenius norm falls below 1e-12
/// relative to the matrix norm.
inline EigenDecomposition eig3_symmetric(const DiffusionTensor& t) {
  for (double v : t.values()) require(std::isfinite(v), ErrorKind::invalid_input, "eig3_symmetric: non-finite tensor entry");
  double a[3][3] = {{t.dxx, t.dxy, t.dxz}, {t.dxy, t.dyy, t.dyz}, {t.dxz, t.dyz, t.dzz}};
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  double norm = 0;
  for (auto& r : a)
    for (double x : r) norm += x * x;
  norm = std::sqrt(norm);
  auto off = [&] { return std::sqrt(2 * (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2])); };

  for (int sweep = 0; sweep < 64 && off() > 1e-12 * norm; ++sweep) {
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double tt = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(tt * tt + 1), s = tt * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::array<int, 3> idx{0, 1, 2};
  std::sort(idx.begin(), idx.end(), [&](int i, int j) { return a[i][i] > a[j][j]; });
  EigenDecomposition e;
  for (int i = 0; i < 3; ++i) {
    e.values[i] = a[idx[i]][idx[i]];
    e.vectors[i] = {v[0][idx[i]], v[1][idx[i]], v[2][idx[i]]};
    e.negative = e.negative || e.values[i] < 0.0;
  }
  return e;
}

struct DTIMaps {
  double fa = 0, md = 0, ad = 0, rd = 0;
  bool negative = false;
};

/// Eigenvalues sorted descending. FA is clamped to [0, 1] and is 0 for the
/// zero tensor; negative eigenvalues enter the formulas unchanged.
inline DTIMaps dti_maps(const Vec3& l, bool negative = false) {
  DTIMaps m;
  m.md = (l[0] + l[1] + l[2]) / 3.0;
  m.ad = l[0];
  m.rd = (l[1] + l[2]) / 2.0;
  const double den = l[0] * l[0] + l[1] * l[1] + l[2] * l[2];
  if (den > 0.0) {
    // sqrt(3/2) |l - md| / |l| written with pairwise differences
    const double num = (l[0] - l[1]) * (l[0] - l[1]) + (l[1] - l[2]) * (l[1] - l[2]) + (l[2] - l[0]) * (l[2] - l[0]);
    m.fa = std::clamp(std::sqrt(num / (2.0 * den)), 0.0, 1.0);
  }
  m.negative = negative || l[0] < 0.0 || l[1] < 0.0 || l[2] < 0.0;
  return m;
}

inline DTIMaps dti_maps(const EigenDecomposition& e) { return dti_maps(e.values, e.negative); }

/// Tensor with eigenvalues l along the orthonormal frame (e1, e2, e1 x e2).
inline DiffusionTensor tensor_from_eigen(const Vec3& l, const Vec3& e1, const Vec3& e2) {
  const Vec3 e3{e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]};
  const std::array<Vec3, 3> e{e1, e2, e3};
  double d[3][3] = {};
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) d[i][j] += l[k] * e[k][i] * e[k][j];
  return {d[0][0], d[1][1], d[2][2], d[0][1], d[0][2], d[1][2]};
}

/// Seeded white-matter-like field: eigenvalues around (1.7, 0.4, 0.3)e-3
/// mm^2/s, random orientation per voxel, s0 in [0.5, 1].
inline std::vector<DiffusionTensor> synthetic_tensor_field(std::size_t n, std::uint64_t seed,
                                                           std::vector<double>* s0 = nullptr) {
  Rng rng(seed);
  std::vector<DiffusionTensor> out(n);
  if (s0) s0->assign(n, 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    const Vec3 l{rng.uniform(1.2e-3, 2.0e-3), rng.uniform(0.3e-3, 0.6e-3), rng.uniform(0.1e-3, 0.3e-3)};
    Vec3 a{rng.normal(), rng.normal(), rng.normal()};
    double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    for (auto& x : a) x /= na;
    Vec3 b{rng.normal(), rng.normal(), rng.normal()};
    const double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    for (int i = 0; i < 3; ++i) b[i] -= dot * a[i];
    const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    for (auto& x : b) x /= nb;
    out[v] = tensor_from_eigen(l, a, b);
    if (s0) (*s0)[v] = rng.uniform(0.5, 1.0);
  }
  return out;
}

}  // namespace fps::dti
