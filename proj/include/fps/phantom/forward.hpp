#pragma once

#include <array>
#include <set>
#include <utility>
#include <vector>

#include "fps/kspace/complex_image.hpp"
#include "fps/phantom/parameter_maps.hpp"

namespace fps::phantom {

/// One echo of the overlapping-echo surrogate. ku/kv place the echo in
/// k-space as a phase ramp (cycles per field of view).
struct EchoComponent {
  double te = 0.0;  // s
  double b = 0.0;   // s/mm^2
  int ku = 0;
  int kv = 0;
  double weight = 1.0;
};

inline std::vector<EchoComponent> default_echo_scheme() {
  return {{0.025, 0.0, 0, 0, 1.0},
          {0.055, 0.0, 16, 0, 1.0},
          {0.085, 1000.0, 0, 16, 1.0},
          {0.115, 1000.0, 16, 16, 1.0}};
}

inline void validate_scheme(const std::vector<EchoComponent>& echoes) {
  std::set<std::pair<double, double>> distinct;
  for (const auto& e : echoes) {
    require(e.te > 0.0 && e.b >= 0.0 && e.weight > 0.0, ErrorKind::invalid_input,
            "echo component requires te > 0, b >= 0, weight > 0");
    distinct.insert({e.te, e.b});
  }
  require(distinct.size() >= 2, ErrorKind::identifiability,
          "at least two echoes with distinct (te, b) are required");
}

/// Per-pixel magnitude of each echo before the phase ramps mix them:
/// weight * m0 * exp(-te/t2) * exp(-b*adc). Layout [echo][pixel].
inline std::vector<std::vector<double>> echo_amplitudes(const ParameterMaps& maps,
                                                        const std::vector<EchoComponent>& echoes) {
  std::vector<std::vector<double>> out(echoes.size(), std::vector<double>(maps.size()));
  for (std::size_t e = 0; e < echoes.size(); ++e) {
    const auto& ec = echoes[e];
    for (std::size_t k = 0; k < maps.size(); ++k)
      out[e][k] = ec.weight * maps.m0[k] * std::exp(-ec.te / maps.t2[k]) * std::exp(-ec.b * maps.adc[k]);
  }
  return out;
}

/// Sum of all echoes, each carrying its phase ramp exp(2 pi i (ku x / W + kv y / H)).
inline kspace::ComplexImage forward_signal(const ParameterMaps& maps,
                                           const std::vector<EchoComponent>& echoes) {
  validate_scheme(echoes);
  const std::size_t h = maps.height, w = maps.width;
  require(maps.t2.size() == h * w && maps.adc.size() == h * w && maps.m0.size() == h * w,
          ErrorKind::shape, "forward_signal: parameter planes do not match H x W");
  const auto amp = echo_amplitudes(maps, echoes);
  kspace::ComplexImage img(h, w);
  for (std::size_t e = 0; e < echoes.size(); ++e) {
    const auto& ec = echoes[e];
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t k = y * w + x;
        const double phase = 2.0 * M_PI * (static_cast<double>(ec.ku) * x / w +
                                           static_cast<double>(ec.kv) * y / h);
        img.re[k] += amp[e][k] * std::cos(phase);
        img.im[k] += amp[e][k] * std::sin(phase);
      }
    }
  }
  return img;
}

struct PixelFit {
  double t2 = 0.0;
  double adc = 0.0;
  double m0 = 0.0;
};

/// Inverts one pixel's echo amplitudes to (t2, adc, m0): log-linear least
/// squares for the start point, then Gauss-Newton on the nonlinear residual.
inline PixelFit invert_pixel(const std::vector<double>& amplitudes,
                             const std::vector<EchoComponent>& echoes) {
  validate_scheme(echoes);
  require(amplitudes.size() == echoes.size(), ErrorKind::shape,
          "invert_pixel: one amplitude per echo required");
  for (double a : amplitudes)
    require(a > 0.0, ErrorKind::invalid_input, "invert_pixel: amplitudes must be positive");

  // log(a/w) = log m0 - te * r2 - b * adc, unknowns (log m0, r2, adc)
  auto solve3 = [](std::array<std::array<double, 3>, 3> A, std::array<double, 3> rhs) {
    for (int c = 0; c < 3; ++c) {
      int piv = c;
      for (int r = c + 1; r < 3; ++r)
        if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
      std::swap(A[c], A[piv]);
      std::swap(rhs[c], rhs[piv]);
      require(std::abs(A[c][c]) > 1e-300, ErrorKind::identifiability, "invert_pixel: singular system");
      for (int r = c + 1; r < 3; ++r) {
        const double f = A[r][c] / A[c][c];
        for (int k = c; k < 3; ++k) A[r][k] -= f * A[c][k];
        rhs[r] -= f * rhs[c];
      }
    }
    std::array<double, 3> x{};
    for (int r = 2; r >= 0; --r) {
      double s = rhs[r];
      for (int k = r + 1; k < 3; ++k) s -= A[r][k] * x[k];
      x[r] = s / A[r][r];
    }
    return x;
  };

  std::array<std::array<double, 3>, 3> ata{};
  std::array<double, 3> aty{};
  for (std::size_t e = 0; e < echoes.size(); ++e) {
    const std::array<double, 3> row{1.0, -echoes[e].te, -echoes[e].b};
    const double y = std::log(amplitudes[e] / echoes[e].weight);
    for (int i = 0; i < 3; ++i) {
      aty[i] += row[i] * y;
      for (int j = 0; j < 3; ++j) ata[i][j] += row[i] * row[j];
    }
  }
  auto x = solve3(ata, aty);
  double m0 = std::exp(x[0]), r2 = x[1], adc = x[2];

  for (int it = 0; it < 20; ++it) {
    std::array<std::array<double, 3>, 3> jtj{};
    std::array<double, 3> jtr{};
    for (std::size_t e = 0; e < echoes.size(); ++e) {
      const auto& ec = echoes[e];
      const double model = ec.weight * m0 * std::exp(-ec.te * r2 - ec.b * adc);
      const std::array<double, 3> jac{model / m0, -ec.te * model, -ec.b * model};
      const double res = amplitudes[e] - model;
      for (int i = 0; i < 3; ++i) {
        jtr[i] += jac[i] * res;
        for (int j = 0; j < 3; ++j) jtj[i][j] += jac[i] * jac[j];
      }
    }
    const auto d = solve3(jtj, jtr);
    m0 += d[0];
    r2 += d[1];
    adc += d[2];
    if (std::abs(d[0]) <= 1e-15 * std::abs(m0) && std::abs(d[1]) <= 1e-15 * std::abs(r2) &&
        std::abs(d[2]) <= 1e-15 * std::abs(adc) + 1e-300)
      break;
  }
  return {1.0 / r2, adc, m0};
}

}  // namespace fps::phantom
