#pragma once

#include <cstdint>

#include "fps/kspace/fft.hpp"

namespace fps::phantom {

/// Simulated synthetic-to-real gap: low-frequency k-space gain, smooth
/// multiplicative bias, additive complex noise.
struct DomainShiftConfig {
  double lowfreq_gain = 1.0;
  double lowfreq_radius = 0.1;  // fraction of Nyquist
  double noise_sigma = 0.0;     // fraction of max |img|
  double bias_strength = 0.0;   // < 1 keeps the bias field positive
  std::uint64_t seed = 0;

  void validate() const {
    require(std::isfinite(lowfreq_gain) && lowfreq_gain >= 0.0, ErrorKind::invalid_input,
            "shift.lowfreq_gain must be finite and >= 0");
    require(std::isfinite(lowfreq_radius) && lowfreq_radius > 0.0 && lowfreq_radius <= 1.0,
            ErrorKind::invalid_input, "shift.lowfreq_radius must lie in (0, 1]");
    require(std::isfinite(noise_sigma) && noise_sigma >= 0.0, ErrorKind::invalid_input,
            "shift.noise_sigma must be finite and >= 0");
    require(std::isfinite(bias_strength) && bias_strength >= 0.0 && bias_strength < 1.0,
            ErrorKind::invalid_input, "shift.bias_strength must lie in [0, 1)");
  }
};

/// Normalized radial frequency of unshifted k-space entry (u, v); 1 at Nyquist.
inline double radial_frequency(std::size_t u, std::size_t v, std::size_t h, std::size_t w) {
  const double fu = static_cast<double>(u) - (u > h / 2 ? static_cast<double>(h) : 0.0);
  const double fv = static_cast<double>(v) - (v > w / 2 ? static_cast<double>(w) : 0.0);
  const double ny = std::max(1.0, h / 2.0), nx = std::max(1.0, w / 2.0);
  return std::sqrt((fu / ny) * (fu / ny) + (fv / nx) * (fv / nx));
}

/// Smooth field with max |value| = 1: a random mix of low-order 2-D cosines.
inline std::vector<double> cosine_mix_field(std::size_t h, std::size_t w, Rng& rng) {
  std::vector<double> field(h * w, 0.0);
  for (int p = 0; p <= 2; ++p) {
    for (int q = 0; q <= 2; ++q) {
      if (p == 0 && q == 0) continue;
      const double a = rng.uniform(-1.0, 1.0);
      const double py = rng.uniform(0.0, 2.0 * M_PI), px = rng.uniform(0.0, 2.0 * M_PI);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          field[y * w + x] += a * std::cos(M_PI * p * (y + 0.5) / h + py) *
                              std::cos(M_PI * q * (x + 0.5) / w + px);
    }
  }
  double mx = 0.0;
  for (double v : field) mx = std::max(mx, std::abs(v));
  if (mx > 0.0)
    for (double& v : field) v /= mx;
  return field;
}

inline kspace::ComplexImage apply_domain_shift(const kspace::ComplexImage& img,
                                               const DomainShiftConfig& cfg) {
  img.validate();
  cfg.validate();
  const std::size_t h = img.height, w = img.width;
  Rng rng(cfg.seed);
  kspace::ComplexImage out = img;

  if (cfg.lowfreq_gain != 1.0) {
    auto k = kspace::fft2(out);
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v)
        if (radial_frequency(u, v, h, w) <= cfg.lowfreq_radius) {
          k.re[u * w + v] *= cfg.lowfreq_gain;
          k.im[u * w + v] *= cfg.lowfreq_gain;
        }
    out = kspace::ifft2(k);
  }

  if (cfg.bias_strength != 0.0) {
    const auto mix = cosine_mix_field(h, w, rng);
    for (std::size_t n = 0; n < out.size(); ++n) {
      const double g = 1.0 + cfg.bias_strength * mix[n];
      out.re[n] *= g;
      out.im[n] *= g;
    }
  }

  if (cfg.noise_sigma != 0.0) {
    const double sd = cfg.noise_sigma * out.max_magnitude();
    for (std::size_t n = 0; n < out.size(); ++n) {
      out.re[n] += sd * rng.normal();
      out.im[n] += sd * rng.normal();
    }
  }
  return out;
}

}  // namespace fps::phantom
