#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fps/common.hpp"

namespace fps::phantom {

/// Quantitative maps: t2 in seconds, adc in mm^2/s, m0 dimensionless.
struct ParameterMaps {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> t2;
  std::vector<double> adc;
  std::vector<double> m0;

  ParameterMaps() = default;
  ParameterMaps(std::size_t h, std::size_t w)
      : height(h), width(w), t2(h * w, 0.0), adc(h * w, 0.0), m0(h * w, 0.0) {}

  std::size_t size() const { return height * width; }
};

inline constexpr double kT2Min = 0.02, kT2Max = 2.5;
inline constexpr double kAdcMin = 1e-4, kAdcMax = 3.5e-3;
inline constexpr double kM0Max = 1.5;

inline bool within_envelope(const ParameterMaps& p) {
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!(p.t2[k] >= kT2Min && p.t2[k] <= kT2Max)) return false;
    if (!(p.adc[k] >= kAdcMin && p.adc[k] <= kAdcMax)) return false;
    if (!(p.m0[k] >= 0.0 && p.m0[k] <= kM0Max)) return false;
  }
  return true;
}

/// Value band for one tissue class; each field is a [lo, hi] range.
struct TissueBand {
  double t2_lo, t2_hi;
  double adc_lo, adc_hi;
  double m0_lo, m0_hi;
};

inline constexpr TissueBand kWhiteMatter{0.07, 0.09, 0.7e-3, 0.8e-3, 0.60, 0.70};
inline constexpr TissueBand kGrayMatter{0.09, 0.11, 0.8e-3, 1.0e-3, 0.75, 0.85};
inline constexpr TissueBand kFluid{0.5, 2.0, 2.5e-3, 3.2e-3, 0.95, 1.00};

namespace detail {

struct TissueValue {
  double t2, adc, m0;
};

inline TissueValue draw(const TissueBand& b, Rng& rng) {
  return {rng.uniform(b.t2_lo, b.t2_hi), rng.uniform(b.adc_lo, b.adc_hi),
          rng.uniform(b.m0_lo, b.m0_hi)};
}

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace detail

/// Procedural head phantom. Shape 1 is a hard-edged ellipse ("head") of one
/// tissue over a background (m0 = 0, t2/adc at their lower bounds); shapes
/// 2..n_shapes are soft-edged blobs blended inside the head. With
/// probability lesion_prob the last blob is a lesion with elevated T2 and
/// perturbed ADC; its blend weight is written to lesion_alpha if given.
inline ParameterMaps generate_parameter_maps(std::uint64_t seed, std::size_t h, std::size_t w,
                                             std::size_t n_shapes, double lesion_prob,
                                             std::vector<double>* lesion_alpha = nullptr) {
  require(h >= 16 && w >= 16, ErrorKind::invalid_input, "phantom dimensions must be >= 16");
  require(n_shapes >= 1, ErrorKind::invalid_input, "n_shapes must be >= 1");
  require(lesion_prob >= 0.0 && lesion_prob <= 1.0, ErrorKind::invalid_input,
          "lesion_prob must lie in [0, 1]");
  Rng rng(seed);
  ParameterMaps p(h, w);
  std::fill(p.t2.begin(), p.t2.end(), kT2Min);
  std::fill(p.adc.begin(), p.adc.end(), kAdcMin);

  const double cy = 0.5 * h + rng.uniform(-0.04, 0.04) * h;
  const double cx = 0.5 * w + rng.uniform(-0.04, 0.04) * w;
  const double ry = rng.uniform(0.34, 0.44) * h;
  const double rx = rng.uniform(0.30, 0.40) * w;
  const auto head_tissue = detail::draw(rng.uniform() < 0.5 ? kGrayMatter : kWhiteMatter, rng);
  std::vector<char> inside(h * w, 0);
  if (lesion_alpha) lesion_alpha->assign(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
      if (dy * dy + dx * dx <= 1.0) {
        const std::size_t k = y * w + x;
        inside[k] = 1;
        p.t2[k] = head_tissue.t2;
        p.adc[k] = head_tissue.adc;
        p.m0[k] = head_tissue.m0;
      }
    }
  }

  const std::size_t n_blobs = n_shapes - 1;
  const bool lesion = n_blobs > 0 && rng.uniform() < lesion_prob;
  for (std::size_t b = 0; b < n_blobs; ++b) {
    const bool is_lesion = lesion && b + 1 == n_blobs;
    const double by = cy + rng.uniform(-0.55, 0.55) * ry;
    const double bx = cx + rng.uniform(-0.55, 0.55) * rx;
    const double sy = rng.uniform(0.12, 0.35) * ry;
    const double sx = rng.uniform(0.12, 0.35) * rx;
    const double theta = rng.uniform(0.0, M_PI);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double pick = rng.uniform();
    auto value = detail::draw(pick < 0.4 ? kWhiteMatter : (pick < 0.8 ? kGrayMatter : kFluid), rng);
    const double t2_gain = rng.uniform(1.5, 3.0);
    const double adc_gain = rng.uniform() < 0.5 ? rng.uniform(0.4, 0.7) : rng.uniform(1.3, 1.6);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t k = y * w + x;
        if (!inside[k]) continue;
        const double dy = y + 0.5 - by, dx = x + 0.5 - bx;
        const double u = (ct * dx + st * dy) / sx, v = (-st * dx + ct * dy) / sy;
        const double r = std::sqrt(u * u + v * v);
        const double alpha = 1.0 - detail::smoothstep(0.7, 1.0, r);
        if (alpha <= 0.0) continue;
        detail::TissueValue target = value;
        if (is_lesion) {
          // lesion values are relative to the tissue underneath
          target.t2 = std::clamp(p.t2[k] * t2_gain, kT2Min, kT2Max);
          target.adc = std::clamp(p.adc[k] * adc_gain, kAdcMin, kAdcMax);
          target.m0 = std::clamp(p.m0[k] * 1.1, 0.0, kM0Max);
        }
        if (is_lesion && lesion_alpha) (*lesion_alpha)[k] = alpha;
        p.t2[k] = (1.0 - alpha) * p.t2[k] + alpha * target.t2;
        p.adc[k] = (1.0 - alpha) * p.adc[k] + alpha * target.adc;
        p.m0[k] = (1.0 - alpha) * p.m0[k] + alpha * target.m0;
      }
    }
  }
  return p;
}

}  // namespace fps::phantom
