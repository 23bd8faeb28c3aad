#pragma once

#include <cstdint>

#include "fps/kspace/distance_map.hpp"

namespace fps::kspace {

enum class PerturbationMode { single_frequency, full_spectrum };

struct PerturbationConfig {
  PerturbationMode mode = PerturbationMode::full_spectrum;
  double epsilon = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(std::isfinite(epsilon) && epsilon >= 0.0, ErrorKind::invalid_input,
            "perturbation epsilon must be finite and >= 0");
  }
};

/// Unit-norm plane wave for the center-shifted frequency (i, j): the
/// normalized inverse transform of a one-hot spectrum.
inline ComplexImage plane_wave(std::size_t i, std::size_t j, std::size_t h, std::size_t w) {
  require(h >= 1 && w >= 1, ErrorKind::invalid_input, "plane_wave: empty grid");
  require(i < h && j < w, ErrorKind::bounds, "plane_wave: frequency index out of range");
  ComplexImage onehot(h, w);
  onehot.re[unshifted_index(i, j, h, w)] = 1.0;
  ComplexImage f = ifft2(onehot);
  const double n = f.norm();
  for (std::size_t k = 0; k < f.size(); ++k) {
    f.re[k] /= n;
    f.im[k] /= n;
  }
  return f;
}

/// Which frequency and sign a single-frequency draw selected.
struct PerturbationDraw {
  std::size_t i = 0;
  std::size_t j = 0;
  int sign = 1;
};

/// Adds r * eps * D(i,j) * F(i,j) to the image. Single-frequency mode
/// perturbs one uniformly drawn entry; full-spectrum mode draws an
/// independent sign per entry and adds the whole sum, applied through
/// k-space since the plane waves form the unitary basis.
inline ComplexImage perturb_image(const ComplexImage& img, const DistanceMap& dmap,
                                  const PerturbationConfig& cfg, PerturbationDraw* draw = nullptr) {
  cfg.validate();
  require(img.height == dmap.height && img.width == dmap.width, ErrorKind::shape,
          "perturb_image: distance map shape differs from image shape");
  const std::size_t h = img.height, w = img.width;
  Rng rng(cfg.seed);
  ComplexImage out = img;

  if (cfg.mode == PerturbationMode::single_frequency) {
    const std::size_t e = rng.below(h * w);
    const int r = rng.sign();
    const std::size_t i = e / w, j = e % w;
    if (draw) *draw = {i, j, r};
    const double amp = cfg.epsilon * r * dmap.at(i, j);
    if (amp == 0.0) return out;
    const ComplexImage f = plane_wave(i, j, h, w);
    for (std::size_t k = 0; k < out.size(); ++k) {
      out.re[k] += amp * f.re[k];
      out.im[k] += amp * f.im[k];
    }
    return out;
  }

  ComplexImage delta(h, w);
  bool any = false;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const int r = rng.sign();
      const double amp = cfg.epsilon * r * dmap.at(i, j);
      delta.re[unshifted_index(i, j, h, w)] = amp;
      any = any || amp != 0.0;
    }
  }
  if (!any) return out;
  const ComplexImage field = ifft2(delta);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out.re[k] += field.re[k];
    out.im[k] += field.im[k];
  }
  return out;
}

}  // namespace fps::kspace
