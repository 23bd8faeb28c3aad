#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fps/common.hpp"

namespace fps::kspace {

/// H x W complex field stored as separate real and imaginary planes,
/// row-major. Used both for images and their k-space.
struct ComplexImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> re;
  std::vector<double> im;

  ComplexImage() = default;
  ComplexImage(std::size_t h, std::size_t w)
      : height(h), width(w), re(h * w, 0.0), im(h * w, 0.0) {}

  std::size_t size() const { return height * width; }
  std::size_t index(std::size_t y, std::size_t x) const { return y * width + x; }

  bool same_shape(const ComplexImage& o) const {
    return height == o.height && width == o.width;
  }

  double norm() const {
    double s = 0.0;
    for (std::size_t k = 0; k < size(); ++k) s += re[k] * re[k] + im[k] * im[k];
    return std::sqrt(s);
  }

  double max_magnitude() const {
    double m = 0.0;
    for (std::size_t k = 0; k < size(); ++k) m = std::max(m, std::hypot(re[k], im[k]));
    return m;
  }

  void validate() const {
    require(height >= 1 && width >= 1, ErrorKind::invalid_input, "image must be at least 1x1");
    require(re.size() == size() && im.size() == size(), ErrorKind::shape,
            "real/imaginary planes do not match image dimensions");
    for (std::size_t k = 0; k < size(); ++k) {
      require(std::isfinite(re[k]) && std::isfinite(im[k]), ErrorKind::invalid_input,
              "non-finite value in complex image");
    }
  }
};

/// Euclidean distance between two equally shaped complex images.
inline double distance(const ComplexImage& a, const ComplexImage& b) {
  require(a.same_shape(b), ErrorKind::shape, "distance: shape mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double dr = a.re[k] - b.re[k];
    const double di = a.im[k] - b.im[k];
    s += dr * dr + di * di;
  }
  return std::sqrt(s);
}

}  // namespace fps::kspace
