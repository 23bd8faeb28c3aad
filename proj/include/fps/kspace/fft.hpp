#pragma once

#include <complex>
#include <cstddef>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "fps/kspace/complex_image.hpp"

namespace fps::kspace {

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// exp(-2 pi i k / n) for k < n, cached per size and thread.
inline const std::vector<std::complex<double>>& twiddles(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::vector<std::complex<double>>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<double>> t(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    t[k] = {std::cos(ang), std::sin(ang)};
  }
  return cache.emplace(n, std::move(t)).first->second;
}

/// In-place unnormalized DFT, sign = -1 forward, +1 inverse.
/// Radix-2 for powers of two, direct evaluation otherwise.
inline void dft1d(std::complex<double>* v, std::size_t n, int sign) {
  if (n <= 1) return;
  const auto& tw = twiddles(n);
  auto w_at = [&](std::size_t k) { return sign < 0 ? tw[k % n] : std::conj(tw[k % n]); };
  if (is_pow2(n)) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(v[i], v[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t stride = n / len;
      for (std::size_t i = 0; i < n; i += len) {
        for (std::size_t k = 0; k < len / 2; ++k) {
          const auto u = v[i + k];
          const auto t = v[i + k + len / 2] * w_at(k * stride);
          v[i + k] = u + t;
          v[i + k + len / 2] = u - t;
        }
      }
    }
    return;
  }
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) acc += v[t] * w_at(k * t);
    out[k] = acc;
  }
  std::copy(out.begin(), out.end(), v);
}

/// Unitary 2-D transform of a row-major complex plane, in place.
inline void transform_plane(std::complex<double>* data, std::size_t h, std::size_t w, int sign) {
  for (std::size_t y = 0; y < h; ++y) dft1d(data + y * w, w, sign);
  std::vector<std::complex<double>> col(h);
  const double scale = 1.0 / std::sqrt(static_cast<double>(h * w));
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) col[y] = data[y * w + x];
    dft1d(col.data(), h, sign);
    for (std::size_t y = 0; y < h; ++y) data[y * w + x] = col[y] * scale;
  }
}

inline ComplexImage transform2d(const ComplexImage& img, int sign) {
  img.validate();
  const std::size_t h = img.height, w = img.width;
  std::vector<std::complex<double>> buf(h * w);
  for (std::size_t k = 0; k < h * w; ++k) buf[k] = {img.re[k], img.im[k]};
  transform_plane(buf.data(), h, w, sign);
  ComplexImage out(h, w);
  for (std::size_t k = 0; k < h * w; ++k) {
    out.re[k] = buf[k].real();
    out.im[k] = buf[k].imag();
  }
  return out;
}

}  // namespace detail

/// Unitary 2-D DFT: X(u,v) = (HW)^-1/2 sum x(y,x) exp(-2 pi i (uy/H + vx/W)).
inline ComplexImage fft2(const ComplexImage& img) { return detail::transform2d(img, -1); }

/// Inverse of fft2; also unitary.
inline ComplexImage ifft2(const ComplexImage& spec) { return detail::transform2d(spec, +1); }

/// Row-major index of the unshifted frequency that lands at (i, j) once the
/// spectrum is center-shifted (DC at (H/2, W/2), integer division).
inline std::size_t unshifted_index(std::size_t i, std::size_t j, std::size_t h, std::size_t w) {
  const std::size_t u = (i + h - h / 2) % h;
  const std::size_t v = (j + w - w / 2) % w;
  return u * w + v;
}

/// Center-shift a plane: out(i, j) = in(unshifted(i, j)).
template <class T>
std::vector<T> fftshift(const std::vector<T>& plane, std::size_t h, std::size_t w) {
  std::vector<T> out(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = plane[unshifted_index(i, j, h, w)];
  return out;
}

template <class T>
std::vector<T> ifftshift(const std::vector<T>& plane, std::size_t h, std::size_t w) {
  std::vector<T> out(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out[unshifted_index(i, j, h, w)] = plane[i * w + j];
  return out;
}

/// |fft2(img)|, center-shifted so DC sits at (H/2, W/2).
inline std::vector<double> amplitude_spectrum(const ComplexImage& img) {
  const ComplexImage k = fft2(img);
  std::vector<double> mag(k.size());
  for (std::size_t n = 0; n < k.size(); ++n) mag[n] = std::hypot(k.re[n], k.im[n]);
  return fftshift(mag, k.height, k.width);
}

}  // namespace fps::kspace
