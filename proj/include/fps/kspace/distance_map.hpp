#pragma once

#include <algorithm>
#include <thread>
#include <vector>

#include "fps/kspace/fft.hpp"
#include "fps/kspace/wasserstein.hpp"

namespace fps::kspace {

/// Per-frequency 1-Wasserstein distances between two corpora's amplitude
/// spectra, in center-shifted indexing.
struct DistanceMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> raw;
  std::vector<double> normalized;
  std::size_t n_syn = 0;
  std::size_t n_real = 0;

  double at(std::size_t i, std::size_t j) const { return normalized[i * width + j]; }
};

/// Global min-max normalization; tiny guards the constant case.
inline std::vector<double> minmax_normalize(const std::vector<double>& raw, double tiny = 1e-12) {
  if (raw.empty()) return {};
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  const double mn = *lo, range = *hi - *lo;
  std::vector<double> out(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) out[k] = (raw[k] - mn) / (range + tiny);
  return out;
}

inline DistanceMap distance_map_from_raw(std::vector<double> raw, std::size_t h, std::size_t w,
                                         std::size_t n_syn, std::size_t n_real) {
  require(raw.size() == h * w, ErrorKind::shape, "distance map: raw plane does not match H x W");
  DistanceMap d;
  d.height = h;
  d.width = w;
  d.normalized = minmax_normalize(raw);
  d.raw = std::move(raw);
  d.n_syn = n_syn;
  d.n_real = n_real;
  return d;
}

/// Offline stage: W1 between the two corpora at every frequency entry.
inline DistanceMap build_distance_map(const std::vector<ComplexImage>& syn,
                                      const std::vector<ComplexImage>& real) {
  require(!syn.empty() && !real.empty(), ErrorKind::invalid_input,
          "build_distance_map: both corpora must be non-empty");
  const std::size_t h = syn.front().height, w = syn.front().width;
  auto check = [&](const ComplexImage& img) {
    require(img.height == h && img.width == w, ErrorKind::shape,
            "build_distance_map: all images must share H x W");
  };
  for (const auto& img : syn) check(img);
  for (const auto& img : real) check(img);

  const std::size_t n = syn.size(), m = real.size(), hw = h * w;
  // entry-major sample tables so each W1 reads a contiguous slice
  std::vector<double> sa(hw * n), sb(hw * m);
  for (std::size_t s = 0; s < n; ++s) {
    const auto amp = amplitude_spectrum(syn[s]);
    for (std::size_t e = 0; e < hw; ++e) sa[e * n + s] = amp[e];
  }
  for (std::size_t s = 0; s < m; ++s) {
    const auto amp = amplitude_spectrum(real[s]);
    for (std::size_t e = 0; e < hw; ++e) sb[e * m + s] = amp[e];
  }

  std::vector<double> raw(hw);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t e = begin; e < end; ++e)
      raw[e] = wasserstein1(std::span<const double>(sa.data() + e * n, n),
                            std::span<const double>(sb.data() + e * m, m));
  };
  const unsigned threads = std::min<unsigned>(thread_budget(), static_cast<unsigned>(h));
  if (threads <= 1) {
    work(0, hw);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (hw + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = std::min(hw, t * chunk), e = std::min(hw, b + chunk);
      pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return distance_map_from_raw(std::move(raw), h, w, n, m);
}

}  // namespace fps::kspace
