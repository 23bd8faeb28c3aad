#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fps/common.hpp"

namespace fps::eval {

enum class MaskPolicy { full, display_range, roi };

inline const char* to_string(MaskPolicy p) {
  switch (p) {
    case MaskPolicy::full: return "full";
    case MaskPolicy::display_range: return "display-range";
    case MaskPolicy::roi: return "roi";
  }
  return "unknown";
}

/// Which entries enter the metrics. display_range keeps entries whose
/// reference value lies in [lo, hi]; roi keeps the nonzero entries of roi.
struct Mask {
  MaskPolicy policy = MaskPolicy::full;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::uint8_t> roi;

  static Mask full() { return {}; }
  static Mask display_range(double lo, double hi) { return {MaskPolicy::display_range, lo, hi, {}}; }
  static Mask region(std::vector<std::uint8_t> roi) { return {MaskPolicy::roi, 0.0, 0.0, std::move(roi)}; }

  std::vector<std::uint8_t> resolve(const std::vector<double>& ref) const {
    std::vector<std::uint8_t> m(ref.size(), 1);
    if (policy == MaskPolicy::display_range) {
      require(lo <= hi, ErrorKind::invalid_input, "display range needs lo <= hi");
      for (std::size_t k = 0; k < ref.size(); ++k) m[k] = ref[k] >= lo && ref[k] <= hi;
    } else if (policy == MaskPolicy::roi) {
      require(roi.size() == ref.size(), ErrorKind::shape, "roi mask size differs from the image");
      for (std::size_t k = 0; k < ref.size(); ++k) m[k] = roi[k] != 0;
    }
    return m;
  }
};

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

struct MetricReport {
  double mae = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
  double nrmse = 0.0;
  MaskPolicy mask_policy = MaskPolicy::full;
};

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

namespace detail {

inline std::vector<double> gaussian_window() {
  const int r = kSsimWindow / 2;
  std::vector<double> g(kSsimWindow * kSsimWindow);
  double sum = 0.0;
  for (int y = -r; y <= r; ++y)
    for (int x = -r; x <= r; ++x) sum += g[(y + r) * kSsimWindow + (x + r)] = std::exp(-(x * x + y * y) / (2 * kSsimSigma * kSsimSigma));
  for (auto& v : g) v /= sum;
  return g;
}

}  // namespace detail

/// Local SSIM at every window position fully inside the image (row-major,
/// (h-10) x (w-10)). L is the data range used for the stability constants.
inline std::vector<double> ssim_map(const std::vector<double>& a, const std::vector<double>& b, std::size_t h,
                                    std::size_t w, double L) {
  require(a.size() == h * w && b.size() == h * w, ErrorKind::shape, "ssim: image sizes differ");
  require(h >= kSsimWindow && w >= kSsimWindow, ErrorKind::shape, "ssim: image smaller than the 11x11 window");
  static const std::vector<double> g = detail::gaussian_window();
  const double c1 = (kSsimK1 * L) * (kSsimK1 * L), c2 = (kSsimK2 * L) * (kSsimK2 * L);
  const std::size_t oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double* pa = &a[(y + i) * w + x];
        const double* pb = &b[(y + i) * w + x];
        const double* pg = &g[i * kSsimWindow];
        for (std::size_t j = 0; j < kSsimWindow; ++j) {
          ma += pg[j] * pa[j];
          mb += pg[j] * pb[j];
          saa += pg[j] * pa[j] * pa[j];
          sbb += pg[j] * pb[j] * pb[j];
          sab += pg[j] * pa[j] * pb[j];
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      out[y * ow + x] = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return out;
}

/// MAE, PSNR and NRMSE over the masked entries; SSIM averages the local
/// map over windows whose centre is masked. L = max(ref) - min(ref) over
/// the mask.
inline MetricReport image_metrics(const std::vector<double>& pred, const std::vector<double>& ref, std::size_t h,
                                  std::size_t w, const Mask& mask = Mask::full()) {
  require(pred.size() == h * w && ref.size() == h * w, ErrorKind::shape,
          "image_metrics: pred and ref must both be " + std::to_string(h) + "x" + std::to_string(w));
  for (std::size_t k = 0; k < pred.size(); ++k)
    require(std::isfinite(pred[k]) && std::isfinite(ref[k]), ErrorKind::invalid_input,
            "image_metrics: non-finite value at index " + std::to_string(k));
  const auto m = mask.resolve(ref);
  double abs_sum = 0, sq_sum = 0, ref_sq = 0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n = 0;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    if (!m[k]) continue;
    const double d = pred[k] - ref[k];
    abs_sum += std::abs(d);
    sq_sum += d * d;
    ref_sq += ref[k] * ref[k];
    lo = std::min(lo, ref[k]);
    hi = std::max(hi, ref[k]);
    ++n;
  }
  require(n > 0, ErrorKind::invalid_input, "image_metrics: mask selects no entries");
  const double L = hi - lo;
  require(L > 0.0, ErrorKind::metric_undefined, "image_metrics: reference range is zero; psnr and ssim undefined");

  MetricReport r;
  r.mask_policy = mask.policy;
  r.mae = abs_sum / n;
  const double mse = sq_sum / n;
  r.psnr = mse == 0.0 ? kPsnrIdentical : 10.0 * std::log10(L * L / mse);
  r.nrmse = std::sqrt(sq_sum) / std::sqrt(ref_sq);

  const auto s = ssim_map(pred, ref, h, w, L);
  const std::size_t half = kSsimWindow / 2, ow = w - kSsimWindow + 1;
  double ssum = 0;
  std::size_t sn = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const std::size_t y = k / ow + half, x = k % ow + half;
    if (!m[y * w + x]) continue;
    ssum += s[k];
    ++sn;
  }
  require(sn > 0, ErrorKind::metric_undefined, "image_metrics: no SSIM window is centred inside the mask");
  r.ssim = ssum / sn;
  return r;
}

inline constexpr const char* kMetricHeader = "id\tmap\tmask\tmae\tssim\tpsnr\tnrmse";

inline std::string format_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string metric_row(const std::string& id, const std::string& map, const MetricReport& r) {
  return id + "\t" + map + "\t" + to_string(r.mask_policy) + "\t" + format_value(r.mae) + "\t" + format_value(r.ssim) +
         "\t" + format_value(r.psnr) + "\t" + format_value(r.nrmse);
}

}  // namespace fps::eval
