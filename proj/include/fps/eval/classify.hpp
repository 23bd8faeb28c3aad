#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fps/eval/stats.hpp"
#include "fps/phantom/parameter_maps.hpp"

namespace fps::eval {

inline constexpr std::size_t kNumFeatures = 4;
inline constexpr std::array<const char*, kNumFeatures> kFeatureNames{"t2_p75", "adc_p90", "adc_median", "delta_adc"};

struct Features {
  double t2_p75 = 0.0;
  double adc_p90 = 0.0;
  double adc_median = 0.0;
  double delta_adc = 0.0;

  std::array<double, kNumFeatures> values() const { return {t2_p75, adc_p90, adc_median, delta_adc}; }
};

struct CohortRecord {
  std::string id;
  int label = 0;  // 1 = acute (positive class)
  Features features;
};

/// delta_adc = (median(mirror) - median(lesion)) / median(mirror).
inline Features histogram_features(const std::vector<double>& lesion_t2, const std::vector<double>& lesion_adc,
                                   const std::vector<double>& mirror_adc) {
  require(!lesion_t2.empty() && !lesion_adc.empty() && !mirror_adc.empty(), ErrorKind::invalid_input,
          "histogram_features: lesion and mirror value lists must be non-empty");
  Features f;
  f.t2_p75 = percentile(lesion_t2, 75.0);
  f.adc_p90 = percentile(lesion_adc, 90.0);
  f.adc_median = median(lesion_adc);
  const double mirror = median(mirror_adc);
  require(mirror != 0.0, ErrorKind::undefined_feature, "histogram_features: mirror ADC median is zero");
  f.delta_adc = (mirror - f.adc_median) / mirror;
  return f;
}

struct LogisticModel {
  std::array<double, kNumFeatures> mean{};
  std::array<double, kNumFeatures> scale{};
  std::array<double, kNumFeatures> weights{};  // on z-scored features
  double intercept = 0.0;
  std::size_t iterations = 0;

  double logit(const Features& f) const {
    const auto v = f.values();
    double z = intercept;
    for (std::size_t j = 0; j < kNumFeatures; ++j) z += weights[j] * (v[j] - mean[j]) / scale[j];
    return z;
  }
  double probability(const Features& f) const { return 1.0 / (1.0 + std::exp(-logit(f))); }
};

inline constexpr double kLogisticPenalty = 1e-6;
inline constexpr double kLogisticTolerance = 1e-8;
inline constexpr std::size_t kLogisticMaxIter = 100;

namespace detail {

// log(1 + exp(z)) without overflow
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace detail

/// Penalized maximum likelihood by IRLS (Newton) with step halving. The
/// intercept is not penalized; features are z-scored internally, and a
/// constant feature gets unit scale.
inline LogisticModel fit_logistic(const std::vector<CohortRecord>& records) {
  require(!records.empty(), ErrorKind::invalid_input, "fit_logistic: no records");
  std::size_t pos = 0;
  for (const auto& r : records) {
    require(r.label == 0 || r.label == 1, ErrorKind::invalid_input, "fit_logistic: labels must be 0 or 1");
    for (double v : r.features.values())
      require(std::isfinite(v), ErrorKind::invalid_input, "fit_logistic: non-finite feature in record " + r.id);
    pos += r.label;
  }
  require(pos > 0 && pos < records.size(), ErrorKind::invalid_input, "fit_logistic: both classes must be present");

  const std::size_t n = records.size(), p = kNumFeatures + 1;
  LogisticModel m;
  for (std::size_t j = 0; j < kNumFeatures; ++j) {
    double s = 0;
    for (const auto& r : records) s += r.features.values()[j];
    m.mean[j] = s / n;
    double v = 0;
    for (const auto& r : records) v += std::pow(r.features.values()[j] - m.mean[j], 2);
    m.scale[j] = v > 0 ? std::sqrt(v / n) : 1.0;
  }
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = records[i].features.values();
    X(i, 0) = 1.0;
    for (std::size_t j = 0; j < kNumFeatures; ++j) X(i, j + 1) = (v[j] - m.mean[j]) / m.scale[j];
    y(i) = records[i].label;
  }
  Eigen::VectorXd pen = Eigen::VectorXd::Constant(p, kLogisticPenalty);
  pen(0) = 0.0;

  auto objective = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd z = X * b;
    double f = 0;
    for (std::size_t i = 0; i < n; ++i) f += detail::softplus(z(i)) - y(i) * z(i);
    return f + 0.5 * (pen.array() * b.array().square()).sum();
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  double f = objective(beta);
  for (m.iterations = 1; m.iterations <= kLogisticMaxIter; ++m.iterations) {
    const Eigen::VectorXd z = X * beta;
    Eigen::VectorXd mu(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      mu(i) = 1.0 / (1.0 + std::exp(-z(i)));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    const Eigen::VectorXd g = X.transpose() * (y - mu) - pen.cwiseProduct(beta);
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    H.diagonal() += pen;
    // a tiny ridge keeps H invertible for the unpenalized intercept under saturation
    H.diagonal().array() += 1e-12;
    Eigen::VectorXd step = H.ldlt().solve(g);
    double t = 1.0;
    Eigen::VectorXd next = beta + step;
    double fn = objective(next);
    while (!(fn <= f) && t > 1e-10) {
      t *= 0.5;
      next = beta + t * step;
      fn = objective(next);
    }
    const double delta = (t * step).cwiseAbs().maxCoeff();
    if (fn <= f) {
      beta = next;
      f = fn;
    }
    if (delta < kLogisticTolerance) break;
  }
  m.iterations = std::min(m.iterations, kLogisticMaxIter);
  m.intercept = beta(0);
  for (std::size_t j = 0; j < kNumFeatures; ++j) m.weights[j] = beta(j + 1);
  return m;
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  double auc = 0.0;
  std::vector<RocPoint> curve;  // from (0, 0) at +inf to (1, 1)
};

/// AUC as the Mann-Whitney statistic with ties counted 1/2; the curve has
/// one point per distinct score (positive when score >= threshold).
inline RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), ErrorKind::shape, "roc_auc: scores and labels differ in length");
  std::size_t np = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, ErrorKind::invalid_input, "roc_auc: labels must be 0 or 1");
    require(!std::isnan(scores[i]), ErrorKind::invalid_input, "roc_auc: NaN score");
    np += labels[i];
  }
  const std::size_t nn = scores.size() - np;
  require(np > 0 && nn > 0, ErrorKind::invalid_input, "roc_auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult r;
  r.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  double tp = 0, fp = 0, area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    double dtp = 0, dfp = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? dtp : dfp) += 1;
    // negatives in this tie group beat all earlier positives and tie with dtp
    area += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
    r.curve.push_back({s, fp / nn, tp / np});
  }
  r.auc = area / (static_cast<double>(np) * static_cast<double>(nn));
  return r;
}

/// Lesion and contralateral values: the mirror region reflects the lesion
/// mask about the vertical midline, minus lesion and background (m0 = 0).
struct RoiValues {
  std::vector<double> lesion_t2;
  std::vector<double> lesion_adc;
  std::vector<double> mirror_adc;
};

inline RoiValues roi_values(const phantom::ParameterMaps& maps, const std::vector<std::uint8_t>& lesion) {
  const std::size_t h = maps.height, w = maps.width;
  require(lesion.size() == h * w, ErrorKind::shape, "roi_values: lesion mask size differs from the maps");
  RoiValues v;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t k = y * w + x;
      if (!lesion[k]) continue;
      v.lesion_t2.push_back(maps.t2[k]);
      v.lesion_adc.push_back(maps.adc[k]);
      const std::size_t mk = y * w + (w - 1 - x);
      if (!lesion[mk] && maps.m0[mk] > 0.0) v.mirror_adc.push_back(maps.adc[mk]);
    }
  }
  return v;
}

struct CohortSubject {
  std::string id;
  int label = 0;
  phantom::ParameterMaps maps;
  std::vector<std::uint8_t> lesion;
};

/// Labelled phantom cohort with one lateral lesion per subject. Acute
/// lesions restrict diffusion (ADC x 0.45-0.65) with mild T2 elevation
/// (x 1.2-1.5); non-acute lesions have ADC x 1.0-1.4 and T2 x 1.6-2.4.
inline std::vector<CohortSubject> synthetic_cohort(std::size_t n, std::uint64_t seed, std::size_t h = 64,
                                                   std::size_t w = 64) {
  require(n >= 2, ErrorKind::invalid_input, "synthetic_cohort: need at least 2 subjects");
  std::vector<CohortSubject> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, i));
    CohortSubject s;
    s.label = static_cast<int>(i % 2);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "c%04zu", i);
    s.id = buf;
    s.maps = phantom::generate_parameter_maps(rng.next_u64(), h, w, 3, 0.0);
    const double t2_gain = s.label ? rng.uniform(1.2, 1.5) : rng.uniform(1.6, 2.4);
    const double adc_gain = s.label ? rng.uniform(0.45, 0.65) : rng.uniform(1.0, 1.4);
    const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double cy = h * rng.uniform(0.4, 0.6), cx = w * (0.5 + side * rng.uniform(0.14, 0.2));
    const double ry = h * rng.uniform(0.06, 0.1), rx = w * rng.uniform(0.05, 0.08);
    s.lesion.assign(h * w, 0);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        const std::size_t k = y * w + x;
        if (dy * dy + dx * dx > 1.0 || s.maps.m0[k] <= 0.0) continue;
        s.lesion[k] = 1;
        s.maps.t2[k] = std::clamp(s.maps.t2[k] * t2_gain * (1 + 0.03 * rng.normal()), phantom::kT2Min, phantom::kT2Max);
        s.maps.adc[k] =
            std::clamp(s.maps.adc[k] * adc_gain * (1 + 0.03 * rng.normal()), phantom::kAdcMin, phantom::kAdcMax);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<CohortRecord> cohort_records(const std::vector<CohortSubject>& subjects) {
  std::vector<CohortRecord> out;
  for (const auto& s : subjects) {
    const auto v = roi_values(s.maps, s.lesion);
    require(!v.lesion_t2.empty() && !v.mirror_adc.empty(), ErrorKind::undefined_feature,
            "cohort subject " + s.id + " has an empty lesion or mirror region");
    out.push_back({s.id, s.label, histogram_features(v.lesion_t2, v.lesion_adc, v.mirror_adc)});
  }
  return out;
}

}  // namespace fps::eval
