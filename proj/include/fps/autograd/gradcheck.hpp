#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fps/autograd/tensor.hpp"

namespace fps::ag {

struct GradCheckOptions {
  double step = 1e-6;            // central-difference step
  std::size_t max_entries = 64;  // sampled entries per tensor; 0 checks all
  double floor = 1e-8;           // denominator floor for tiny gradients
  std::uint64_t seed = 1;
};

struct TensorGradError {
  std::string name;
  double max_rel_error = 0;
  double max_abs_analytic = 0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst;
  std::vector<TensorGradError> tensors;
};

/// Compares analytic gradients of the scalar `loss()` with respect to each
/// named tensor against central finite differences. The relative error of a
/// tensor is max|a - n| / max(max|a|, max|n|, floor) over its checked entries.
template <class T>
GradCheckReport check_gradients(const std::function<Var<T>()>& loss,
                                std::vector<std::pair<std::string, Var<T>>> tensors,
                                const GradCheckOptions& opt = {}) {
  for (auto& [name, v] : tensors) {
    v.set_requires_grad(true);
    v.zero_grad();
  }
  backward(loss());

  GradCheckReport report;
  Rng rng(opt.seed);
  for (auto& [name, v] : tensors) {
    std::vector<T> analytic = v.grad();
    if (analytic.empty()) analytic.assign(v.numel(), T(0));
    for (std::size_t i = 0; i < analytic.size(); ++i)
      if (!std::isfinite(static_cast<double>(analytic[i])))
        fail(ErrorKind::divergence, "check_gradients: non-finite gradient in '" + name + "' at entry " +
                                        std::to_string(i));

    std::vector<std::size_t> idx(v.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_entries && idx.size() > opt.max_entries) {
      for (std::size_t i = 0; i < opt.max_entries; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      idx.resize(opt.max_entries);
    }

    double max_diff = 0, max_a = 0, max_n = 0;
    for (std::size_t i : idx) {
      T& x = v.value()[i];
      const T saved = x;
      x = static_cast<T>(saved + opt.step);
      const double lp = loss().item();
      x = static_cast<T>(saved - opt.step);
      const double lm = loss().item();
      x = saved;
      const double numeric = (lp - lm) / (2 * opt.step);
      if (!std::isfinite(numeric))
        fail(ErrorKind::divergence, "check_gradients: non-finite finite difference in '" + name + "'");
      max_diff = std::max(max_diff, std::abs(numeric - static_cast<double>(analytic[i])));
      max_a = std::max(max_a, std::abs(static_cast<double>(analytic[i])));
      max_n = std::max(max_n, std::abs(numeric));
    }
    TensorGradError te{name, max_diff / std::max({max_a, max_n, opt.floor}), max_a, idx.size()};
    if (te.max_rel_error > report.max_rel_error || report.worst.empty()) {
      if (te.max_rel_error >= report.max_rel_error) report.worst = name;
      report.max_rel_error = std::max(report.max_rel_error, te.max_rel_error);
    }
    report.tensors.push_back(std::move(te));
  }
  return report;
}

}  // namespace fps::ag
