#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fps/common.hpp"

namespace fps::kspace {

/// 1-Wasserstein distance between two empirical distributions on the line,
/// the area between their CDFs.
inline double wasserstein1(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorKind::invalid_input, "wasserstein1: empty sample list");
  for (double v : a) require(std::isfinite(v), ErrorKind::invalid_input, "wasserstein1: non-finite sample");
  for (double v : b) require(std::isfinite(v), ErrorKind::invalid_input, "wasserstein1: non-finite sample");

  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());

  if (sa.size() == sb.size()) {
    double s = 0.0;
    for (std::size_t k = 0; k < sa.size(); ++k) s += std::abs(sa[k] - sb[k]);
    return s / static_cast<double>(sa.size());
  }

  // Sweep the merged breakpoints; between consecutive breakpoints both CDFs
  // are constant.
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  std::size_t ia = 0, ib = 0;
  double prev = std::min(sa.front(), sb.front());
  double total = 0.0;
  while (ia < sa.size() || ib < sb.size()) {
    const double next = (ib >= sb.size() || (ia < sa.size() && sa[ia] <= sb[ib])) ? sa[ia] : sb[ib];
    total += std::abs(static_cast<double>(ia) / na - static_cast<double>(ib) / nb) * (next - prev);
    while (ia < sa.size() && sa[ia] == next) ++ia;
    while (ib < sb.size() && sb[ib] == next) ++ib;
    prev = next;
  }
  return total;
}

}  // namespace fps::kspace
