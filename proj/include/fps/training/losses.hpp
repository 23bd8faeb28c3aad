#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "fps/autograd/ops.hpp"
#include "fps/kspace/fft.hpp"

namespace fps::training {

using ag::Var;

/// Mean complex modulus of the unitary per-plane 2-D spectrum of d
/// [..., H, W]. The gradient is Re(ifft2(Z / |Z|)) / N, zero where Z = 0.
template <class T>
Var<T> spectral_mean_abs(const Var<T>& d) {
  require(d.rank() >= 2, ErrorKind::shape, "spectral_mean_abs: need at least [H, W]");
  const std::size_t H = d.dim(d.rank() - 2), W = d.dim(d.rank() - 1), HW = H * W, planes = d.numel() / HW;
  auto phase = std::make_shared<std::vector<std::complex<double>>>(d.numel());
  std::vector<std::complex<double>> buf(HW);
  double total = 0;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t k = 0; k < HW; ++k) buf[k] = {static_cast<double>(d.value()[p * HW + k]), 0.0};
    kspace::detail::transform_plane(buf.data(), H, W, -1);
    for (std::size_t k = 0; k < HW; ++k) {
      const double m = std::abs(buf[k]);
      total += m;
      (*phase)[p * HW + k] = m > 0 ? buf[k] / m : std::complex<double>(0, 0);
    }
  }
  const double N = static_cast<double>(d.numel());
  return ag::make_result<T>({1}, {static_cast<T>(total / N)}, {d}, [=](ag::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double scale = static_cast<double>(self.grad[0]) / N;
    std::vector<std::complex<double>> b(HW);
    for (std::size_t p = 0; p < planes; ++p) {
      std::copy_n(phase->begin() + p * HW, HW, b.begin());
      kspace::detail::transform_plane(b.data(), H, W, +1);
      for (std::size_t k = 0; k < HW; ++k) g[p * HW + k] += static_cast<T>(scale * b[k].real());
    }
  });
}

/// mean|x - y| + lambda * mean|fft2(x) - fft2(y)|.
template <class T>
Var<T> sf_loss(const Var<T>& x, const Var<T>& y, double lambda_freq) {
  require(x.shape() == y.shape(), ErrorKind::shape,
          "sf_loss: shape mismatch " + ag::shape_str(x.shape()) + " vs " + ag::shape_str(y.shape()));
  auto spatial = ag::mean_abs_diff(x, y);
  if (lambda_freq == 0) return spatial;
  return ag::add(spatial, ag::scale(spectral_mean_abs(ag::sub(x, y)), static_cast<T>(lambda_freq)));
}

/// Unlabeled-term ramp exp(-5 (1 - iteration / total)^2).
inline double lambda_real(std::size_t iteration, std::size_t total) {
  require(total >= 1, ErrorKind::invalid_input, "lambda_real: total must be >= 1");
  require(iteration <= total, ErrorKind::invalid_input,
          "lambda_real: iteration " + std::to_string(iteration) + " exceeds total " + std::to_string(total));
  const double p = 1.0 - static_cast<double>(iteration) / static_cast<double>(total);
  return std::exp(-5.0 * p * p);
}

struct LossTerms {
  double con = 0, sup = 0, sup_teacher = 0, un_syn = 0, un_real = 0, lambda_real = 0, total = 0;
};

template <class T>
struct LossResult {
  Var<T> total;  // differentiable total
  LossTerms terms;
};

/// Multi-scale outputs of one network pass, O_1 (full resolution) first.
template <class T>
using Outputs = std::vector<Var<T>>;

namespace detail {

inline void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) fail(ErrorKind::divergence, std::string("non-finite loss term ") + term);
}

}  // namespace detail

/// L_con + L_sup + L'_sup + L_un^syn + lambda_real * L_un^real. Teacher
/// outputs are constants: L'_sup contributes value but no gradient.
template <class T>
LossResult<T> total_loss(const Outputs<T>& student_syn, const Outputs<T>& student_real, const Outputs<T>& teacher_syn,
                         const Outputs<T>& teacher_real, const Var<T>& target, std::size_t iteration,
                         std::size_t total_iterations, double lambda_freq) {
  const std::size_t S = student_syn.size();
  require(S >= 1 && student_real.size() == S && teacher_syn.size() == S && teacher_real.size() == S, ErrorKind::shape,
          "total_loss: all four output lists need the same number of scales");
  for (const auto& t : teacher_syn)
    require(!t.requires_grad(), ErrorKind::state, "total_loss: teacher outputs must not carry gradients");
  for (const auto& t : teacher_real)
    require(!t.requires_grad(), ErrorKind::state, "total_loss: teacher outputs must not carry gradients");

  LossResult<T> r;
  Var<T> con;
  for (std::size_t s = 0; s < S; ++s) {
    auto term = ag::add(sf_loss(student_real[s], teacher_real[s], lambda_freq),
                        sf_loss(student_syn[s], teacher_syn[s], lambda_freq));
    con = con.defined() ? ag::add(con, term) : term;
  }
  auto sup = sf_loss(student_syn[0], target, lambda_freq);
  auto sup_t = sf_loss(teacher_syn[0], target, lambda_freq);
  auto un_syn = sf_loss(student_syn[0], teacher_syn[0], lambda_freq);
  auto un_real = sf_loss(student_real[0], teacher_real[0], lambda_freq);
  const double lr = lambda_real(iteration, total_iterations);

  r.terms = {static_cast<double>(con.item()),    static_cast<double>(sup.item()),
             static_cast<double>(sup_t.item()),  static_cast<double>(un_syn.item()),
             static_cast<double>(un_real.item()), lr, 0.0};
  detail::require_finite(r.terms.con, "L_con");
  detail::require_finite(r.terms.sup, "L_sup");
  detail::require_finite(r.terms.sup_teacher, "L'_sup");
  detail::require_finite(r.terms.un_syn, "L_un^syn");
  detail::require_finite(r.terms.un_real, "L_un^real");

  r.total = ag::add(ag::add(ag::add(con, sup), ag::add(sup_t, un_syn)), ag::scale(un_real, static_cast<T>(lr)));
  r.terms.total = static_cast<double>(r.total.item());
  detail::require_finite(r.terms.total, "L_total");
  return r;
}

/// Source-only objective: L_sup alone.
template <class T>
LossResult<T> supervised_loss(const Outputs<T>& student_syn, const Var<T>& target, double lambda_freq) {
  require(!student_syn.empty(), ErrorKind::shape, "supervised_loss: no outputs");
  LossResult<T> r;
  r.total = sf_loss(student_syn[0], target, lambda_freq);
  r.terms.sup = r.terms.total = static_cast<double>(r.total.item());
  detail::require_finite(r.terms.sup, "L_sup");
  return r;
}

}  // namespace fps::training
