#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <Eigen/Core>

#include "fps/autograd/tensor.hpp"

namespace fps::ag {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

namespace detail {

template <class T>
void check_same(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::shape,
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void check_rank(const Var<T>& a, std::size_t r, const char* op) {
  require(a.rank() == r, ErrorKind::shape,
          std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same(a, b, "add");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  return make_result<T>(a.shape(), std::move(v), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same(a, b, "sub");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  return make_result<T>(a.shape(), std::move(v), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      const T s = k == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same(a, b, "mul");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  return make_result<T>(a.shape(), std::move(v), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = s * a.value()[i];
  return make_result<T>(a.shape(), std::move(v), {a}, [s](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

/// a + c where c is a constant array of the same size.
template <class T>
Var<T> add_const(const Var<T>& a, const std::vector<T>& c) {
  require(c.size() == a.numel(), ErrorKind::shape, "add_const: size mismatch");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + c[i];
  return make_result<T>(a.shape(), std::move(v), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T, class F, class DF>
Var<T> unary(const Var<T>& a, F f, DF df) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(a.value()[i]);
  return make_result<T>(a.shape(), std::move(v), {a}, [df](Node<T>& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p->value[i], self.value[i]);
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return unary(a, [](T x) { return x > T(0) ? x : T(0); },
               [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
               [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> gelu(const Var<T>& a) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return unary(
      a, [=](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [=](T x, T) { return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * std::exp(-T(0.5) * x * x) * inv_sqrt2pi; });
}

// ---------------------------------------------------------------- shape ops

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  require(numel(s) == a.numel(), ErrorKind::shape,
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(s));
  return make_result<T>(std::move(s), a.value(), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// out[i] = a[index[i]]; backward scatters. Covers permutations, window
/// partitioning and cyclic shifts.
template <class T>
Var<T> gather(const Var<T>& a, std::shared_ptr<const std::vector<std::size_t>> index, Shape out_shape) {
  require(numel(out_shape) == index->size(), ErrorKind::shape, "gather: index size does not match shape");
  std::vector<T> v(index->size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[(*index)[i]];
  return make_result<T>(std::move(out_shape), std::move(v), {a}, [index](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < index->size(); ++i) g[(*index)[i]] += self.grad[i];
  });
}

/// Channel slice [c0, c1) of a [B, C, H, W] tensor.
template <class T>
Var<T> slice_channels(const Var<T>& a, std::size_t c0, std::size_t c1) {
  detail::check_rank(a, 4, "slice_channels");
  const std::size_t B = a.dim(0), C = a.dim(1), HW = a.dim(2) * a.dim(3);
  require(c0 < c1 && c1 <= C, ErrorKind::shape, "slice_channels: bad range");
  const std::size_t Cs = c1 - c0;
  std::vector<T> v(B * Cs * HW);
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(a.value().begin() + (b * C + c0) * HW, Cs * HW, v.begin() + b * Cs * HW);
  return make_result<T>({B, Cs, a.dim(2), a.dim(3)}, std::move(v), {a}, [=](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < Cs * HW; ++i) g[(b * C + c0) * HW + i] += self.grad[b * Cs * HW + i];
  });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), ErrorKind::shape, "concat_channels: no inputs");
  const std::size_t B = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3), HW = H * W;
  std::size_t C = 0;
  std::vector<std::size_t> offs;
  for (const auto& p : parts) {
    detail::check_rank(p, 4, "concat_channels");
    require(p.dim(0) == B && p.dim(2) == H && p.dim(3) == W, ErrorKind::shape,
            "concat_channels: batch/spatial mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    offs.push_back(C);
    C += p.dim(1);
  }
  std::vector<T> v(B * C * HW);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t Ck = parts[k].dim(1);
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(parts[k].value().begin() + b * Ck * HW, Ck * HW, v.begin() + (b * C + offs[k]) * HW);
  }
  return make_result<T>({B, C, H, W}, std::move(v), parts, [=](Node<T>& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      const std::size_t Ck = p->shape[1];
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < Ck * HW; ++i) g[b * Ck * HW + i] += self.grad[(b * C + offs[k]) * HW + i];
    }
  });
}

// ---------------------------------------------------------------- dense layers

/// y = x w^T + b for x [N, Din], w [Dout, Din], b [Dout] (optional).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  detail::check_rank(x, 2, "linear");
  detail::check_rank(w, 2, "linear weight");
  const std::size_t N = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
  require(w.dim(1) == Din, ErrorKind::shape,
          "linear: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  const bool has_b = b.defined();
  if (has_b) require(b.numel() == Dout, ErrorKind::shape, "linear: bias size mismatch");
  // Row-at-a-time so each output row is bitwise independent of N.
  std::vector<T> wt(Din * Dout);
  for (std::size_t o = 0; o < Dout; ++o)
    for (std::size_t i = 0; i < Din; ++i) wt[i * Dout + o] = w.value()[o * Din + i];
  std::vector<T> v(N * Dout, T(0));
  for (std::size_t n = 0; n < N; ++n) {
    T* y = v.data() + n * Dout;
    if (has_b) std::copy_n(b.value().data(), Dout, y);
    const T* xr = x.value().data() + n * Din;
    for (std::size_t i = 0; i < Din; ++i) {
      const T xi = xr[i];
      const T* wr = wt.data() + i * Dout;
      for (std::size_t o = 0; o < Dout; ++o) y[o] += xi * wr[o];
    }
  }
  std::vector<Var<T>> parents{x, w};
  if (has_b) parents.push_back(b);
  return make_result<T>({N, Dout}, std::move(v), parents, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    CMapMat<T> dY(self.grad.data(), N, Dout);
    if (px->requires_grad)
      MapMat<T>(px->ensure_grad().data(), N, Din).noalias() += dY * CMapMat<T>(pw->value.data(), Dout, Din);
    if (pw->requires_grad)
      MapMat<T>(pw->ensure_grad().data(), Dout, Din).noalias() += dY.transpose() * CMapMat<T>(px->value.data(), N, Din);
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->ensure_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < Dout; ++o) gb[o] += self.grad[n * Dout + o];
    }
  });
}

namespace detail {

struct ConvGeom {
  std::size_t B, Ci, H, W, Co, k, stride, pad, Ho, Wo;
};

/// Per-thread reusable buffer; contents are unspecified on return.
template <class T>
T* scratch(std::size_t n) {
  thread_local std::vector<T> buf;
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

/// Output columns [lo, hi) whose input column ox*stride + q - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t n_out, std::size_t n_in, std::size_t stride,
                                                      std::size_t q, std::size_t pad) {
  std::size_t lo = q >= pad ? 0 : (pad - q + stride - 1) / stride;
  std::size_t hi = n_in + pad > q ? (n_in + pad - q - 1) / stride + 1 : 0;
  lo = std::min(lo, n_out);
  hi = std::clamp(hi, lo, n_out);
  return {lo, hi};
}

template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t HWo = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.Ci; ++c)
    for (std::size_t p = 0; p < g.k; ++p) {
      const auto [y0, y1] = valid_span(g.Ho, g.H, g.stride, p, g.pad);
      for (std::size_t q = 0; q < g.k; ++q) {
        const auto [x0, x1] = valid_span(g.Wo, g.W, g.stride, q, g.pad);
        T* row = cols + ((c * g.k + p) * g.k + q) * HWo;
        std::fill(row, row + y0 * g.Wo, T(0));
        for (std::size_t oy = y0; oy < y1; ++oy) {
          T* out = row + oy * g.Wo;
          const T* in = x + (c * g.H + oy * g.stride + p - g.pad) * g.W;
          std::fill(out, out + x0, T(0));
          if (g.stride == 1)
            std::copy(in + x0 + q - g.pad, in + x1 + q - g.pad, out + x0);
          else
            for (std::size_t ox = x0; ox < x1; ++ox) out[ox] = in[ox * g.stride + q - g.pad];
          std::fill(out + x1, out + g.Wo, T(0));
        }
        std::fill(row + y1 * g.Wo, row + HWo, T(0));
      }
    }
}

template <class T>
void col2im(const T* cols, const ConvGeom& g, T* dx) {
  const std::size_t HWo = g.Ho * g.Wo;
  for (std::size_t c = 0; c < g.Ci; ++c)
    for (std::size_t p = 0; p < g.k; ++p) {
      const auto [y0, y1] = valid_span(g.Ho, g.H, g.stride, p, g.pad);
      for (std::size_t q = 0; q < g.k; ++q) {
        const auto [x0, x1] = valid_span(g.Wo, g.W, g.stride, q, g.pad);
        const T* row = cols + ((c * g.k + p) * g.k + q) * HWo;
        for (std::size_t oy = y0; oy < y1; ++oy) {
          const T* in = row + oy * g.Wo;
          T* out = dx + (c * g.H + oy * g.stride + p - g.pad) * g.W;
          for (std::size_t ox = x0; ox < x1; ++ox) out[ox * g.stride + q - g.pad] += in[ox];
        }
      }
    }
}

}  // namespace detail

/// 2-D cross-correlation, x [B, Ci, H, W], w [Co, Ci, k, k], b [Co] optional,
/// zero padding `pad` on every side.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride = 1, std::size_t pad = 0) {
  detail::check_rank(x, 4, "conv2d");
  detail::check_rank(w, 4, "conv2d weight");
  detail::ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad, 0, 0};
  require(w.dim(1) == g.Ci && w.dim(3) == g.k, ErrorKind::shape,
          "conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  require(g.H + 2 * pad >= g.k && g.W + 2 * pad >= g.k && stride >= 1, ErrorKind::shape, "conv2d: kernel larger than input");
  g.Ho = (g.H + 2 * pad - g.k) / stride + 1;
  g.Wo = (g.W + 2 * pad - g.k) / stride + 1;
  const bool has_b = b.defined();
  if (has_b) require(b.numel() == g.Co, ErrorKind::shape, "conv2d: bias size mismatch");
  const std::size_t K = g.Ci * g.k * g.k, HWo = g.Ho * g.Wo, HWi = g.H * g.W;
  const bool direct = g.k == 1 && stride == 1 && pad == 0;

  std::vector<T> v(g.B * g.Co * HWo);
  T* cols = direct ? nullptr : detail::scratch<T>(K * HWo);
  CMapMat<T> Wm(w.value().data(), g.Co, K);
  for (std::size_t n = 0; n < g.B; ++n) {
    const T* xb = x.value().data() + n * g.Ci * HWi;
    const T* src = xb;
    if (!direct) {
      detail::im2col(xb, g, cols);
      src = cols;
    }
    MapMat<T> Y(v.data() + n * g.Co * HWo, g.Co, HWo);
    Y.noalias() = Wm * CMapMat<T>(src, K, HWo);
    if (has_b)
      for (std::size_t o = 0; o < g.Co; ++o) Y.row(o).array() += b.value()[o];
  }
  std::vector<Var<T>> parents{x, w};
  if (has_b) parents.push_back(b);
  return make_result<T>({g.B, g.Co, g.Ho, g.Wo}, std::move(v), parents, [g, K, HWo, HWi, direct](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    T* cols = direct ? nullptr : detail::scratch<T>(K * HWo);
    CMapMat<T> Wm(pw->value.data(), g.Co, K);
    T* gw = pw->requires_grad ? pw->ensure_grad().data() : nullptr;
    T* gx = px->requires_grad ? px->ensure_grad().data() : nullptr;
    for (std::size_t n = 0; n < g.B; ++n) {
      CMapMat<T> dY(self.grad.data() + n * g.Co * HWo, g.Co, HWo);
      const T* xb = px->value.data() + n * g.Ci * HWi;
      if (gw) {
        const T* src = xb;
        if (!direct) {
          detail::im2col(xb, g, cols);
          src = cols;
        }
        MapMat<T>(gw, g.Co, K).noalias() += dY * CMapMat<T>(src, K, HWo).transpose();
      }
      if (gx) {
        if (direct) {
          MapMat<T>(gx + n * g.Ci * HWi, K, HWo).noalias() += Wm.transpose() * dY;
        } else {
          MapMat<T>(cols, K, HWo).noalias() = Wm.transpose() * dY;
          detail::col2im(cols, g, gx + n * g.Ci * HWi);
        }
      }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->ensure_grad();
      for (std::size_t n = 0; n < g.B; ++n)
        for (std::size_t o = 0; o < g.Co; ++o) {
          const T* d = self.grad.data() + (n * g.Co + o) * HWo;
          T s = 0;
          for (std::size_t i = 0; i < HWo; ++i) s += d[i];
          gb[o] += s;
        }
    }
  });
}

// ---------------------------------------------------------------- pooling / broadcast

/// Global average pooling [B, C, H, W] -> [B, C].
template <class T>
Var<T> gap(const Var<T>& x) {
  detail::check_rank(x, 4, "gap");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<T> v(B * C);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    T s = 0;
    for (std::size_t i = 0; i < HW; ++i) s += x.value()[bc * HW + i];
    v[bc] = s / static_cast<T>(HW);
  }
  return make_result<T>({B, C}, std::move(v), {x}, [=](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      const T d = self.grad[bc] / static_cast<T>(HW);
      for (std::size_t i = 0; i < HW; ++i) g[bc * HW + i] += d;
    }
  });
}

/// x [B, C, H, W] times a per-(batch, channel) scalar s [B, C].
template <class T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& s) {
  detail::check_rank(x, 4, "mul_channel");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  require(s.numel() == B * C, ErrorKind::shape, "mul_channel: scale must be [B, C]");
  std::vector<T> v(x.numel());
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t i = 0; i < HW; ++i) v[bc * HW + i] = x.value()[bc * HW + i] * s.value()[bc];
  return make_result<T>(x.shape(), std::move(v), {x, s}, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& ps = self.parents[1];
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t i = 0; i < HW; ++i) g[bc * HW + i] += self.grad[bc * HW + i] * ps->value[bc];
    }
    if (ps->requires_grad) {
      auto& g = ps->ensure_grad();
      for (std::size_t bc = 0; bc < B * C; ++bc) {
        T acc = 0;
        for (std::size_t i = 0; i < HW; ++i) acc += self.grad[bc * HW + i] * px->value[bc * HW + i];
        g[bc] += acc;
      }
    }
  });
}

/// Bilinear resampling of [B, C, H, W] to [B, C, Ho, Wo] with half-pixel
/// centers (align_corners = false). Identity when the size is unchanged.
template <class T>
Var<T> bilinear_resize(const Var<T>& x, std::size_t Ho, std::size_t Wo) {
  detail::check_rank(x, 4, "bilinear_resize");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H == Ho && W == Wo) return x;
  require(Ho >= 1 && Wo >= 1, ErrorKind::shape, "bilinear_resize: empty target");
  struct Tap {
    std::size_t i0, i1;
    double l;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double sc = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = std::max(0.0, (o + 0.5) * sc - 0.5);
      std::size_t i0 = std::min(static_cast<std::size_t>(src), in - 1);
      std::size_t i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  auto ty = taps(H, Ho), tx = taps(W, Wo);
  std::vector<T> v(B * C * Ho * Wo);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* in = x.value().data() + bc * H * W;
    T* out = v.data() + bc * Ho * Wo;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const T ly = static_cast<T>(ty[oy].l);
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const T lx = static_cast<T>(tx[ox].l);
        out[oy * Wo + ox] = (T(1) - ly) * ((T(1) - lx) * in[ty[oy].i0 * W + tx[ox].i0] + lx * in[ty[oy].i0 * W + tx[ox].i1]) +
                            ly * ((T(1) - lx) * in[ty[oy].i1 * W + tx[ox].i0] + lx * in[ty[oy].i1 * W + tx[ox].i1]);
      }
    }
  }
  return make_result<T>({B, C, Ho, Wo}, std::move(v), {x}, [=](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t bc = 0; bc < B * C; ++bc) {
      T* gi = g.data() + bc * H * W;
      const T* d = self.grad.data() + bc * Ho * Wo;
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        const T ly = static_cast<T>(ty[oy].l);
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const T lx = static_cast<T>(tx[ox].l);
          const T dv = d[oy * Wo + ox];
          gi[ty[oy].i0 * W + tx[ox].i0] += (T(1) - ly) * (T(1) - lx) * dv;
          gi[ty[oy].i0 * W + tx[ox].i1] += (T(1) - ly) * lx * dv;
          gi[ty[oy].i1 * W + tx[ox].i0] += ly * (T(1) - lx) * dv;
          gi[ty[oy].i1 * W + tx[ox].i1] += ly * lx * dv;
        }
      }
    }
  });
}

// ---------------------------------------------------------------- normalization / softmax

/// Softmax over consecutive groups of `n` entries.
template <class T>
Var<T> softmax_groups(const Var<T>& x, std::size_t n) {
  require(n >= 1 && x.numel() % n == 0, ErrorKind::shape, "softmax_groups: size not divisible by group");
  std::vector<T> v(x.numel());
  for (std::size_t g = 0; g < x.numel() / n; ++g) {
    const T* in = x.value().data() + g * n;
    T* out = v.data() + g * n;
    const T mx = *std::max_element(in, in + n);
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += (out[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < n; ++i) out[i] /= s;
  }
  return make_result<T>(x.shape(), std::move(v), {x}, [n](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t k = 0; k < self.value.size() / n; ++k) {
      const T* y = self.value.data() + k * n;
      const T* d = self.grad.data() + k * n;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += y[i] * d[i];
      for (std::size_t i = 0; i < n; ++i) g[k * n + i] += y[i] * (d[i] - dot);
    }
  });
}

/// Layer normalization over the last dimension of x [N, D].
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  detail::check_rank(x, 2, "layer_norm");
  const std::size_t N = x.dim(0), D = x.dim(1);
  require(gamma.numel() == D && beta.numel() == D, ErrorKind::shape, "layer_norm: affine size mismatch");
  auto xhat = std::make_shared<std::vector<T>>(N * D);
  auto inv = std::make_shared<std::vector<T>>(N);
  std::vector<T> v(N * D);
  for (std::size_t n = 0; n < N; ++n) {
    const T* r = x.value().data() + n * D;
    T mean = 0;
    for (std::size_t d = 0; d < D; ++d) mean += r[d];
    mean /= static_cast<T>(D);
    T var = 0;
    for (std::size_t d = 0; d < D; ++d) var += (r[d] - mean) * (r[d] - mean);
    var /= static_cast<T>(D);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv)[n] = is;
    for (std::size_t d = 0; d < D; ++d) {
      const T h = (r[d] - mean) * is;
      (*xhat)[n * D + d] = h;
      v[n * D + d] = gamma.value()[d] * h + beta.value()[d];
    }
  }
  return make_result<T>({N, D}, std::move(v), {x, gamma, beta}, [=](Node<T>& self) {
    const T* dy = self.grad.data();
    const T* xh = xhat->data();
    const T* gam = self.parents[1]->value.data();
    T* gg = self.parents[1]->requires_grad ? self.parents[1]->ensure_grad().data() : nullptr;
    T* gb = self.parents[2]->requires_grad ? self.parents[2]->ensure_grad().data() : nullptr;
    T* gx = self.parents[0]->requires_grad ? self.parents[0]->ensure_grad().data() : nullptr;
    const T invD = T(1) / static_cast<T>(D);
    for (std::size_t n = 0; n < N; ++n) {
      const T* d = dy + n * D;
      const T* h = xh + n * D;
      if (gg)
        for (std::size_t k = 0; k < D; ++k) gg[k] += d[k] * h[k];
      if (gb)
        for (std::size_t k = 0; k < D; ++k) gb[k] += d[k];
      if (gx) {
        T s1 = 0, s2 = 0;
        for (std::size_t k = 0; k < D; ++k) {
          const T dh = d[k] * gam[k];
          s1 += dh;
          s2 += dh * h[k];
        }
        const T is = (*inv)[n];
        s1 *= invD;
        s2 *= invD;
        T* o = gx + n * D;
        for (std::size_t k = 0; k < D; ++k) o[k] += is * (d[k] * gam[k] - s1 - h[k] * s2);
      }
    }
  });
}

/// Batch normalization of x [N, F] over N. In training mode batch statistics
/// are used and, if `update` is set, folded into the running buffers.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Var<T> running_mean,
                  Var<T> running_var, bool training, bool update, T momentum = T(0.1), T eps = T(1e-5)) {
  detail::check_rank(x, 2, "batch_norm");
  const std::size_t N = x.dim(0), F = x.dim(1);
  require(gamma.numel() == F && beta.numel() == F && running_mean.numel() == F && running_var.numel() == F,
          ErrorKind::shape, "batch_norm: parameter size mismatch");
  auto xhat = std::make_shared<std::vector<T>>(N * F);
  auto inv = std::make_shared<std::vector<T>>(F);
  std::vector<T> v(N * F);
  for (std::size_t f = 0; f < F; ++f) {
    T mean, var;
    if (training) {
      mean = 0;
      for (std::size_t n = 0; n < N; ++n) mean += x.value()[n * F + f];
      mean /= static_cast<T>(N);
      var = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T d = x.value()[n * F + f] - mean;
        var += d * d;
      }
      var /= static_cast<T>(N);
      if (update) {
        running_mean.value()[f] = (T(1) - momentum) * running_mean.value()[f] + momentum * mean;
        running_var.value()[f] = (T(1) - momentum) * running_var.value()[f] + momentum * var;
      }
    } else {
      mean = running_mean.value()[f];
      var = running_var.value()[f];
    }
    const T is = T(1) / std::sqrt(var + eps);
    (*inv)[f] = is;
    for (std::size_t n = 0; n < N; ++n) {
      const T h = (x.value()[n * F + f] - mean) * is;
      (*xhat)[n * F + f] = h;
      v[n * F + f] = gamma.value()[f] * h + beta.value()[f];
    }
  }
  return make_result<T>({N, F}, std::move(v), {x, gamma, beta}, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    if (pg->requires_grad) {
      auto& g = pg->ensure_grad();
      for (std::size_t i = 0; i < N * F; ++i) g[i % F] += self.grad[i] * (*xhat)[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < N * F; ++i) g[i % F] += self.grad[i];
    }
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (std::size_t f = 0; f < F; ++f) {
        const T gm = pg->value[f];
        if (!training) {
          for (std::size_t n = 0; n < N; ++n) g[n * F + f] += self.grad[n * F + f] * gm * (*inv)[f];
          continue;
        }
        T s1 = 0, s2 = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T dh = self.grad[n * F + f] * gm;
          s1 += dh;
          s2 += dh * (*xhat)[n * F + f];
        }
        for (std::size_t n = 0; n < N; ++n) {
          const T dh = self.grad[n * F + f] * gm;
          g[n * F + f] += (*inv)[f] * (dh - s1 / static_cast<T>(N) - (*xhat)[n * F + f] * s2 / static_cast<T>(N));
        }
      }
    }
  });
}

// ---------------------------------------------------------------- reductions

template <class T>
Var<T> sum_all(const Var<T>& x) {
  T s = 0;
  for (T v : x.value()) s += v;
  return make_result<T>({1}, {s}, {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& gi : g) gi += self.grad[0];
  });
}

/// sum_i w_i x_i with constant weights; the usual scalar probe for gradient checks.
template <class T>
Var<T> weighted_sum(const Var<T>& x, const std::vector<T>& w) {
  require(w.size() == x.numel(), ErrorKind::shape, "weighted_sum: weight size mismatch");
  T s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.value()[i];
  return make_result<T>({1}, {s}, {x}, [w](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += w[i] * self.grad[0];
  });
}

/// mean |a - b|
template <class T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
  detail::check_same(a, b, "mean_abs_diff");
  const std::size_t n = a.numel();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::abs(a.value()[i] - b.value()[i]);
  return make_result<T>({1}, {s / static_cast<T>(n)}, {a, b}, [n](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const T d = self.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T diff = pa->value[i] - pb->value[i];
      const T sg = diff > T(0) ? d : (diff < T(0) ? -d : T(0));
      if (pa->requires_grad) pa->ensure_grad()[i] += sg;
      if (pb->requires_grad) pb->ensure_grad()[i] -= sg;
    }
  });
}

}  // namespace fps::ag
