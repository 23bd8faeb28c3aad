#pragma once

// Fused differentiable kernels specific to HFSNet.

#include <limits>
#include <memory>
#include <vector>

#include "fps/autograd/ops.hpp"

namespace fps::hfsnet {

using ag::Node;
using ag::Var;

/// Compact frequency selection on [B, C, H, W]. The first C/2 channels are
/// the global part (low band = per-channel spatial mean), the rest the local
/// part (low band = per-quadrant mean). Each band is rescaled per channel:
///   y' = phi_low * low + phi_high * (y - low)
/// computed as phi_high * y + (phi_low - phi_high) * low, which is exactly y
/// when both weights are 1.
template <class T>
Var<T> cfas(const Var<T>& y, const Var<T>& phi_g_low, const Var<T>& phi_g_high, const Var<T>& phi_l_low,
            const Var<T>& phi_l_high) {
  require(y.rank() == 4, ErrorKind::shape, "cfas: expected [B, C, H, W], got " + ag::shape_str(y.shape()));
  const std::size_t B = y.dim(0), C = y.dim(1), H = y.dim(2), W = y.dim(3);
  require(C % 2 == 0, ErrorKind::shape, "cfas: channel count must be even, got " + std::to_string(C));
  require(H % 2 == 0 && W % 2 == 0, ErrorKind::shape, "cfas: spatial dims must be even");
  const std::size_t Ch = C / 2;
  require(phi_g_low.numel() == Ch && phi_g_high.numel() == Ch && phi_l_low.numel() == Ch && phi_l_high.numel() == Ch,
          ErrorKind::shape, "cfas: phi lengths must equal C/2");
  const std::size_t HW = H * W, h2 = H / 2, w2 = W / 2;

  // region r of pixel: global channels use one region, local ones four quadrants
  auto region = [=](std::size_t c, std::size_t yy, std::size_t xx) -> std::size_t {
    return c < Ch ? 0 : (yy / h2) * 2 + (xx / w2);
  };
  auto means = std::make_shared<std::vector<T>>(B * C * 4, T(0));
  std::vector<T> v(y.numel());
  const auto& in = y.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = in.data() + (b * C + c) * HW;
      T* m = means->data() + (b * C + c) * 4;
      for (std::size_t yy = 0; yy < H; ++yy)
        for (std::size_t xx = 0; xx < W; ++xx) m[region(c, yy, xx)] += p[yy * W + xx];
      const T count = c < Ch ? static_cast<T>(HW) : static_cast<T>(h2 * w2);
      for (std::size_t r = 0; r < 4; ++r) m[r] /= count;
      const T lo = c < Ch ? phi_g_low.value()[c] : phi_l_low.value()[c - Ch];
      const T hi = c < Ch ? phi_g_high.value()[c] : phi_l_high.value()[c - Ch];
      T* o = v.data() + (b * C + c) * HW;
      for (std::size_t yy = 0; yy < H; ++yy)
        for (std::size_t xx = 0; xx < W; ++xx) o[yy * W + xx] = hi * p[yy * W + xx] + (lo - hi) * m[region(c, yy, xx)];
    }

  return ag::make_result<T>(y.shape(), std::move(v), {y, phi_g_low, phi_g_high, phi_l_low, phi_l_high},
                            [=](Node<T>& self) {
    auto& py = self.parents[0];
    const std::size_t count_g = HW, count_l = h2 * w2;
    std::vector<T> dsum(4);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const bool global = c < Ch;
        const std::size_t j = global ? c : c - Ch;
        auto& plo = self.parents[global ? 1 : 3];
        auto& phi = self.parents[global ? 2 : 4];
        const T lo = plo->value[j], hi = phi->value[j];
        const T* d = self.grad.data() + (b * C + c) * HW;
        const T* x = py->value.data() + (b * C + c) * HW;
        const T* m = means->data() + (b * C + c) * 4;
        std::fill(dsum.begin(), dsum.end(), T(0));
        T dhi = 0;
        for (std::size_t yy = 0; yy < H; ++yy)
          for (std::size_t xx = 0; xx < W; ++xx) {
            const std::size_t r = region(c, yy, xx);
            const T g = d[yy * W + xx];
            dsum[r] += g;
            dhi += g * (x[yy * W + xx] - m[r]);
          }
        if (phi->requires_grad) phi->ensure_grad()[j] += dhi;
        if (plo->requires_grad) {
          T dlo = 0;
          for (std::size_t r = 0; r < 4; ++r) dlo += dsum[r] * m[r];
          plo->ensure_grad()[j] += dlo;
        }
        if (py->requires_grad) {
          auto& gy = py->ensure_grad();
          const T count = global ? static_cast<T>(count_g) : static_cast<T>(count_l);
          T* gx = gy.data() + (b * C + c) * HW;
          for (std::size_t yy = 0; yy < H; ++yy)
            for (std::size_t xx = 0; xx < W; ++xx)
              gx[yy * W + xx] += hi * d[yy * W + xx] + (lo - hi) * dsum[region(c, yy, xx)] / count;
        }
      }
  });
}

/// Per-sample grouped depthwise correlation with zero padding:
///   out[b, c, y, x] = sum_{p,q} kern[b, group(c), p, q] * in[b, c, y + p - r, x + q - r]
/// x [B, C, H, W], kern [B, G, k, k]; channel c belongs to group c / (C / G).
template <class T>
Var<T> dynamic_depthwise_conv(const Var<T>& x, const Var<T>& kern) {
  require(x.rank() == 4 && kern.rank() == 4, ErrorKind::shape, "dynamic_depthwise_conv: rank-4 inputs required");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t G = kern.dim(1), k = kern.dim(2);
  require(kern.dim(0) == B && kern.dim(3) == k && k % 2 == 1, ErrorKind::shape,
          "dynamic_depthwise_conv: kernel must be [B, G, k, k] with odd k");
  require(G >= 1 && C % G == 0, ErrorKind::shape, "dynamic_depthwise_conv: channels not divisible by groups");
  const long r = static_cast<long>(k / 2);
  const std::size_t per = C / G, HW = H * W;

  auto run = [=](const T* in, const T* kk, T* out) {
    for (long p = -r; p <= r; ++p)
      for (long q = -r; q <= r; ++q) {
        const T wv = kk[(p + r) * static_cast<long>(k) + (q + r)];
        if (wv == T(0)) continue;
        const long y0 = std::max<long>(0, -p), y1 = std::min<long>(H, static_cast<long>(H) - p);
        const long x0 = std::max<long>(0, -q), x1 = std::min<long>(W, static_cast<long>(W) - q);
        for (long yy = y0; yy < y1; ++yy) {
          const T* src = in + (yy + p) * static_cast<long>(W) + q;
          T* dst = out + yy * static_cast<long>(W);
          for (long xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
        }
      }
  };

  std::vector<T> v(x.numel(), T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      run(x.value().data() + (b * C + c) * HW, kern.value().data() + (b * G + c / per) * k * k,
          v.data() + (b * C + c) * HW);

  return ag::make_result<T>(x.shape(), std::move(v), {x, kern}, [=](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pk = self.parents[1];
    T* gx_all = px->requires_grad ? px->ensure_grad().data() : nullptr;
    T* gk_all = pk->requires_grad ? pk->ensure_grad().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* d = self.grad.data() + (b * C + c) * HW;
        const T* in = px->value.data() + (b * C + c) * HW;
        const std::size_t ko = (b * G + c / per) * k * k;
        for (long p = -r; p <= r; ++p)
          for (long q = -r; q <= r; ++q) {
            const long y0 = std::max<long>(0, -p), y1 = std::min<long>(H, static_cast<long>(H) - p);
            const long x0 = std::max<long>(0, -q), x1 = std::min<long>(W, static_cast<long>(W) - q);
            const std::size_t tap = ko + (p + r) * k + (q + r);
            const T wv = pk->value[tap];
            T acc = 0;
            for (long yy = y0; yy < y1; ++yy) {
              const long so = (yy + p) * static_cast<long>(W) + q;
              const T* dr = d + yy * static_cast<long>(W);
              if (gx_all) {
                T* gx = gx_all + (b * C + c) * HW + so;
                for (long xx = x0; xx < x1; ++xx) gx[xx] += wv * dr[xx];
              }
              const T* src = in + so;
              for (long xx = x0; xx < x1; ++xx) acc += dr[xx] * src[xx];
            }
            if (gk_all) gk_all[tap] += acc;
          }
      }
  });
}

/// Multi-head self-attention inside windows. qkv [G, n, 3D] packs queries,
/// keys and values per token; heads split D evenly. `blocked`, when given,
/// is a [num_windows, n, n] mask (1 = pair may not attend) applied to
/// window g % num_windows. Optionally records the attention probabilities
/// [G, heads, n, n].
template <class T>
Var<T> window_attention(const Var<T>& qkv, std::size_t heads,
                        std::shared_ptr<const std::vector<unsigned char>> blocked = nullptr,
                        std::size_t num_windows = 1, std::vector<T>* probs_out = nullptr) {
  require(qkv.rank() == 3 && qkv.dim(2) % 3 == 0, ErrorKind::shape, "window_attention: qkv must be [G, n, 3D]");
  const std::size_t G = qkv.dim(0), n = qkv.dim(1), D = qkv.dim(2) / 3;
  require(heads >= 1 && D % heads == 0, ErrorKind::shape, "window_attention: D not divisible by heads");
  if (blocked) require(blocked->size() == num_windows * n * n && G % num_windows == 0, ErrorKind::shape,
                       "window_attention: mask size mismatch");
  const std::size_t dh = D / heads, D3 = 3 * D;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<std::vector<T>>(G * heads * n * n);
  std::vector<T> v(G * n * D, T(0));
  const auto& in = qkv.value();
  for (std::size_t g = 0; g < G; ++g) {
    const unsigned char* mk = blocked ? blocked->data() + (g % num_windows) * n * n : nullptr;
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs->data() + (g * heads + h) * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const T* q = in.data() + (g * n + i) * D3 + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (mk && mk[i * n + j]) continue;
          const T* kk = in.data() + (g * n + j) * D3 + D + h * dh;
          T s = 0;
          for (std::size_t e = 0; e < dh; ++e) s += q[e] * kk[e];
          P[i * n + j] = s * sc;
          mx = std::max(mx, P[i * n + j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (mk && mk[i * n + j]) {
            P[i * n + j] = 0;
            continue;
          }
          z += (P[i * n + j] = std::exp(P[i * n + j] - mx));
        }
        T* o = v.data() + (g * n + i) * D + h * dh;
        for (std::size_t j = 0; j < n; ++j) {
          P[i * n + j] /= z;
          const T pij = P[i * n + j];
          if (pij == T(0)) continue;
          const T* vv = in.data() + (g * n + j) * D3 + 2 * D + h * dh;
          for (std::size_t e = 0; e < dh; ++e) o[e] += pij * vv[e];
        }
      }
    }
  }
  if (probs_out) *probs_out = *probs;
  return ag::make_result<T>({G, n, D}, std::move(v), {qkv}, [=](Node<T>& self) {
    auto& p = self.parents[0];
    auto& gin = p->ensure_grad();
    const auto& in = p->value;
    std::vector<T> dP(n * n);
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t h = 0; h < heads; ++h) {
        const T* P = probs->data() + (g * heads + h) * n * n;
        // dV = P^T dO ; dP = dO V^T
        for (std::size_t i = 0; i < n; ++i) {
          const T* dO = self.grad.data() + (g * n + i) * D + h * dh;
          for (std::size_t j = 0; j < n; ++j) {
            const T* vv = in.data() + (g * n + j) * D3 + 2 * D + h * dh;
            T* dv = gin.data() + (g * n + j) * D3 + 2 * D + h * dh;
            const T pij = P[i * n + j];
            T s = 0;
            for (std::size_t e = 0; e < dh; ++e) {
              s += dO[e] * vv[e];
              dv[e] += pij * dO[e];
            }
            dP[i * n + j] = s;
          }
        }
        // dS = P * (dP - rowsum(P * dP)); dQ = dS K sc ; dK = dS^T Q sc
        for (std::size_t i = 0; i < n; ++i) {
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += P[i * n + j] * dP[i * n + j];
          const T* q = in.data() + (g * n + i) * D3 + h * dh;
          T* dq = gin.data() + (g * n + i) * D3 + h * dh;
          for (std::size_t j = 0; j < n; ++j) {
            const T ds = P[i * n + j] * (dP[i * n + j] - dot) * sc;
            if (ds == T(0)) continue;
            const T* kk = in.data() + (g * n + j) * D3 + D + h * dh;
            T* dk = gin.data() + (g * n + j) * D3 + D + h * dh;
            for (std::size_t e = 0; e < dh; ++e) {
              dq[e] += ds * kk[e];
              dk[e] += ds * q[e];
            }
          }
        }
      }
  });
}

}  // namespace fps::hfsnet
