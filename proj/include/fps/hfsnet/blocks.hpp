#pragma once

#include <cmath>
#include <string>

#include "fps/hfsnet/config.hpp"
#include "fps/hfsnet/layers.hpp"
#include "fps/hfsnet/params.hpp"

namespace fps::hfsnet {

// ---------------------------------------------------------------- initialization helpers

template <class T>
std::vector<T> uniform_values(std::size_t n, double bound, Rng& rng) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return v;
}

template <class T>
std::vector<T> filled(std::size_t n, T value) {
  return std::vector<T>(n, value);
}

/// Fan-in scaled uniform weights; He bound for layers followed by a
/// rectifier, 1/sqrt(fan_in) otherwise.
template <class T>
void add_weight(ParamStore<T>& ps, const std::string& name, ag::Shape shape, std::size_t fan_in, Rng& rng,
                bool rectified = true) {
  const double bound = rectified ? std::sqrt(6.0 / fan_in) : 1.0 / std::sqrt(static_cast<double>(fan_in));
  const std::size_t n = ag::numel(shape);
  ps.add(name, std::move(shape), uniform_values<T>(n, bound, rng));
}

template <class T>
void init_conv(ParamStore<T>& ps, const std::string& p, std::size_t cin, std::size_t cout, std::size_t k, Rng& rng,
               bool rectified = true) {
  add_weight(ps, p + ".w", {cout, cin, k, k}, cin * k * k, rng, rectified);
  ps.add(p + ".b", {cout}, filled<T>(cout, T(0)));
}

template <class T>
void init_linear(ParamStore<T>& ps, const std::string& p, std::size_t din, std::size_t dout, Rng& rng,
                 bool bias = true, bool rectified = false) {
  add_weight(ps, p + ".w", {dout, din}, din, rng, rectified);
  if (bias) ps.add(p + ".b", {dout}, filled<T>(dout, T(0)));
}

template <class T>
void init_norm(ParamStore<T>& ps, const std::string& p, std::size_t d) {
  ps.add(p + ".gamma", {d}, filled<T>(d, T(1)));
  ps.add(p + ".beta", {d}, filled<T>(d, T(0)));
}

template <class T>
Var<T> conv(const Var<T>& x, const ParamStore<T>& ps, const std::string& p, std::size_t stride = 1) {
  const auto& w = ps.get(p + ".w");
  return ag::conv2d(x, w, ps.get(p + ".b"), stride, w.dim(2) / 2);
}

template <class T>
Var<T> dense(const Var<T>& x, const ParamStore<T>& ps, const std::string& p) {
  const Var<T> none;
  return ag::linear(x, ps.get(p + ".w"), ps.contains(p + ".b") ? ps.get(p + ".b") : none);
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const ParamStore<T>& ps, const std::string& p) {
  return ag::layer_norm(x, ps.get(p + ".gamma"), ps.get(p + ".beta"));
}

// ---------------------------------------------------------------- cFAS

/// phi all 1: the identity map.
template <class T>
void init_cfas(ParamStore<T>& ps, const std::string& p, std::size_t channels) {
  require(channels % 2 == 0, ErrorKind::shape, "cfas: channel count must be even");
  for (const char* n : {".phi_g_low", ".phi_g_high", ".phi_l_low", ".phi_l_high"})
    ps.add(p + n, {channels / 2}, filled<T>(channels / 2, T(1)));
}

template <class T>
FeatureMap<T> cfas_forward(const FeatureMap<T>& y, const ParamStore<T>& ps, const std::string& p) {
  return cfas(y, ps.get(p + ".phi_g_low"), ps.get(p + ".phi_g_high"), ps.get(p + ".phi_l_low"),
              ps.get(p + ".phi_l_high"));
}

// ---------------------------------------------------------------- FAS

inline std::size_t fas_fuse_width(std::size_t branch_channels, const FasConfig& c) {
  return std::max<std::size_t>(4, branch_channels / c.fuse_reduction);
}

/// Modulator output biases start at +4 with zero weights, so both attention
/// weights begin at sigmoid(4) ~ 0.98.
template <class T>
void init_fas(ParamStore<T>& ps, const std::string& p, std::size_t channels, const FasConfig& c, Rng& rng) {
  c.validate();
  require(channels % (c.branches * c.groups) == 0, ErrorKind::shape,
          "fas: " + std::to_string(channels) + " channels not divisible by branches * groups");
  const std::size_t cb = channels / c.branches, d = fas_fuse_width(cb, c);
  for (std::size_t i = 0; i < c.branches; ++i) {
    const std::string b = p + ".b" + std::to_string(i);
    const std::size_t taps = c.groups * c.kernel_sizes[i] * c.kernel_sizes[i];
    init_linear(ps, b + ".gen", cb, taps, rng);
    init_norm(ps, b + ".bn", taps);
    ps.add(b + ".bn.mean", {taps}, filled<T>(taps, T(0)), false);
    ps.add(b + ".bn.var", {taps}, filled<T>(taps, T(1)), false);
    init_linear(ps, b + ".fuse", cb, d, rng, true, true);
    ps.add(b + ".low.w", {cb, d}, filled<T>(cb * d, T(0)));
    ps.add(b + ".low.b", {cb}, filled<T>(cb, T(4)));
    ps.add(b + ".high.w", {cb, d}, filled<T>(cb * d, T(0)));
    ps.add(b + ".high.b", {cb}, filled<T>(cb, T(4)));
  }
}

/// Intermediate tensors of one FAS call, for inspection in tests.
template <class T>
struct FasProbe {
  std::vector<Var<T>> input, low, high, kernel_low, w_low, w_high;
};

template <class T>
FeatureMap<T> fas_forward(const FeatureMap<T>& x, const ParamStore<T>& ps, const std::string& p, const FasConfig& c,
                          Context ctx, FasProbe<T>* probe = nullptr) {
  require(x.rank() == 4, ErrorKind::shape, "fas: expected [B, C, H, W]");
  const std::size_t B = x.dim(0), C = x.dim(1);
  require(C % (c.branches * c.groups) == 0, ErrorKind::shape,
          "fas: " + std::to_string(C) + " channels not divisible by branches * groups");
  const std::size_t cb = C / c.branches;
  std::vector<Var<T>> outs;
  for (std::size_t i = 0; i < c.branches; ++i) {
    const std::string b = p + ".b" + std::to_string(i);
    const std::size_t k = c.kernel_sizes[i], kk = k * k, G = c.groups;
    const Var<T> xi = c.branches == 1 ? x : ag::slice_channels(x, i * cb, (i + 1) * cb);

    // filter generation: GAP -> 1x1 conv -> BN -> softmax over each group's taps
    auto z = dense(ag::gap(xi), ps, b + ".gen");
    z = ag::batch_norm(z, ps.get(b + ".bn.gamma"), ps.get(b + ".bn.beta"), ps.get(b + ".bn.mean"),
                       ps.get(b + ".bn.var"), ctx.training, ctx.update_stats);
    auto f_low = ag::reshape(ag::softmax_groups(z, kk), {B, G, k, k});
    std::vector<T> identity(B * G * kk, T(0));
    for (std::size_t g = 0; g < B * G; ++g) identity[g * kk + kk / 2] = T(1);
    auto f_high = ag::add_const(ag::scale(f_low, T(-1)), identity);

    auto x_low = dynamic_depthwise_conv(xi, f_low);
    auto x_high = dynamic_depthwise_conv(xi, f_high);

    auto fuse = ag::relu(dense(ag::gap(ag::add(x_low, x_high)), ps, b + ".fuse"));
    auto w_low = ag::sigmoid(dense(fuse, ps, b + ".low"));
    auto w_high = ag::sigmoid(dense(fuse, ps, b + ".high"));
    outs.push_back(ag::add(ag::mul_channel(x_low, w_low), ag::mul_channel(x_high, w_high)));
    if (probe) {
      probe->input.push_back(xi);
      probe->low.push_back(x_low);
      probe->high.push_back(x_high);
      probe->kernel_low.push_back(f_low);
      probe->w_low.push_back(w_low);
      probe->w_high.push_back(w_high);
    }
  }
  return outs.size() == 1 ? outs.front() : ag::concat_channels(outs);
}

// ---------------------------------------------------------------- FAI

/// beta conv starts at weights 0 / bias 1 and gamma conv at 0, so the
/// initial merge passes M_s through unchanged.
template <class T>
void init_fai(ParamStore<T>& ps, const std::string& p, std::size_t attn_channels, std::size_t cnn_channels) {
  const std::size_t n = cnn_channels * attn_channels * 9;
  ps.add(p + ".beta.w", {cnn_channels, attn_channels, 3, 3}, filled<T>(n, T(0)));
  ps.add(p + ".beta.b", {cnn_channels}, filled<T>(cnn_channels, T(1)));
  ps.add(p + ".gamma.w", {cnn_channels, attn_channels, 3, 3}, filled<T>(n, T(0)));
  ps.add(p + ".gamma.b", {cnn_channels}, filled<T>(cnn_channels, T(0)));
}

/// MI = concat[x_s, beta(t_s) * m_s + gamma(t_s)], t_s resized to m_s's grid.
template <class T>
FeatureMap<T> fai_merge(const FeatureMap<T>& x_s, const FeatureMap<T>& m_s, const FeatureMap<T>& t_s,
                        const ParamStore<T>& ps, const std::string& p) {
  require(m_s.rank() == 4 && t_s.rank() == 4 && x_s.rank() == 4, ErrorKind::shape, "fai: rank-4 inputs required");
  const auto t = ag::bilinear_resize(t_s, m_s.dim(2), m_s.dim(3));
  const auto beta = conv(t, ps, p + ".beta");
  const auto gamma = conv(t, ps, p + ".gamma");
  require(beta.dim(1) == m_s.dim(1), ErrorKind::shape,
          "fai: beta/gamma produce " + std::to_string(beta.dim(1)) + " channels, M has " + std::to_string(m_s.dim(1)));
  return ag::concat_channels<T>({x_s, ag::add(ag::mul(beta, m_s), gamma)});
}

// ---------------------------------------------------------------- attention stage

struct StageSpec {
  std::size_t in_channels = 0;  // only used when embed is set
  std::size_t dim = 16;
  std::size_t heads = 2;
  std::size_t window = 4;
  std::size_t mlp_ratio = 2;
  std::size_t patch = 1;
  bool embed = false;  // patch embedding (kernel = stride = patch) + norm at the start
  bool merge = true;   // 2x patch merging at the end
};

template <class T>
void init_attention_stage(ParamStore<T>& ps, const std::string& p, const StageSpec& s, Rng& rng) {
  if (s.embed) {
    init_conv(ps, p + ".embed", s.in_channels, s.dim, s.patch, rng, false);
    init_norm(ps, p + ".embed_norm", s.dim);
  }
  for (int blk = 0; blk < 2; ++blk) {
    const std::string b = p + ".blk" + std::to_string(blk);
    init_norm(ps, b + ".norm1", s.dim);
    init_linear(ps, b + ".qkv", s.dim, 3 * s.dim, rng);
    init_linear(ps, b + ".proj", s.dim, s.dim, rng);
    init_norm(ps, b + ".norm2", s.dim);
    init_linear(ps, b + ".mlp1", s.dim, s.mlp_ratio * s.dim, rng);
    init_linear(ps, b + ".mlp2", s.mlp_ratio * s.dim, s.dim, rng);
  }
  if (s.merge) {
    init_norm(ps, p + ".merge_norm", 4 * s.dim);
    init_linear(ps, p + ".merge", 4 * s.dim, 2 * s.dim, rng, false);
  }
}

namespace detail {

using Index = std::shared_ptr<const std::vector<std::size_t>>;

/// NCHW feature map index for each token (b, y, x) in row-major token order.
inline Index nchw_to_tokens(std::size_t B, std::size_t C, std::size_t H, std::size_t W) {
  auto idx = std::make_shared<std::vector<std::size_t>>(B * H * W * C);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < C; ++c) (*idx)[((b * H + y) * W + x) * C + c] = ((b * C + c) * H + y) * W + x;
  return idx;
}

inline Index tokens_to_nchw(std::size_t B, std::size_t C, std::size_t H, std::size_t W) {
  auto idx = std::make_shared<std::vector<std::size_t>>(B * C * H * W);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) (*idx)[((b * C + c) * H + y) * W + x] = ((b * H + y) * W + x) * C + c;
  return idx;
}

/// Element gather from tokens [B*H*W, C] to windowed order [B*nW*n, C],
/// where the window grid is cyclically shifted by `shift`; plus the inverse.
inline std::pair<Index, Index> window_partition(std::size_t B, std::size_t H, std::size_t W, std::size_t C,
                                                std::size_t ws, std::size_t shift) {
  const std::size_t nwy = H / ws, nwx = W / ws, n = ws * ws;
  auto fwd = std::make_shared<std::vector<std::size_t>>(B * H * W * C);
  auto inv = std::make_shared<std::vector<std::size_t>>(B * H * W * C);
  std::size_t pos = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t wy = 0; wy < nwy; ++wy)
      for (std::size_t wx = 0; wx < nwx; ++wx)
        for (std::size_t i = 0; i < n; ++i, ++pos) {
          const std::size_t y = (wy * ws + i / ws + shift) % H, x = (wx * ws + i % ws + shift) % W;
          const std::size_t tok = (b * H + y) * W + x;
          for (std::size_t c = 0; c < C; ++c) {
            (*fwd)[pos * C + c] = tok * C + c;
            (*inv)[tok * C + c] = pos * C + c;
          }
        }
  return {fwd, inv};
}

/// Mask for shifted windows: positions that came from different regions of
/// the unshifted image may not attend to each other.
inline std::shared_ptr<const std::vector<unsigned char>> shift_mask(std::size_t H, std::size_t W, std::size_t ws,
                                                                    std::size_t shift) {
  const std::size_t nwy = H / ws, nwx = W / ws, n = ws * ws;
  auto label = [&](std::size_t v, std::size_t len) -> int { return v < len - ws ? 0 : (v < len - shift ? 1 : 2); };
  auto mask = std::make_shared<std::vector<unsigned char>>(nwy * nwx * n * n);
  for (std::size_t wy = 0; wy < nwy; ++wy)
    for (std::size_t wx = 0; wx < nwx; ++wx) {
      unsigned char* m = mask->data() + (wy * nwx + wx) * n * n;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const int li = label(wy * ws + i / ws, H) * 3 + label(wx * ws + i % ws, W);
          const int lj = label(wy * ws + j / ws, H) * 3 + label(wx * ws + j % ws, W);
          m[i * n + j] = li != lj;
        }
    }
  return mask;
}

inline Index patch_merge_index(std::size_t B, std::size_t H, std::size_t W, std::size_t C) {
  const std::size_t H2 = H / 2, W2 = W / 2;
  auto idx = std::make_shared<std::vector<std::size_t>>(B * H2 * W2 * 4 * C);
  const std::size_t dy[4] = {0, 1, 0, 1}, dx[4] = {0, 0, 1, 1};
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H2; ++y)
      for (std::size_t x = 0; x < W2; ++x)
        for (std::size_t q = 0; q < 4; ++q)
          for (std::size_t c = 0; c < C; ++c)
            (*idx)[(((b * H2 + y) * W2 + x) * 4 + q) * C + c] = ((b * H + 2 * y + dy[q]) * W + 2 * x + dx[q]) * C + c;
  return idx;
}

}  // namespace detail

template <class T>
struct AttentionProbe {
  std::vector<std::vector<T>> probabilities;  // one [G, heads, n, n] block per attention call
  std::size_t window_tokens = 0;
};

template <class T>
struct StageOutput {
  FeatureMap<T> features;  // T_s, [B, dim, H, W]
  FeatureMap<T> next;      // merged input of the next stage, [B, 2 dim, H/2, W/2]; empty on the last stage
};

/// Two windowed self-attention blocks (the second with half-window cyclic
/// shift), each with a residual token MLP, optionally preceded by a 1x1
/// patch embedding and followed by 2x patch merging.
template <class T>
StageOutput<T> attention_stage(const FeatureMap<T>& x, const ParamStore<T>& ps, const std::string& p,
                               const StageSpec& s, AttentionProbe<T>* probe = nullptr) {
  require(x.rank() == 4, ErrorKind::shape, "attention_stage: expected [B, C, H, W]");
  FeatureMap<T> in = x;
  if (s.embed) {
    require(x.dim(2) % s.patch == 0 && x.dim(3) % s.patch == 0, ErrorKind::shape,
            "attention_stage: input not divisible by patch size");
    in = ag::conv2d(x, ps.get(p + ".embed.w"), ps.get(p + ".embed.b"), s.patch, 0);
  }
  const std::size_t B = in.dim(0), H = in.dim(2), W = in.dim(3), D = s.dim;
  const std::size_t ws = std::min({s.window, H, W});
  require(H % ws == 0 && W % ws == 0, ErrorKind::shape,
          "attention_stage: " + std::to_string(H) + "x" + std::to_string(W) + " grid not divisible by window " +
              std::to_string(ws));
  require(D % s.heads == 0, ErrorKind::shape, "attention_stage: dim not divisible by heads");

  require(in.dim(1) == D, ErrorKind::shape,
          "attention_stage: expected " + std::to_string(D) + " input channels, got " + std::to_string(in.dim(1)));
  const std::size_t N = B * H * W;
  Var<T> tok = ag::gather(in, detail::nchw_to_tokens(B, D, H, W), {N, D});
  if (s.embed) tok = layer_norm(tok, ps, p + ".embed_norm");

  const std::size_t n = ws * ws, nw = (H / ws) * (W / ws);
  for (int blk = 0; blk < 2; ++blk) {
    const std::string b = p + ".blk" + std::to_string(blk);
    const std::size_t shift = (blk == 1 && ws < H && ws < W) ? ws / 2 : 0;
    auto [fwd, inv] = detail::window_partition(B, H, W, D, ws, shift);
    auto mask = shift ? detail::shift_mask(H, W, ws, shift) : nullptr;

    auto h = layer_norm(tok, ps, b + ".norm1");
    h = ag::gather(h, fwd, {N, D});
    auto qkv = ag::reshape(dense(h, ps, b + ".qkv"), {B * nw, n, 3 * D});
    std::vector<T> probs;
    auto att = window_attention(qkv, s.heads, mask, nw, probe ? &probs : nullptr);
    if (probe) {
      probe->probabilities.push_back(std::move(probs));
      probe->window_tokens = n;
    }
    auto proj = dense(ag::reshape(att, {N, D}), ps, b + ".proj");
    tok = ag::add(tok, ag::gather(proj, inv, {N, D}));

    auto m = dense(ag::gelu(dense(layer_norm(tok, ps, b + ".norm2"), ps, b + ".mlp1")), ps, b + ".mlp2");
    tok = ag::add(tok, m);
  }

  StageOutput<T> out;
  out.features = ag::gather(tok, detail::tokens_to_nchw(B, D, H, W), {B, D, H, W});
  if (s.merge) {
    require(H % 2 == 0 && W % 2 == 0, ErrorKind::shape, "attention_stage: patch merging needs even dims");
    const std::size_t M = B * (H / 2) * (W / 2);
    auto merged = ag::gather(tok, detail::patch_merge_index(B, H, W, D), {M, 4 * D});
    merged = dense(layer_norm(merged, ps, p + ".merge_norm"), ps, p + ".merge");
    out.next = ag::gather(merged, detail::tokens_to_nchw(B, 2 * D, H / 2, W / 2), {B, 2 * D, H / 2, W / 2});
  }
  return out;
}

}  // namespace fps::hfsnet
