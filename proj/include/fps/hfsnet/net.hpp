#pragma once

#include <string>
#include <vector>

#include "fps/hfsnet/blocks.hpp"

namespace fps::hfsnet {

inline std::string scale_prefix(const char* part, std::size_t s) { return std::string(part) + std::to_string(s + 1); }

inline StageSpec stage_spec(const NetworkConfig& cfg, std::size_t s) {
  StageSpec st;
  st.in_channels = cfg.in_channels;
  st.dim = cfg.attn_channels(s);
  st.heads = cfg.attn_heads;
  st.window = cfg.window_size;
  st.mlp_ratio = cfg.mlp_ratio;
  st.patch = cfg.patch_size;
  st.embed = s == 0;
  st.merge = s + 1 < cfg.scales;
  return st;
}

/// conv -> cFAS, the unit used after every non-head convolution.
template <class T>
void init_conv_cfas(ParamStore<T>& ps, const std::string& p, std::size_t cin, std::size_t cout, std::size_t k,
                    Rng& rng) {
  init_conv(ps, p + ".conv", cin, cout, k, rng);
  init_cfas(ps, p + ".cfas", cout);
}

template <class T>
FeatureMap<T> conv_cfas(const FeatureMap<T>& x, const ParamStore<T>& ps, const std::string& p, std::size_t stride = 1) {
  return cfas_forward(conv(x, ps, p + ".conv", stride), ps, p + ".cfas");
}

template <class T>
FeatureMap<T> conv_cfas_relu(const FeatureMap<T>& x, const ParamStore<T>& ps, const std::string& p,
                             std::size_t stride = 1) {
  return ag::relu(conv_cfas(x, ps, p, stride));
}

/// Parameter set for `cfg`. Same seed, same bits.
template <class T>
ParamStore<T> init_parameters(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore<T> ps;
  Rng rng(mix_seed(seed, 0x48465331));
  const std::size_t c1 = cfg.cnn_channels(0);

  init_conv_cfas(ps, "ublock.stem", cfg.in_channels, c1, 3, rng);
  init_conv_cfas(ps, "ublock.down", c1, c1, 3, rng);
  init_conv_cfas(ps, "ublock.mid", c1, c1, 3, rng);
  init_conv_cfas(ps, "ublock.up", c1, c1, 3, rng);
  init_fas(ps, "ublock.fas", c1, cfg.fas, rng);

  for (std::size_t s = 1; s < cfg.scales; ++s) {
    const std::string p = scale_prefix("res", s);
    const std::size_t cin = cfg.cnn_channels(s - 1), c = cfg.cnn_channels(s);
    init_conv_cfas(ps, p + ".down", cin, c, 3, rng);
    init_conv_cfas(ps, p + ".unit1", c, c, 3, rng);
    init_conv_cfas(ps, p + ".unit2", c, c, 3, rng);
    init_fas(ps, p + ".fas", c, cfg.fas, rng);
  }

  for (std::size_t s = 0; s < cfg.scales; ++s)
    init_attention_stage(ps, scale_prefix("attn", s), stage_spec(cfg, s), rng);
  for (std::size_t s = 0; s < cfg.scales; ++s)
    init_fai(ps, scale_prefix("fai", s), cfg.attn_channels(s), cfg.cnn_channels(s));

  for (std::size_t s = 0; s + 1 < cfg.scales; ++s)
    init_conv_cfas(ps, scale_prefix("dec", s), cfg.merged_channels(s + 1), cfg.merged_channels(s), 3, rng);
  for (std::size_t s = 0; s < cfg.scales; ++s)
    init_conv(ps, scale_prefix("head", s), cfg.merged_channels(s), cfg.out_channels, 1, rng, false);
  return ps;
}

/// Optional taps into one forward pass.
template <class T>
struct ForwardProbe {
  std::vector<FeatureMap<T>> cnn;     // M_s
  std::vector<FeatureMap<T>> attn;    // T_s
  std::vector<FeatureMap<T>> merged;  // MI_s
  FasProbe<T> fas;
  AttentionProbe<T> attention;
};

/// Returns O_1 (full resolution) ... O_S (1/2^(S-1)).
template <class T>
std::vector<FeatureMap<T>> hfsnet_forward(const FeatureMap<T>& x0, const ParamStore<T>& ps, const NetworkConfig& cfg,
                                          Context ctx, ForwardProbe<T>* probe = nullptr) {
  require(x0.rank() == 4, ErrorKind::shape, "hfsnet: expected [B, C, H, W] input");
  require(x0.dim(1) == cfg.in_channels, ErrorKind::shape,
          "hfsnet: expected " + std::to_string(cfg.in_channels) + " input channels, got " + std::to_string(x0.dim(1)));
  const std::size_t H = x0.dim(2), W = x0.dim(3), S = cfg.scales;
  cfg.validate_input(H, W);

  std::size_t s = 0;
  const char* stage = "cnn";
  try {
    FasProbe<T>* fp = probe ? &probe->fas : nullptr;
    std::vector<FeatureMap<T>> m(S), t(S), mi(S);

    auto a = conv_cfas_relu(x0, ps, "ublock.stem");
    auto d = conv_cfas_relu(a, ps, "ublock.down", 2);
    d = conv_cfas_relu(d, ps, "ublock.mid");
    auto u = conv_cfas_relu(ag::bilinear_resize(d, H, W), ps, "ublock.up");
    m[0] = fas_forward(ag::add(a, u), ps, "ublock.fas", cfg.fas, ctx, fp);
    for (s = 1; s < S; ++s) {
      const std::string p = scale_prefix("res", s);
      auto h = conv_cfas_relu(m[s - 1], ps, p + ".down", 2);
      h = ag::relu(ag::add(h, conv_cfas(h, ps, p + ".unit1")));
      h = ag::relu(ag::add(h, conv_cfas(h, ps, p + ".unit2")));
      m[s] = fas_forward(h, ps, p + ".fas", cfg.fas, ctx, fp);
    }

    stage = "attention";
    FeatureMap<T> next = x0;
    for (s = 0; s < S; ++s) {
      auto out = attention_stage(next, ps, scale_prefix("attn", s), stage_spec(cfg, s),
                                 probe ? &probe->attention : nullptr);
      t[s] = out.features;
      next = out.next;
    }

    stage = "fai";
    for (s = 0; s < S; ++s) {
      const auto xs = s == 0 ? x0 : ag::bilinear_resize(x0, H >> s, W >> s);
      mi[s] = fai_merge(xs, m[s], t[s], ps, scale_prefix("fai", s));
    }

    stage = "decoder";
    std::vector<FeatureMap<T>> outs(S);
    s = S - 1;
    FeatureMap<T> dcur = mi[s];
    outs[s] = conv(dcur, ps, scale_prefix("head", s));
    while (s-- > 0) {
      auto up = ag::bilinear_resize(dcur, H >> s, W >> s);
      dcur = ag::add(conv_cfas_relu(up, ps, scale_prefix("dec", s)), mi[s]);
      outs[s] = conv(dcur, ps, scale_prefix("head", s));
    }
    if (probe) {
      probe->cnn = m;
      probe->attn = t;
      probe->merged = mi;
    }
    return outs;
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("hfsnet ") + stage + " scale " + std::to_string(s + 1) + ": " + e.what());
  }
}

}  // namespace fps::hfsnet
