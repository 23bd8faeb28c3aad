#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fps/autograd/gradcheck.hpp"
#include "fps/hfsnet/net.hpp"

using namespace fps;
using namespace fps::hfsnet;
using ag::Var;

namespace {

template <class T>
Var<T> random_var(ag::Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Rng rng(seed);
  std::vector<T> v(ag::numel(s));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Var<T>::leaf(std::move(s), std::move(v));
}

template <class T>
double max_abs_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

NetworkConfig toy_config() {
  NetworkConfig c;
  c.base_channels = 8;
  c.embed_dim = 4;
  c.window_size = 4;
  c.attn_heads = 2;
  c.fas.groups = 2;
  return c;
}

// Weighted sum with fixed pseudo-random weights: a scalar loss that touches
// every output entry differently.
template <class T>
Var<T> probe_loss(const Var<T>& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<T> w(y.numel());
  for (auto& x : w) x = static_cast<T>(rng.uniform(-1, 1));
  return ag::weighted_sum(y, w);
}

// Direct 'same' correlation with zero padding.
std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t B, std::size_t Ci, std::size_t H,
                                std::size_t W, const std::vector<double>& w, const std::vector<double>& b,
                                std::size_t Co, std::size_t k) {
  std::vector<double> out(B * Co * H * W);
  const long r = static_cast<long>(k / 2);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < Co; ++o)
      for (long y = 0; y < long(H); ++y)
        for (long xx = 0; xx < long(W); ++xx) {
          double s = b[o];
          for (std::size_t i = 0; i < Ci; ++i)
            for (long dy = -r; dy <= r; ++dy)
              for (long dx = -r; dx <= r; ++dx) {
                const long yy = y + dy, xq = xx + dx;
                if (yy < 0 || xq < 0 || yy >= long(H) || xq >= long(W)) continue;
                s += w[((o * Ci + i) * k + (dy + r)) * k + (dx + r)] * x[((n * Ci + i) * H + yy) * W + xq];
              }
          out[((n * Co + o) * H + y) * W + xx] = s;
        }
  return out;
}

}  // namespace

// ------------------------------------------------------------------ cFAS

TEST(Cfas, UnitWeightsAreIdentity) {
  for (std::size_t C : {2, 4, 8})
    for (std::size_t H : {2, 6, 8}) {
      auto y = random_var<float>({2, C, H, H + 2}, C * 31 + H);
      ParamStore<float> ps;
      init_cfas(ps, "c", C);
      auto out = cfas_forward(y, ps, "c");
      EXPECT_LE(max_abs_diff(out.value(), y.value()), 1e-6);
    }
}

TEST(Cfas, ConstantImageHasNoHighBand) {
  auto y = Var<double>::leaf({1, 4, 6, 6}, std::vector<double>(144, 2.5));
  ParamStore<double> ps;
  init_cfas(ps, "c", 4);
  ps.get("c.phi_g_high").value().assign(2, 0.0);
  ps.get("c.phi_l_high").value().assign(2, 0.0);
  EXPECT_LE(max_abs_diff(cfas_forward(y, ps, "c").value(), y.value()), 1e-12);
}

TEST(Cfas, MatchesWindowMeanOracle) {
  const std::size_t C = 4, H = 8, W = 8;
  auto y = random_var<double>({1, C, H, W}, 5);
  auto pgl = random_var<double>({2}, 6), pgh = random_var<double>({2}, 7);
  auto pll = random_var<double>({2}, 8), plh = random_var<double>({2}, 9);
  auto out = cfas(y, pgl, pgh, pll, plh);
  const auto& v = y.value();
  for (std::size_t c = 0; c < C; ++c) {
    const double* p = v.data() + c * H * W;
    for (std::size_t qy = 0; qy < 2; ++qy)
      for (std::size_t qx = 0; qx < 2; ++qx) {
        // global channels average the whole plane, local ones the quadrant
        const bool global = c < 2;
        double mean = 0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j)
            if (global || (i / 4 == qy && j / 4 == qx)) mean += p[i * W + j], ++cnt;
        mean /= cnt;
        const double lo = global ? pgl.value()[c] : pll.value()[c - 2];
        const double hi = global ? pgh.value()[c] : plh.value()[c - 2];
        for (std::size_t i = qy * 4; i < qy * 4 + 4; ++i)
          for (std::size_t j = qx * 4; j < qx * 4 + 4; ++j) {
            const double expect = lo * mean + hi * (p[i * W + j] - mean);
            EXPECT_NEAR(out.value()[c * H * W + i * W + j], expect, 1e-6);
          }
      }
  }
}

TEST(Cfas, RejectsOddShapes) {
  ParamStore<double> ps;
  init_cfas(ps, "c", 4);
  try {
    cfas_forward(random_var<double>({1, 4, 5, 6}, 1), ps, "c");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
  EXPECT_THROW(init_cfas(ps, "d", 3), Error);
}

// ------------------------------------------------------------------ FAS

TEST(Fas, BranchesSplitExactly) {
  FasConfig fc;
  for (std::uint64_t seed : {1, 2, 3}) {
    const std::size_t C = 8 * (1 + seed % 2), H = 4 + 2 * seed;
    ParamStore<float> ps;
    Rng rng(seed);
    init_fas(ps, "f", C, fc, rng);
    auto x = random_var<float>({2, C, H, H}, 100 + seed, -3, 3);
    FasProbe<float> probe;
    fas_forward(x, ps, "f", fc, Context::train(false), &probe);
    ASSERT_EQ(probe.low.size(), 2u);
    for (std::size_t b = 0; b < 2; ++b) {
      const auto& lo = probe.low[b].value();
      const auto& hi = probe.high[b].value();
      const auto& in = probe.input[b].value();
      for (std::size_t i = 0; i < in.size(); ++i) ASSERT_NEAR(lo[i] + hi[i], in[i], 1e-6);
    }
  }
}

TEST(Fas, LowPassKernelsAreProbabilityVectors) {
  FasConfig fc;
  ParamStore<double> ps;
  Rng rng(4);
  init_fas(ps, "f", 16, fc, rng);
  FasProbe<double> probe;
  fas_forward(random_var<double>({3, 16, 8, 8}, 11), ps, "f", fc, Context::train(), &probe);
  for (std::size_t b = 0; b < fc.branches; ++b) {
    const std::size_t kk = fc.kernel_sizes[b] * fc.kernel_sizes[b];
    const auto& k = probe.kernel_low[b].value();
    for (std::size_t g = 0; g < k.size() / kk; ++g) {
      double s = 0;
      for (std::size_t t = 0; t < kk; ++t) {
        EXPECT_GE(k[g * kk + t], 0.0);
        s += k[g * kk + t];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Fas, UnitModulatorIsIdentity) {
  FasConfig fc;
  ParamStore<float> ps;
  Rng rng(5);
  init_fas(ps, "f", 8, fc, rng);
  for (std::size_t b = 0; b < 2; ++b)
    for (const char* n : {".low.b", ".high.b"}) {
      auto& v = ps.get("f.b" + std::to_string(b) + n).value();
      std::fill(v.begin(), v.end(), 40.0f);
    }
  auto x = random_var<float>({2, 8, 6, 6}, 12);
  FasProbe<float> probe;
  auto out = fas_forward(x, ps, "f", fc, Context::eval(), &probe);
  EXPECT_LE(max_abs_diff(out.value(), x.value()), 1e-6);
  for (const auto& w : probe.w_low)
    for (float v : w.value()) EXPECT_EQ(v, 1.0f);
}

TEST(Fas, ConstantPlaneLowBandIsExactInInterior) {
  FasConfig fc;
  ParamStore<double> ps;
  Rng rng(6);
  init_fas(ps, "f", 8, fc, rng);
  const std::size_t H = 12;
  auto x = Var<double>::leaf({1, 8, H, H}, std::vector<double>(8 * H * H, 1.75));
  FasProbe<double> probe;
  fas_forward(x, ps, "f", fc, Context::eval(), &probe);
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t r = fc.kernel_sizes[b] / 2;
    const auto& lo = probe.low[b].value();
    bool boundary_differs = false;
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < H; ++j) {
          const double v = lo[(c * H + i) * H + j];
          if (i >= r && j >= r && i < H - r && j < H - r)
            EXPECT_NEAR(v, 1.75, 1e-12);
          else
            boundary_differs = boundary_differs || std::abs(v - 1.75) > 1e-9;
        }
    EXPECT_TRUE(boundary_differs);
  }
}

TEST(Fas, RejectsIndivisibleChannels) {
  FasConfig fc;
  ParamStore<double> ps;
  Rng rng(7);
  init_fas(ps, "f", 8, fc, rng);
  EXPECT_THROW(fas_forward(random_var<double>({1, 6, 4, 4}, 1), ps, "f", fc, Context::eval()), Error);
  EXPECT_THROW(init_fas(ps, "g", 12, fc, rng), Error);
}

// ------------------------------------------------------------------ FAI

TEST(Fai, InitialMergeConcatenatesInputs) {
  ParamStore<double> ps;
  init_fai(ps, "m", 6, 4);
  auto x = random_var<double>({1, 2, 8, 8}, 1), m = random_var<double>({1, 4, 8, 8}, 2);
  auto t = random_var<double>({1, 6, 4, 4}, 3);
  auto out = fai_merge(x, m, t, ps, "m");
  ASSERT_EQ(out.shape(), (ag::Shape{1, 6, 8, 8}));
  std::vector<double> expect = x.value();
  expect.insert(expect.end(), m.value().begin(), m.value().end());
  EXPECT_LE(max_abs_diff(out.value(), expect), 1e-15);
}

TEST(Fai, ZeroFeaturesYieldGamma) {
  ParamStore<double> ps;
  init_fai(ps, "m", 3, 4);
  Rng rng(8);
  for (auto& v : ps.get("m.gamma.w").value()) v = rng.uniform(-1, 1);
  for (auto& v : ps.get("m.gamma.b").value()) v = rng.uniform(-1, 1);
  auto t = random_var<double>({1, 3, 8, 8}, 4);
  auto out = fai_merge(random_var<double>({1, 2, 8, 8}, 1), Var<double>::zeros({1, 4, 8, 8}), t, ps, "m");
  auto gamma = conv_oracle(t.value(), 1, 3, 8, 8, ps.get("m.gamma.w").value(), ps.get("m.gamma.b").value(), 4, 3);
  std::vector<double> half(out.value().begin() + 128, out.value().end());
  EXPECT_LE(max_abs_diff(half, gamma), 1e-12);
}

TEST(Fai, MatchesHandComposition) {
  ParamStore<double> ps;
  init_fai(ps, "m", 3, 4);
  Rng rng(9);
  for (const char* n : {"m.beta.w", "m.beta.b", "m.gamma.w", "m.gamma.b"})
    for (auto& v : ps.get(n).value()) v = rng.uniform(-1, 1);
  auto x = random_var<double>({2, 2, 8, 8}, 1), m = random_var<double>({2, 4, 8, 8}, 2);
  auto t = random_var<double>({2, 3, 8, 8}, 3);
  auto out = fai_merge(x, m, t, ps, "m");
  auto beta = conv_oracle(t.value(), 2, 3, 8, 8, ps.get("m.beta.w").value(), ps.get("m.beta.b").value(), 4, 3);
  auto gamma = conv_oracle(t.value(), 2, 3, 8, 8, ps.get("m.gamma.w").value(), ps.get("m.gamma.b").value(), 4, 3);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 6; ++c)
      for (std::size_t p = 0; p < 64; ++p) {
        const double got = out.value()[(n * 6 + c) * 64 + p];
        const double want = c < 2 ? x.value()[(n * 2 + c) * 64 + p]
                                  : beta[(n * 4 + c - 2) * 64 + p] * m.value()[(n * 4 + c - 2) * 64 + p] +
                                        gamma[(n * 4 + c - 2) * 64 + p];
        ASSERT_NEAR(got, want, 1e-6);
      }
}

TEST(Fai, ChannelMismatchIsShapeError) {
  ParamStore<double> ps;
  init_fai(ps, "m", 3, 4);
  try {
    fai_merge(random_var<double>({1, 2, 8, 8}, 1), random_var<double>({1, 6, 8, 8}, 2),
              random_var<double>({1, 3, 8, 8}, 3), ps, "m");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

// ------------------------------------------------------------------ attention

TEST(Attention, RowsAreProbabilityVectors) {
  StageSpec s;
  s.in_channels = 2;
  s.dim = 8;
  s.embed = true;
  ParamStore<double> ps;
  Rng rng(10);
  init_attention_stage(ps, "a", s, rng);
  AttentionProbe<double> probe;
  attention_stage(random_var<double>({2, 2, 8, 8}, 1), ps, "a", s, &probe);
  ASSERT_EQ(probe.probabilities.size(), 2u);
  const std::size_t n = probe.window_tokens;
  for (const auto& P : probe.probabilities)
    for (std::size_t row = 0; row < P.size() / n; ++row) {
      double sum = 0;
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_GE(P[row * n + j], 0.0);
        sum += P[row * n + j];
      }
      ASSERT_NEAR(sum, 1.0, 1e-6);
    }
}

TEST(Attention, ShiftedBlockMasksForeignRegions) {
  StageSpec s;
  s.dim = 4;
  ParamStore<double> ps;
  Rng rng(11);
  init_attention_stage(ps, "a", s, rng);
  AttentionProbe<double> probe;
  attention_stage(random_var<double>({1, 4, 8, 8}, 2), ps, "a", s, &probe);
  // last window of the shifted block mixes all four wrap-around regions
  const auto& P = probe.probabilities[1];
  const std::size_t n = 16, heads = 2, last = 3;
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < heads * n * n; ++i) zeros += P[last * heads * n * n + i] == 0.0;
  EXPECT_GT(zeros, 0u);
  for (std::size_t i = 0; i < heads * n * n; ++i) EXPECT_GT(P[i], 0.0);  // first window is unmixed
}

TEST(Attention, ZeroInputZeroBiasGivesZero) {
  StageSpec s;
  s.in_channels = 2;
  s.dim = 8;
  s.embed = true;
  ParamStore<double> ps;
  Rng rng(12);
  init_attention_stage(ps, "a", s, rng);
  auto out = attention_stage(Var<double>::zeros({1, 2, 8, 8}), ps, "a", s);
  for (double v : out.features.value()) EXPECT_EQ(v, 0.0);
  for (double v : out.next.value()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, BatchPermutationEquivariance) {
  StageSpec s;
  s.dim = 8;
  ParamStore<double> ps;
  Rng rng(13);
  init_attention_stage(ps, "a", s, rng);
  auto x = random_var<double>({3, 8, 8, 8}, 3);
  const std::size_t per = 8 * 64, perm[3] = {2, 0, 1};
  std::vector<double> xp(x.numel());
  for (std::size_t b = 0; b < 3; ++b)
    std::copy_n(x.value().begin() + perm[b] * per, per, xp.begin() + b * per);
  auto a = attention_stage(x, ps, "a", s).features.value();
  auto b = attention_stage(Var<double>::leaf({3, 8, 8, 8}, xp), ps, "a", s).features.value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < per; ++k) ASSERT_EQ(b[i * per + k], a[perm[i] * per + k]);
}

TEST(Attention, RejectsIndivisibleGrid) {
  StageSpec s;
  s.dim = 4;
  ParamStore<double> ps;
  Rng rng(14);
  init_attention_stage(ps, "a", s, rng);
  EXPECT_THROW(attention_stage(random_var<double>({1, 4, 6, 8}, 2), ps, "a", s), Error);
}

// ------------------------------------------------------------------ network

TEST(Hfsnet, OutputShapes) {
  NetworkConfig cfg;
  cfg.base_channels = 8;
  auto ps = init_parameters<float>(cfg, 1);
  auto outs = hfsnet_forward(random_var<float>({1, 2, 64, 64}, 1), ps, cfg, Context::eval());
  ASSERT_EQ(outs.size(), 3u);
  EXPECT_EQ(outs[0].shape(), (ag::Shape{1, 2, 64, 64}));
  EXPECT_EQ(outs[1].shape(), (ag::Shape{1, 2, 32, 32}));
  EXPECT_EQ(outs[2].shape(), (ag::Shape{1, 2, 16, 16}));
  for (const auto& o : outs)
    for (float v : o.value()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Hfsnet, ZeroParametersGiveZeroOutput) {
  auto cfg = toy_config();
  auto ps = init_parameters<double>(cfg, 2);
  for (auto& e : ps.entries()) std::fill(e.var.value().begin(), e.var.value().end(), 0.0);
  for (auto& o : hfsnet_forward(random_var<double>({1, 2, 16, 16}, 3), ps, cfg, Context::eval()))
    for (double v : o.value()) EXPECT_EQ(v, 0.0);
}

TEST(Hfsnet, DuplicatedBatchDuplicatesOutputs) {
  auto cfg = toy_config();
  auto ps = init_parameters<double>(cfg, 3);
  auto x = random_var<double>({1, 2, 16, 16}, 4);
  std::vector<double> xx = x.value();
  xx.insert(xx.end(), x.value().begin(), x.value().end());
  auto single = hfsnet_forward(x, ps, cfg, Context::eval());
  auto pair = hfsnet_forward(Var<double>::leaf({2, 2, 16, 16}, xx), ps, cfg, Context::eval());
  for (std::size_t s = 0; s < 3; ++s) {
    const auto& a = single[s].value();
    const auto& b = pair[s].value();
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(b[i], a[i]);
      ASSERT_EQ(b[a.size() + i], a[i]);
    }
  }
}

TEST(Hfsnet, InferenceIsDeterministic) {
  auto cfg = toy_config();
  auto ps = init_parameters<float>(cfg, 4);
  auto x = random_var<float>({2, 2, 16, 16}, 5);
  auto a = hfsnet_forward(x, ps, cfg, Context::eval());
  auto b = hfsnet_forward(x, ps, cfg, Context::eval());
  for (std::size_t s = 0; s < a.size(); ++s) EXPECT_EQ(a[s].value(), b[s].value());
}

TEST(Hfsnet, ShapeErrorsCarryScaleContext) {
  auto cfg = toy_config();
  auto ps = init_parameters<double>(cfg, 5);
  try {
    hfsnet_forward(random_var<double>({1, 2, 20, 20}, 1), ps, cfg, Context::eval());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
  ps.get("fai2.beta.w") = Var<double>::zeros({3, 8, 3, 3});
  try {
    hfsnet_forward(random_var<double>({1, 2, 16, 16}, 1), ps, cfg, Context::eval());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
    EXPECT_NE(std::string(e.what()).find("scale 2"), std::string::npos) << e.what();
  }
}

// ------------------------------------------------------------------ initialization

TEST(Init, SameSeedSameBits) {
  NetworkConfig cfg;
  EXPECT_TRUE(init_parameters<float>(cfg, 7) == init_parameters<float>(cfg, 7));
  EXPECT_FALSE(init_parameters<float>(cfg, 7) == init_parameters<float>(cfg, 8));
}

TEST(Init, FreshCfasIsIdentity) {
  NetworkConfig cfg;
  auto ps = init_parameters<float>(cfg, 8);
  auto y = random_var<float>({1, 32, 16, 16}, 1);
  EXPECT_LE(max_abs_diff(cfas_forward(y, ps, "ublock.stem.cfas").value(), y.value()), 1e-6);
}

TEST(Init, FanInScaledWeightsAreCentred) {
  NetworkConfig cfg;
  auto ps = init_parameters<double>(cfg, 9);
  std::size_t checked = 0;
  for (const auto& e : ps.entries()) {
    const auto& s = e.var.shape();
    const bool weight = e.name.size() > 2 && e.name.substr(e.name.size() - 2) == ".w";
    if (!weight || s.size() < 2) continue;
    const std::size_t fan_in = e.var.numel() / s[0];
    const auto& v = e.var.value();
    const bool constant = std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    if (fan_in < 64 || constant) continue;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    EXPECT_LE(std::abs(mean), 0.05) << e.name;
    ++checked;
  }
  EXPECT_GT(checked, 10u);
}

TEST(Init, ModulatorAndFaiStartNearIdentity) {
  NetworkConfig cfg;
  auto ps = init_parameters<double>(cfg, 10);
  for (double v : ps.get("res2.fas.b0.low.b").value()) EXPECT_NEAR(1 / (1 + std::exp(-v)), 1.0, 0.02);
  for (double v : ps.get("fai1.gamma.w").value()) EXPECT_EQ(v, 0.0);
  for (double v : ps.get("fai1.beta.b").value()) EXPECT_EQ(v, 1.0);
}

// ------------------------------------------------------------------ gradients

TEST(GradCheck, LinearLayerIsExact) {
  auto x = random_var<double>({3, 5}, 1), w = random_var<double>({4, 5}, 2), b = random_var<double>({4}, 3);
  auto rep = ag::check_gradients<double>([&] { return probe_loss(ag::linear(x, w, b)); },
                                         {{"x", x}, {"w", w}, {"b", b}}, {.max_entries = 0});
  EXPECT_LT(rep.max_rel_error, 1e-7) << rep.worst;
}

TEST(GradCheck, Cfas) {
  auto y = random_var<double>({1, 4, 4, 4}, 1);
  auto p = std::vector<Var<double>>{random_var<double>({2}, 2), random_var<double>({2}, 3),
                                    random_var<double>({2}, 4), random_var<double>({2}, 5)};
  auto rep = ag::check_gradients<double>([&] { return probe_loss(cfas(y, p[0], p[1], p[2], p[3])); },
                                         {{"y", y}, {"gl", p[0]}, {"gh", p[1]}, {"ll", p[2]}, {"lh", p[3]}},
                                         {.max_entries = 0});
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
}

TEST(GradCheck, Fas) {
  FasConfig fc;
  ParamStore<double> ps;
  Rng rng(3);
  init_fas(ps, "f", 8, fc, rng);
  for (auto& e : ps.entries())
    if (e.trainable)
      for (auto& v : e.var.value()) v += rng.uniform(-0.3, 0.3);
  auto x = random_var<double>({2, 8, 6, 6}, 4);
  std::vector<std::pair<std::string, Var<double>>> t{{"x", x}};
  for (auto& e : ps.entries())
    if (e.trainable) t.push_back({e.name, e.var});
  auto rep = ag::check_gradients<double>(
      [&] { return probe_loss(fas_forward(x, ps, "f", fc, Context::train(false))); }, t);
  EXPECT_LT(rep.max_rel_error, 1e-3) << rep.worst;
}

TEST(GradCheck, Fai) {
  ParamStore<double> ps;
  init_fai(ps, "m", 3, 4);
  Rng rng(4);
  for (auto& e : ps.entries())
    for (auto& v : e.var.value()) v = rng.uniform(-1, 1);
  auto x = random_var<double>({1, 2, 8, 8}, 1), m = random_var<double>({1, 4, 8, 8}, 2);
  auto t = random_var<double>({1, 3, 4, 4}, 3);
  std::vector<std::pair<std::string, Var<double>>> ts{{"x", x}, {"m", m}, {"t", t}};
  for (auto& e : ps.entries()) ts.push_back({e.name, e.var});
  auto rep = ag::check_gradients<double>([&] { return probe_loss(fai_merge(x, m, t, ps, "m")); }, ts);
  EXPECT_LT(rep.max_rel_error, 1e-3) << rep.worst;
}

TEST(GradCheck, AttentionStage) {
  StageSpec s;
  s.in_channels = 2;
  s.dim = 4;
  s.embed = true;
  ParamStore<double> ps;
  Rng rng(5);
  init_attention_stage(ps, "a", s, rng);
  for (auto& e : ps.entries())
    for (auto& v : e.var.value()) v += rng.uniform(-0.2, 0.2);
  auto x = random_var<double>({1, 2, 8, 8}, 6);
  std::vector<std::pair<std::string, Var<double>>> ts{{"x", x}};
  for (auto& e : ps.entries()) ts.push_back({e.name, e.var});
  auto rep = ag::check_gradients<double>(
      [&] {
        auto o = attention_stage(x, ps, "a", s);
        return ag::add(probe_loss(o.features, 1), probe_loss(o.next, 2));
      },
      ts);
  EXPECT_LT(rep.max_rel_error, 1e-3) << rep.worst;
}

TEST(GradCheck, FullNetwork) {
  auto cfg = toy_config();
  auto ps = init_parameters<double>(cfg, 6);
  Rng rng(6);
  for (auto& e : ps.entries())
    if (e.trainable)
      for (auto& v : e.var.value()) v += rng.uniform(-0.1, 0.1);
  // unequal modulator weights, otherwise the low-pass kernels barely reach the output
  for (auto& e : ps.entries())
    if (e.name.ends_with(".low.b") || e.name.ends_with(".high.b"))
      for (auto& v : e.var.value()) v = rng.uniform(-2, 2);
  auto x = random_var<double>({1, 2, 16, 16}, 7);
  std::vector<std::pair<std::string, Var<double>>> ts{{"x", x}};
  for (auto& e : ps.entries())
    if (e.trainable) ts.push_back({e.name, e.var});
  auto rep = ag::check_gradients<double>(
      [&] {
        auto outs = hfsnet_forward(x, ps, cfg, Context::eval());
        Var<double> l = probe_loss(outs[0], 1);
        for (std::size_t s = 1; s < outs.size(); ++s) l = ag::add(l, probe_loss(outs[s], s + 1));
        return l;
      },
      ts, {.max_entries = 6});
  EXPECT_LT(rep.max_rel_error, 1e-3) << rep.worst;
}
