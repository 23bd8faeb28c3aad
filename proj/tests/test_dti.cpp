#include <gtest/gtest.h>

#include <cmath>

#include "fps/dti/tensor.hpp"

using namespace fps;
using namespace fps::dti;

namespace {

double rel_err(const DiffusionTensor& a, const DiffusionTensor& b) {
  double num = 0, den = 0;
  const auto x = a.values(), y = b.values();
  for (int i = 0; i < 6; ++i) {
    num += (x[i] - y[i]) * (x[i] - y[i]);
    den += y[i] * y[i];
  }
  return std::sqrt(num / den);
}

DiffusionTensor random_symmetric(Rng& rng, double scale = 1.0) {
  return {scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1),
          scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1), scale * rng.uniform(-1, 1)};
}

double reconstruction_residual(const DiffusionTensor& t, const EigenDecomposition& e) {
  double m[3][3] = {};
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] += e.values[k] * e.vectors[k][i] * e.vectors[k][j];
  const double ref[3][3] = {{t.dxx, t.dxy, t.dxz}, {t.dxy, t.dyy, t.dyz}, {t.dxz, t.dyz, t.dzz}};
  double r = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r = std::max(r, std::abs(m[i][j] - ref[i][j]));
  return r;
}

template <class F>
void expect_kind(F&& f, ErrorKind k) {
  try {
    f();
    ADD_FAILURE() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), k) << e.what();
  }
}

}  // namespace

TEST(Scheme, StandardSchemeIsValid) {
  auto s = GradientScheme::standard();
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.measurements(), 7u);
  EXPECT_EQ(s.b[0], 1000.0);
}

TEST(Scheme, TextRoundTrip) {
  auto s = GradientScheme::standard(700);
  auto t = parse_scheme(format_scheme(s));
  EXPECT_EQ(t.directions, s.directions);
  EXPECT_EQ(t.b, s.b);
  EXPECT_TRUE(t.includes_b0);
}

TEST(Scheme, Rejections) {
  expect_kind([] { parse_scheme("1 0 0 1000\n"); }, ErrorKind::scheme);
  auto s = GradientScheme::standard();
  s.directions[2] = {1, 1, 0};
  expect_kind([&] { s.validate(); }, ErrorKind::scheme);
  s = GradientScheme::standard();
  s.includes_b0 = false;
  expect_kind([&] { s.validate(); }, ErrorKind::scheme);
  expect_kind([] { parse_scheme("0 0 0 0\n1 0\n"); }, ErrorKind::scheme);
}

TEST(SynthDwi, ZeroTensorGivesS0) {
  std::vector<DiffusionTensor> f(5);
  std::vector<double> s0{1, 2, 3, 4, 5};
  auto s = synth_dwi(f, GradientScheme::standard(), s0);
  for (const auto& m : s) EXPECT_EQ(m, s0);
}

TEST(SynthDwi, IsotropicIsDirectionIndependent) {
  const double d = 0.9e-3;
  std::vector<DiffusionTensor> f(3, DiffusionTensor{d, d, d, 0, 0, 0});
  auto s = synth_dwi(f, GradientScheme::standard(), {1.0, 0.5, 2.0});
  for (std::size_t k = 1; k < s.size(); ++k) {
    EXPECT_NEAR(s[k][0], std::exp(-1000 * d), 1e-15);
    EXPECT_NEAR(s[k][2], 2.0 * std::exp(-1000 * d), 1e-15);
  }
}

TEST(SynthDwi, MatchesQuadraticFormOracle) {
  std::vector<double> s0;
  auto f = synthetic_tensor_field(64, 3, &s0);
  auto scheme = GradientScheme::standard();
  auto s = synth_dwi(f, scheme, s0);
  for (std::size_t v = 0; v < f.size(); ++v) {
    const double D[3][3] = {{f[v].dxx, f[v].dxy, f[v].dxz}, {f[v].dxy, f[v].dyy, f[v].dyz}, {f[v].dxz, f[v].dyz, f[v].dzz}};
    for (std::size_t k = 0; k < scheme.directions.size(); ++k) {
      const auto& g = scheme.directions[k];
      double q = 0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) q += g[i] * D[i][j] * g[j];
      EXPECT_NEAR(s[k + 1][v], s0[v] * std::exp(-scheme.b[k] * q), 1e-12);
    }
  }
}

TEST(FitTensor, NoiselessRoundTrip) {
  std::vector<double> s0;
  auto f = synthetic_tensor_field(32 * 32, 4, &s0);
  auto fit = fit_tensor(synth_dwi(f, GradientScheme::standard(), s0), GradientScheme::standard());
  for (std::size_t v = 0; v < f.size(); ++v) {
    ASSERT_EQ(fit.fitted[v], 1);
    EXPECT_LT(rel_err(fit.tensors[v], f[v]), 1e-6);
    EXPECT_NEAR(fit.s0[v], s0[v], 1e-9 * s0[v]);
  }
}

TEST(FitTensor, RoundTripWithOverdeterminedScheme) {
  auto scheme = GradientScheme::standard();
  const double r = 1 / std::sqrt(3.0);
  scheme.directions.push_back({r, r, r});
  scheme.b.push_back(2000);
  std::vector<double> s0;
  auto f = synthetic_tensor_field(50, 5, &s0);
  auto fit = fit_tensor(synth_dwi(f, scheme, s0), scheme);
  for (std::size_t v = 0; v < f.size(); ++v) EXPECT_LT(rel_err(fit.tensors[v], f[v]), 1e-6);
}

TEST(FitTensor, ConstantSignalsGiveIsotropicTensor) {
  auto scheme = GradientScheme::standard();
  SignalStack s(7, std::vector<double>{0.4});
  s[0][0] = 1.0;
  auto fit = fit_tensor(s, scheme);
  const auto& t = fit.tensors[0];
  EXPECT_NEAR(t.dxy, 0.0, 1e-18);
  EXPECT_NEAR(t.dxz, 0.0, 1e-18);
  EXPECT_NEAR(t.dyz, 0.0, 1e-18);
  EXPECT_NEAR(t.trace(), 3 * std::log(1.0 / 0.4) / 1000, 1e-15);
  EXPECT_NEAR(t.dxx, t.dyy, 1e-18);
}

TEST(FitTensor, NonPositiveSignalIsMasked) {
  std::vector<double> s0;
  auto f = synthetic_tensor_field(4, 6, &s0);
  auto s = synth_dwi(f, GradientScheme::standard(), s0);
  s[3][1] = -0.1;
  s[0][2] = 0.0;
  auto fit = fit_tensor(s, GradientScheme::standard());
  EXPECT_EQ(fit.fitted, (std::vector<std::uint8_t>{1, 0, 0, 1}));
  EXPECT_EQ(fit.tensors[1], DiffusionTensor{});
  EXPECT_LT(rel_err(fit.tensors[3], f[3]), 1e-6);
}

TEST(FitTensor, CoplanarDirectionsAreRankDeficient) {
  GradientScheme s;
  for (int k = 0; k < 6; ++k) {
    const double a = k * M_PI / 6;
    s.directions.push_back({std::cos(a), std::sin(a), 0.0});
    s.b.push_back(1000);
  }
  expect_kind([&] { fit_tensor(SignalStack(7, std::vector<double>(1, 1.0)), s); }, ErrorKind::scheme);
}

TEST(FitTensor, MeasurementCountMismatch) {
  expect_kind([] { fit_tensor(SignalStack(6, std::vector<double>(1, 1.0)), GradientScheme::standard()); },
              ErrorKind::shape);
}

TEST(Eig3, DiagonalMatrix) {
  auto e = eig3_symmetric({1, 3, 2, 0, 0, 0});
  EXPECT_EQ(e.values, (Vec3{3, 2, 1}));
  EXPECT_EQ(std::abs(e.vectors[0][1]), 1.0);
  EXPECT_EQ(std::abs(e.vectors[1][2]), 1.0);
  EXPECT_EQ(std::abs(e.vectors[2][0]), 1.0);
}

TEST(Eig3, RepeatedEigenvalues) {
  auto e = eig3_symmetric({1, 1, 1, 0, 0, 0});
  EXPECT_EQ(e.values, (Vec3{1, 1, 1}));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = 0;
      for (int k = 0; k < 3; ++k) d += e.vectors[i][k] * e.vectors[j][k];
      EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-15);
    }
}

TEST(Eig3, RandomSymmetricReconstruction) {
  Rng rng(7);
  for (int t = 0; t < 1000; ++t) {
    const auto m = random_symmetric(rng, t % 2 ? 1.0 : 1e-3);
    auto e = eig3_symmetric(m);
    EXPECT_LT(reconstruction_residual(m, e), 1e-10);
    EXPECT_GE(e.values[0], e.values[1]);
    EXPECT_GE(e.values[1], e.values[2]);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double d = 0;
        for (int k = 0; k < 3; ++k) d += e.vectors[i][k] * e.vectors[j][k];
        EXPECT_NEAR(d, i == j ? 1.0 : 0.0, 1e-12);
      }
    EXPECT_NEAR(e.values[0] + e.values[1] + e.values[2], m.trace(), 1e-12);
  }
}

TEST(Eig3, NegativeEigenvaluesAreFlagged) {
  auto e = eig3_symmetric({1e-3, -2e-4, 5e-4, 0, 0, 0});
  EXPECT_TRUE(e.negative);
  EXPECT_EQ(e.values[2], -2e-4);
  auto m = dti_maps(e);
  EXPECT_TRUE(m.negative);
  EXPECT_GE(m.fa, 0.0);
  EXPECT_LE(m.fa, 1.0);
}

TEST(Eig3, NonFiniteInput) {
  expect_kind([] { eig3_symmetric({NAN, 0, 0, 0, 0, 0}); }, ErrorKind::invalid_input);
}

TEST(DtiMaps, TrivialCases) {
  const double d = 0.8e-3;
  auto iso = dti_maps(Vec3{d, d, d});
  EXPECT_EQ(iso.fa, 0.0);
  EXPECT_EQ(iso.md, d);
  EXPECT_EQ(iso.ad, d);
  EXPECT_EQ(iso.rd, d);
  auto stick = dti_maps(Vec3{d, 0, 0});
  EXPECT_EQ(stick.fa, 1.0);
  EXPECT_EQ(stick.md, d / 3);
  EXPECT_EQ(stick.ad, d);
  EXPECT_EQ(stick.rd, 0.0);
  auto zero = dti_maps(Vec3{0, 0, 0});
  EXPECT_EQ(zero.fa, 0.0);
  EXPECT_EQ(zero.md, 0.0);
}

TEST(DtiMaps, HandEvaluatedFormula) {
  auto m = dti_maps(Vec3{1.7e-3, 0.3e-3, 0.2e-3});
  // MD = 2.2e-3 / 3; sum l^2 = 3.02e-6; sum (l - MD)^2 = 3.02e-6 - 4.84e-6 / 3 = 4.22e-6 / 3
  EXPECT_NEAR(m.md, 2.2e-3 / 3, 1e-18);
  EXPECT_NEAR(m.fa, std::sqrt(1.5 * (4.22 / 3) / 3.02), 1e-12);
  EXPECT_NEAR(m.ad, 1.7e-3, 1e-18);
  EXPECT_NEAR(m.rd, 0.25e-3, 1e-18);
}

TEST(DtiMaps, FaIsScaleInvariant) {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    Vec3 l{rng.uniform(1, 2), rng.uniform(0.5, 1), rng.uniform(0, 0.5)};
    const double c = rng.uniform(1e-4, 1e4);
    EXPECT_NEAR(dti_maps(l).fa, dti_maps(Vec3{c * l[0], c * l[1], c * l[2]}).fa, 1e-12);
  }
}

TEST(DtiMaps, MdEqualsTraceOverThree) {
  std::vector<double> s0;
  auto f = synthetic_tensor_field(200, 9, &s0);
  auto fit = fit_tensor(synth_dwi(f, GradientScheme::standard(), s0), GradientScheme::standard());
  for (const auto& t : fit.tensors) {
    auto m = dti_maps(eig3_symmetric(t));
    EXPECT_NEAR(m.md, t.trace() / 3, 1e-12);
    EXPECT_GE(m.ad, m.rd);
  }
}
