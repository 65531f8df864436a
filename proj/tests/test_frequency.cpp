#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "veil/error.hpp"
#include "veil/frequency.hpp"
#include "veil/rng.hpp"

namespace veil {
namespace {

const std::vector<double> kSignal{0.1, 0.7, 0.3, 0.9, 0.2, 0.5, 0.8, 0.4};

// Signal along the temporal axis of a T x 1 x 1 x 1 clip.
TensorD temporal_clip(const std::vector<double>& v) {
  return TensorD({v.size(), 1, 1, 1}, v);
}

TransformConfig config(WaveletFamily f, Boundary b, TransformAxis axis = TransformAxis::kTemporal,
                       int levels = 1) {
  TransformConfig c;
  c.family = f;
  c.boundary = b;
  c.axis = axis;
  c.levels = levels;
  return c;
}

template <typename T>
Tensor<T> random_clip(const Shape& shape, std::uint64_t seed) {
  Tensor<T> x(shape);
  Rng rng(seed);
  for (auto& v : x.values()) v = static_cast<T>(rng.uniform());
  return x;
}

double sum_squares(const TensorD& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

void expect_values(const TensorD& t, const std::vector<double>& want) {
  ASSERT_EQ(t.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[i], want[i], 1e-12) << "index " << i;
}

// Reference values computed with PyWavelets (pywt.dwt).
TEST(Wavelet, HaarPeriodicMatchesReference) {
  auto p = decompose(temporal_clip(kSignal), config(WaveletFamily::kHaar, Boundary::kPeriodic));
  expect_values(p.low, {0.565685424949238, 0.848528137423857, 0.494974746830583,
                        0.848528137423857});
  ASSERT_EQ(p.high.size(), 1u);
  expect_values(p.high[0], {-0.424264068711929, -0.424264068711929, -0.212132034355964,
                            0.282842712474619});
}

TEST(Wavelet, Db2PeriodizationMatchesReference) {
  auto p = decompose(temporal_clip(kSignal), config(WaveletFamily::kDb2, Boundary::kPeriodic));
  expect_values(p.low, {0.394914646495626, 0.764876507050076, 0.610514198557641,
                        0.987411094524193});
  expect_values(p.high[0], {0.3664943428484, 0.498442264536634, -0.12940952255126,
                            0.042290374471429});
}

TEST(Wavelet, Db2SymmetricMatchesReference) {
  auto p = decompose(temporal_clip(kSignal), config(WaveletFamily::kDb2, Boundary::kSymmetric));
  expect_values(p.low, {0.353553390593274, 0.584632294047389, 0.87787755964016,
                        0.642402019910917, 0.707106781186548});
  expect_values(p.high[0], {-0.367423461417477, -0.353553390593274, -0.314730533827896,
                            0.338074039201174, -0.244948974278318});
}

TEST(Wavelet, Db2SymmetricOddLength) {
  const std::vector<double> x(kSignal.begin(), kSignal.begin() + 7);
  auto p = decompose(temporal_clip(x), config(WaveletFamily::kDb2, Boundary::kSymmetric));
  expect_values(p.low, {0.353553390593274, 0.584632294047389, 0.87787755964016,
                        0.590638210890413, 1.141773403016628});
  expect_values(p.high[0], {-0.367423461417477, -0.353553390593274, -0.314730533827896,
                            0.14488887394336, 0.038822856765378});
  auto back = reconstruct(p);
  ASSERT_EQ(back.shape(), temporal_clip(x).shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-12);
}

TEST(Wavelet, DefaultConfigIsHaarTemporalOneLevelPeriodic) {
  TransformConfig c;
  EXPECT_EQ(c.family, WaveletFamily::kHaar);
  EXPECT_EQ(c.axis, TransformAxis::kTemporal);
  EXPECT_EQ(c.levels, 1);
  EXPECT_EQ(c.boundary, Boundary::kPeriodic);
}

struct RoundTripCase {
  WaveletFamily family;
  Boundary boundary;
  TransformAxis axis;
  int levels;
  Shape shape;
};

class RoundTrip : public ::testing::TestWithParam<RoundTripCase> {};

TEST_P(RoundTrip, ReconstructsFloatClips) {
  const auto& c = GetParam();
  const auto cfg = config(c.family, c.boundary, c.axis, c.levels);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = random_clip<float>(c.shape, seed);
    auto y = reconstruct(decompose(x, cfg));
    ASSERT_EQ(y.shape(), x.shape());
    double err = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, double(std::abs(y[i] - x[i])));
    EXPECT_LE(err, 1e-5);
  }
}

TEST_P(RoundTrip, CoefficientShapesMatchDecomposition) {
  const auto& c = GetParam();
  const auto cfg = config(c.family, c.boundary, c.axis, c.levels);
  auto p = decompose(random_clip<double>(c.shape, 3), cfg);
  auto shapes = coefficient_shapes(c.shape, cfg);
  ASSERT_EQ(shapes.size(), 1 + p.high.size());
  EXPECT_EQ(shapes[0], p.low.shape());
  for (std::size_t i = 0; i < p.high.size(); ++i) EXPECT_EQ(shapes[i + 1], p.high[i].shape());
}

TEST_P(RoundTrip, AdjointSatisfiesInnerProductIdentity) {
  const auto& c = GetParam();
  const auto cfg = config(c.family, c.boundary, c.axis, c.levels);
  auto coeffs = decompose(random_clip<double>(c.shape, 7), cfg);
  // Random coefficients u, random clip v: <R u, v> == <u, R^T v>.
  Rng rng(11);
  for (auto& v : coeffs.low.values()) v = rng.normal();
  for (auto& h : coeffs.high)
    for (auto& v : h.values()) v = rng.normal();
  auto ru = reconstruct(coeffs);
  auto v = random_clip<double>(c.shape, 13);
  auto rtv = reconstruct_adjoint(v, cfg, c.shape);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) lhs += ru[i] * v[i];
  for (std::size_t i = 0; i < coeffs.low.size(); ++i) rhs += coeffs.low[i] * rtv.low[i];
  for (std::size_t k = 0; k < coeffs.high.size(); ++k)
    for (std::size_t i = 0; i < coeffs.high[k].size(); ++i)
      rhs += coeffs.high[k][i] * rtv.high[k][i];
  EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(lhs)));
}

INSTANTIATE_TEST_SUITE_P(
    Configs, RoundTrip,
    ::testing::Values(
        RoundTripCase{WaveletFamily::kHaar, Boundary::kPeriodic, TransformAxis::kTemporal, 1,
                      {8, 6, 6, 1}},
        RoundTripCase{WaveletFamily::kHaar, Boundary::kPeriodic, TransformAxis::kTemporal, 3,
                      {8, 4, 4, 2}},
        RoundTripCase{WaveletFamily::kDb2, Boundary::kPeriodic, TransformAxis::kSpatial, 2,
                      {4, 8, 8, 1}},
        RoundTripCase{WaveletFamily::kDb2, Boundary::kSymmetric, TransformAxis::kTemporal, 2,
                      {9, 3, 3, 1}},
        RoundTripCase{WaveletFamily::kHaar, Boundary::kSymmetric, TransformAxis::kSpatiotemporal,
                      1, {5, 7, 6, 1}},
        RoundTripCase{WaveletFamily::kDb2, Boundary::kPeriodic, TransformAxis::kSpatiotemporal, 1,
                      {4, 4, 8, 3}}));

TEST(Wavelet, ParsevalHoldsForPeriodicConfigs) {
  for (auto family : {WaveletFamily::kHaar, WaveletFamily::kDb2}) {
    for (auto axis : {TransformAxis::kTemporal, TransformAxis::kSpatial,
                      TransformAxis::kSpatiotemporal}) {
      auto x = random_clip<double>({8, 8, 8, 1}, 21);
      auto p = decompose(x, config(family, Boundary::kPeriodic, axis, 2));
      double coeff = sum_squares(p.low);
      for (const auto& h : p.high) coeff += sum_squares(h);
      const double clip = sum_squares(x);
      EXPECT_NEAR(coeff, clip, 1e-10 * clip) << to_string(family) << " " << to_string(axis);
      auto e = energy_split(p);
      EXPECT_NEAR(e.low + e.high, clip, 1e-10 * clip);
    }
  }
}

TEST(Wavelet, ConstantClipHasZeroHighBand) {
  for (auto family : {WaveletFamily::kHaar, WaveletFamily::kDb2}) {
    for (auto boundary : {Boundary::kPeriodic, Boundary::kSymmetric}) {
      TensorF x({8, 4, 4, 1}, 0.37f);
      auto p = decompose(x, config(family, boundary, TransformAxis::kSpatiotemporal, 1));
      for (const auto& h : p.high)
        for (float v : h.values()) EXPECT_NEAR(v, 0.0f, 1e-6f);
    }
  }
}

TEST(Wavelet, TemporallyStaticClipHasNoTemporalDetail) {
  auto frame = random_clip<double>({1, 5, 5, 1}, 4);
  TensorD x({8, 5, 5, 1});
  for (std::size_t t = 0; t < 8; ++t) x.set_slice(t, frame.slice(0));
  auto p = decompose(x, config(WaveletFamily::kDb2, Boundary::kPeriodic));
  for (double v : p.high[0].values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Wavelet, RejectsTooManyLevels) {
  const Shape shape{8, 4, 4, 1};
  auto cfg = config(WaveletFamily::kHaar, Boundary::kPeriodic, TransformAxis::kTemporal, 4);
  EXPECT_EQ(cfg.max_levels(shape), 3);
  EXPECT_THROW(cfg.validate(shape), ValidationError);
  EXPECT_THROW(decompose(TensorF(shape), cfg), ValidationError);
}

TEST(Wavelet, PeriodicRejectsOddExtent) {
  auto cfg = config(WaveletFamily::kHaar, Boundary::kPeriodic);
  EXPECT_THROW(decompose(TensorF({7, 2, 2, 1}), cfg), ValidationError);
}

TEST(Wavelet, ReconstructRejectsMismatchedShapes) {
  auto p = decompose(random_clip<float>({8, 4, 4, 1}, 1), TransformConfig{});
  p.high[0] = TensorF({3, 4, 4, 1});
  EXPECT_THROW(reconstruct(p), ShapeError);
}

TEST(Wavelet, ParsesNames) {
  EXPECT_EQ(parse_family("db2"), WaveletFamily::kDb2);
  EXPECT_EQ(parse_axis(to_string(TransformAxis::kSpatiotemporal)), TransformAxis::kSpatiotemporal);
  EXPECT_EQ(parse_boundary(to_string(Boundary::kSymmetric)), Boundary::kSymmetric);
  EXPECT_THROW(parse_family("sym5"), ValidationError);
}

}  // namespace
}  // namespace veil
