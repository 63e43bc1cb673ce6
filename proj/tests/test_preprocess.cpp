#include <gtest/gtest.h>

#include <random>

#include "fmri3d/preprocess.hpp"
#include "oracles.hpp"

using namespace fmri3d;
using namespace fmri3d::data;

TEST(Resample, ConstantVolumeStaysConstant) {
  Tensor<double> c(Shape{5, 7, 3}, 2.25);
  auto out = resample_trilinear(c, {28, 28, 28});
  EXPECT_EQ(out, Tensor<double>(Shape{28, 28, 28}, 2.25));
}

TEST(Resample, SameShapeIsBitwiseIdentity) {
  std::mt19937_64 rng(1);
  auto v = oracle::random_tensor(Shape{6, 5, 4}, rng);
  EXPECT_EQ(resample_trilinear(v, {6, 5, 4}), v);
}

TEST(Resample, CornersAreKept) {
  std::mt19937_64 rng(2);
  auto v = oracle::random_tensor(Shape{9, 7, 5}, rng);
  auto out = resample_trilinear(v, {4, 11, 3});
  EXPECT_EQ(out.at({0, 0, 0}), v.at({0, 0, 0}));
  EXPECT_EQ(out.at({3, 10, 2}), v.at({8, 6, 4}));
}

TEST(Resample, RampIsExact) {
  Tensor<double> r(Shape{2, 2, 3});
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 3; ++w) r.at({d, h, w}) = double(w);
  auto out = resample_trilinear(r, {2, 2, 5});
  for (std::size_t w = 0; w < 5; ++w) EXPECT_EQ(out.at({1, 0, w}), 0.5 * double(w));
}

TEST(Resample, ReproducesTrilinearPolynomials) {
  auto f = [](double d, double h, double w) { return 1.0 + 2.0 * d - 3.0 * h + 0.5 * w + 0.25 * d * h - w * d + 0.1 * d * h * w; };
  const std::array<std::size_t, 3> src{6, 5, 7};
  Tensor<double> v(Shape{src[0], src[1], src[2]});
  for (std::size_t d = 0; d < src[0]; ++d)
    for (std::size_t h = 0; h < src[1]; ++h)
      for (std::size_t w = 0; w < src[2]; ++w) v.at({d, h, w}) = f(double(d), double(h), double(w));
  const std::array<std::size_t, 3> dst{11, 3, 16};
  auto out = resample_trilinear(v, dst);
  auto pos = [&](std::size_t i, std::size_t a) { return double(i) * double(src[a] - 1) / double(dst[a] - 1); };
  for (std::size_t d = 0; d < dst[0]; ++d)
    for (std::size_t h = 0; h < dst[1]; ++h)
      for (std::size_t w = 0; w < dst[2]; ++w)
        ASSERT_NEAR(out.at({d, h, w}), f(pos(d, 0), pos(h, 1), pos(w, 2)), 1e-10);
}

TEST(Resample, DegenerateAxesAreRejected) {
  try {
    resample_trilinear(Tensor<double>(Shape{1, 4, 4}), {2, 2, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateAxis);
  }
  try {
    resample_trilinear(Tensor<double>(Shape{4, 4, 4}), {2, 0, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateAxis);
  }
}

TEST(Resample, SeriesResamplesEachFrame) {
  std::mt19937_64 rng(3);
  auto s = oracle::random_tensor(Shape{3, 4, 4, 4}, rng);
  auto out = resample_series(s, {7, 7, 7});
  EXPECT_EQ(out.shape(), Shape({3, 7, 7, 7}));
  EXPECT_EQ(slice_time(out, 2), resample_trilinear(slice_time(s, 2), {7, 7, 7}));
}

TEST(TimeAxis, IndexExamples) {
  std::vector<std::size_t> same(30);
  for (std::size_t i = 0; i < 30; ++i) same[i] = i;
  EXPECT_EQ(time_indices(30), same);
  auto shrink = time_indices(59);
  EXPECT_EQ(shrink.size(), 30u);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(shrink[i], 2 * i);
  auto grow = time_indices(10);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(grow[i], i % 10);
  auto odd = time_indices(100);
  EXPECT_EQ(odd.front(), 0u);
  EXPECT_EQ(odd.back(), 99u);
  EXPECT_TRUE(std::is_sorted(odd.begin(), odd.end()));
}

TEST(TimeAxis, StandardizeSelectsFrames) {
  std::mt19937_64 rng(4);
  auto s = oracle::random_tensor(Shape{59, 2, 2, 2}, rng);
  auto out = standardize_time(s);
  EXPECT_EQ(out.shape(), Shape({30, 2, 2, 2}));
  EXPECT_EQ(slice_time(out, 29), slice_time(s, 58));
}

TEST(ZNormalize, UnitMomentsAndAffineInvariance) {
  std::mt19937_64 rng(5);
  auto v = oracle::random_tensor(Shape{5, 6, 7}, rng, -4.0, 9.0);
  auto z = znormalize(v);
  double mean = 0, var = 0;
  for (double x : z.data()) mean += x;
  mean /= double(z.size());
  for (double x : z.data()) var += (x - mean) * (x - mean);
  var /= double(z.size());
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(var, 1.0, 1e-12);
  Tensor<double> shifted(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) shifted[i] = 3.5 * v[i] - 17.0;
  EXPECT_LE(oracle::max_abs_diff(znormalize(shifted), z), 1e-10);
  EXPECT_LE(oracle::max_abs_diff(znormalize(z), z), 1e-10);
}

TEST(ZNormalize, ConstantVolumeBecomesZeros) {
  EXPECT_EQ(znormalize(Tensor<double>(Shape{3, 3, 3}, 7.0)), Tensor<double>(Shape{3, 3, 3}));
}
