#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "capsforge/tensor.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace capsforge;
using testutil::error_code;

TEST(Tensor, ConstructorRejectsLengthMismatch) {
  EXPECT_EQ(error_code([] { Tensor({2, 2}, {1, 2, 3}); }), Errc::shape_mismatch);
}

TEST(Tensor, F32RoundsStoredValues) {
  Tensor t({1}, {0.1}, DType::f32);
  EXPECT_EQ(t[0], static_cast<double>(0.1f));
  EXPECT_EQ(t.with_dtype(DType::f64)[0], static_cast<double>(0.1f));
}

TEST(Tensor, ParseDtype) {
  EXPECT_EQ(parse_dtype("f32"), DType::f32);
  EXPECT_EQ(parse_dtype("float64"), DType::f64);
  EXPECT_FALSE(parse_dtype("int8").has_value());
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(elementwise_apply(Tensor::vector({-1, 2, 0}), Elementwise::relu), Tensor::vector({0, 2, 0}));
  EXPECT_EQ(elementwise_apply(Tensor::vector({0}), Elementwise::sigmoid), Tensor::vector({0.5}));
  const auto x = Tensor::vector({-3.5, 0.25, 7});
  EXPECT_EQ(elementwise_apply(x, Elementwise::identity), x);
  EXPECT_EQ(elementwise_apply(Tensor::vector({1}), Elementwise::tanh)[0], std::tanh(1.0));
}

TEST(Elementwise, PreservesDtype) {
  Tensor t({2}, {0.3, -0.7}, DType::f32);
  EXPECT_EQ(elementwise_apply(t, Elementwise::sigmoid).dtype(), DType::f32);
}

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(Tensor::vector({0, 0})), Tensor::vector({0.5, 0.5}));
  const auto s = softmax(Tensor::vector({4.2, 4.2, 4.2}));
  for (double x : s.data()) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
  const auto big = softmax(Tensor::vector({1000, 0}));
  // exp(-1000) underflows to 0 in double; the exact value is below 1e-434.
  EXPECT_EQ(big[0], 1.0);
  EXPECT_GE(big[1], 0.0);
  EXPECT_LT(big[1], 1e-300);
}

TEST(Softmax, SumsToOneOnRandomInputs) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = oracle::random_tensor({1 + trial % 9}, rng, -50, 50);
    const auto s = softmax(v);
    double sum = 0;
    for (double x : s.data()) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, F32SumsToOne) {
  Tensor v({3}, {1.5, -2.0, 0.25}, DType::f32);
  const auto s = softmax(v);
  EXPECT_EQ(s.dtype(), DType::f32);
  EXPECT_NEAR(s[0] + s[1] + s[2], 1.0, 1e-5);
}

TEST(Squash, Examples) {
  EXPECT_EQ(squash(Tensor::vector({0, 0, 0})), Tensor::vector({0, 0, 0}));
  const auto v = squash(Tensor::vector({3, 4}));
  EXPECT_NEAR(v[0], 0.576923076923077, 1e-12);
  EXPECT_NEAR(v[1], 0.769230769230769, 1e-12);
  const auto unit = squash(Tensor::vector({0.6, 0.8}));
  EXPECT_NEAR(unit[0], 0.3, 1e-15);
  EXPECT_NEAR(unit[1], 0.4, 1e-15);
}

TEST(Squash, NormBelowOneAndParallel) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_tensor({1 + trial % 6}, rng, -10, 10);
    const auto v = squash(s);
    double vn = 0, sn = 0, dot = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      vn += v[i] * v[i];
      sn += s[i] * s[i];
      dot += v[i] * s[i];
    }
    vn = std::sqrt(vn);
    sn = std::sqrt(sn);
    EXPECT_LT(vn, 1.0);
    EXPECT_NEAR(vn, sn * sn / (1 + sn * sn), 1e-12);
    EXPECT_NEAR(dot, vn * sn, 1e-9 * (1 + vn * sn));
  }
}

TEST(Matmul, Examples) {
  const auto x = Tensor::vector({1, 2, 3});
  EXPECT_EQ(matmul(Tensor::identity(3), x), x);
  EXPECT_EQ(matmul(Tensor({2, 3}), x), Tensor::vector({0, 0}));
  EXPECT_EQ(matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({1, 1})), Tensor::vector({3, 7}));
}

TEST(Matmul, InnerDimensionMismatch) {
  EXPECT_EQ(error_code([] { matmul(Tensor({2, 3}), Tensor::vector({1, 2})); }), Errc::shape_mismatch);
}

TEST(Convolve2d, Examples) {
  std::mt19937_64 rng(1);
  const auto b = oracle::random_tensor({4, 5}, rng);
  EXPECT_EQ(convolve2d(Tensor::matrix({{1}}), b, 1), b);
  EXPECT_EQ(convolve2d(Tensor::filled({2, 2}, 1), Tensor::filled({3, 3}, 1), 1), Tensor::filled({2, 2}, 4));
  EXPECT_EQ(convolve2d(Tensor::filled({2, 2}, 1), Tensor::filled({4, 4}, 1), 2), Tensor::filled({2, 2}, 4));
}

TEST(Convolve2d, UnitKernelIsIdentityForAnyStride) {
  std::mt19937_64 rng(2);
  const auto b = oracle::random_tensor({5, 7}, rng);
  const auto strided = convolve2d(Tensor::matrix({{1}}), b, 2);
  ASSERT_EQ(strided.shape(), (Shape{3, 4}));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(strided.at(i, j), b.at(2 * i, 2 * j));
  }
}

TEST(Convolve2d, Errors) {
  EXPECT_EQ(error_code([] { convolve2d(Tensor({3, 3}), Tensor({2, 4}), 1); }), Errc::shape_mismatch);
  EXPECT_EQ(error_code([] { convolve2d(Tensor({2, 2}), Tensor({5, 5}), 2); }), Errc::stride_mismatch);
  EXPECT_EQ(error_code([] { convolve2d(Tensor({2, 2}), Tensor({4, 4}), 0); }), Errc::stride_mismatch);
}

TEST(Convolve2d, MatchesBruteForceOracle) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> extent(1, 8);
  int checked = 0;
  while (checked < 300) {
    const std::size_t M = extent(rng), N = extent(rng), m = extent(rng), n = extent(rng);
    const std::size_t s = 1 + rng() % 3;
    if (m > M || n > N || (M - m) % s || (N - n) % s) continue;
    const auto a = oracle::random_tensor({m, n}, rng);
    const auto b = oracle::random_tensor({M, N}, rng);
    EXPECT_LE(max_abs_diff(convolve2d(a, b, s), oracle::brute_convolve2d(a, b, s)), 1e-12);
    ++checked;
  }
}

TEST(ConvConnection, ReducesToConvolve2d) {
  std::mt19937_64 rng(4);
  const auto a = oracle::random_tensor({3, 2}, rng);
  const auto b = oracle::random_tensor({6, 5}, rng);
  const auto out = conv_connection_apply(a.reshaped({1, 1, 3, 2}), b.reshaped({1, 6, 5}), 1);
  EXPECT_EQ(out.reshaped({4, 4}), convolve2d(a, b, 1));
}

TEST(ConvConnection, IdenticalChannelsDouble) {
  std::mt19937_64 rng(5);
  const auto a = oracle::random_tensor({2, 2}, rng);
  const auto b = oracle::random_tensor({4, 4}, rng);
  Tensor kernels({1, 2, 2, 2});
  Tensor input({2, 4, 4});
  for (std::size_t c = 0; c < 2; ++c) {
    std::copy(a.data().begin(), a.data().end(), kernels.data().begin() + c * 4);
    std::copy(b.data().begin(), b.data().end(), input.data().begin() + c * 16);
  }
  const auto single = convolve2d(a, b, 2);
  const auto out = conv_connection_apply(kernels, input, 2);
  for (std::size_t k = 0; k < single.size(); ++k) EXPECT_NEAR(out[k], 2 * single[k], 1e-14);
}

TEST(ConvConnection, LenetFirstStageShape) {
  const auto out = conv_connection_apply(Tensor({32, 1, 5, 5}), Tensor({1, 28, 28}), 1);
  EXPECT_EQ(out.shape(), (Shape{32, 24, 24}));
}

TEST(ConvConnection, ChannelMismatch) {
  EXPECT_EQ(error_code([] { conv_connection_apply(Tensor({1, 2, 2, 2}), Tensor({3, 4, 4}), 1); }),
            Errc::shape_mismatch);
}

TEST(ConvConnection, MatchesBruteForceOracle) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::size_t> extent(1, 8), small(1, 3);
  int checked = 0;
  while (checked < 200) {
    const std::size_t M = extent(rng), N = extent(rng), m = extent(rng), n = extent(rng);
    const std::size_t s = small(rng), k = small(rng), d = small(rng);
    if (m > M || n > N || (M - m) % s || (N - n) % s) continue;
    const auto kernels = oracle::random_tensor({k, d, m, n}, rng);
    const auto input = oracle::random_tensor({d, M, N}, rng);
    const auto got = conv_connection_apply(kernels, input, s);
    const auto want = oracle::brute_conv_connection(kernels, input, s);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LE(max_abs_diff(got, want), 1e-12);
    ++checked;
  }
}

TEST(MaxDownsample, Examples) {
  EXPECT_EQ(max_downsample(Tensor({1, 2, 2}, {1, 2, 3, 4}), 2, 2).values, Tensor({1, 1, 1}, {4}));
  EXPECT_EQ(max_downsample(Tensor::filled({1, 4, 4}, 3), 2, 2).values, Tensor::filled({1, 2, 2}, 3));
  const Tensor x({1, 4, 4}, {1, 5, 2, 0, 3, 4, 1, 1, 0, 0, 9, 8, 0, 0, 7, 6});
  const auto out = max_downsample(x, 2, 2);
  EXPECT_EQ(out.values, Tensor({1, 2, 2}, {5, 2, 0, 9}));
  EXPECT_EQ(out.argmax, (std::vector<std::size_t>{1, 2, 8, 10}));
}

TEST(MaxDownsample, TiesRouteToFirstInRowMajorOrder) {
  const auto out = max_downsample(Tensor::filled({1, 2, 2}, 1), 2, 2);
  EXPECT_EQ(out.argmax, (std::vector<std::size_t>{0}));
}

TEST(MaxDownsample, WindowMismatch) {
  EXPECT_EQ(error_code([] { max_downsample(Tensor({1, 5, 4}), 2, 2); }), Errc::window_mismatch);
}

TEST(MaxDownsample, OutputsDominateTheirBlocks) {
  std::mt19937_64 rng(7);
  const auto x = oracle::random_tensor({2, 6, 4}, rng);
  const auto out = max_downsample(x, 3, 2);
  ASSERT_EQ(out.values.shape(), (Shape{2, 2, 2}));
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        bool member = false;
        for (std::size_t u = 0; u < 3; ++u) {
          for (std::size_t v = 0; v < 2; ++v) {
            const double e = x.at(c, 3 * i + u, 2 * j + v);
            EXPECT_GE(out.values.at(c, i, j), e);
            member = member || e == out.values.at(c, i, j);
          }
        }
        EXPECT_TRUE(member);
      }
    }
  }
}

TEST(ReshapeFlatten, Examples) {
  EXPECT_EQ(reshape_flatten(Tensor({1, 1, 3}, {4, 5, 6})), Tensor::vector({4, 5, 6}));
  EXPECT_EQ(reshape_flatten(Tensor({1, 2, 2}, {1, 2, 3, 4})), Tensor::vector({1, 2, 3, 4}));
  EXPECT_EQ(reshape_flatten(Tensor({2, 1, 2}, {1, 2, 3, 4})), Tensor::vector({1, 2, 3, 4}));
}

TEST(ReshapeFlatten, PreservesMultiset) {
  std::mt19937_64 rng(8);
  const auto x = oracle::random_tensor({3, 4, 5}, rng);
  const auto y = reshape_flatten(x);
  std::vector<double> a(x.data().begin(), x.data().end()), b(y.data().begin(), y.data().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
  EXPECT_EQ(y.shape(), (Shape{60}));
}

TEST(TensorArithmetic, AddAndSubtractScaled) {
  auto a = Tensor::vector({1, 2});
  add_inplace(a, Tensor::vector({3, 4}));
  EXPECT_EQ(a, Tensor::vector({4, 6}));
  subtract_scaled(a, 0.5, Tensor::vector({2, 2}));
  EXPECT_EQ(a, Tensor::vector({3, 5}));
  EXPECT_EQ(error_code([&] { add_inplace(a, Tensor::vector({1})); }), Errc::shape_mismatch);
}
