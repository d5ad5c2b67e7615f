#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <vlinspect/math.hpp>

namespace vi = vlinspect;

TEST(SoftmaxRows, SymmetricRowIsUniform) {
  auto out = vi::softmax_rows(vi::Matrix::from_rows({{0, 0}}));
  EXPECT_FLOAT_EQ(out(0, 0), 0.5f);
  EXPECT_FLOAT_EQ(out(0, 1), 0.5f);
}

TEST(SoftmaxRows, DominantEntryTakesAllMass) {
  auto out = vi::softmax_rows(vi::Matrix::from_rows({{1e9f, 0}}));
  EXPECT_NEAR(out(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(out(0, 1), 0.0, 1e-6);
}

TEST(SoftmaxRows, MatchesScalarEvaluation) {
  // exp(i) / (e + e^2 + e^3), evaluated in double precision offline.
  auto out = vi::softmax_rows(vi::Matrix::from_rows({{1, 2, 3}}));
  EXPECT_NEAR(out(0, 0), 0.0900306, 1e-4);
  EXPECT_NEAR(out(0, 1), 0.2447285, 1e-4);
  EXPECT_NEAR(out(0, 2), 0.6652410, 1e-4);
}

TEST(SoftmaxRows, EmptyMatrixIsRejected) {
  EXPECT_THROW(vi::softmax_rows(vi::Matrix()), vi::InvalidArgument);
  EXPECT_THROW(vi::softmax_rows(vi::Matrix(3, 0)), vi::InvalidArgument);
}

TEST(SoftmaxRows, RandomRowsAreDistributionsAndShiftInvariant) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> val(-30.0f, 30.0f);
  std::uniform_int_distribution<int> dim(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    vi::Matrix m(static_cast<std::size_t>(dim(rng)), static_cast<std::size_t>(dim(rng)));
    for (float& x : m.data) x = val(rng);
    const auto p = vi::softmax_rows(m);
    vi::Matrix shifted = m;
    for (std::size_t r = 0; r < m.rows; ++r) {
      const float c = val(rng);
      for (float& x : shifted.row(r)) x += c;
    }
    const auto q = vi::softmax_rows(shifted);
    for (std::size_t r = 0; r < m.rows; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < m.cols; ++c) {
        ASSERT_GE(p(r, c), 0.0f);
        ASSERT_LE(p(r, c), 1.0f);
        ASSERT_NEAR(p(r, c), q(r, c), 1e-5);
        sum += p(r, c);
      }
      ASSERT_NEAR(sum, 1.0, 1e-5);
    }
  }
}

TEST(ScaledDotAttention, MatchedQueryKeyDominates) {
  const auto q = vi::Matrix::identity(2, 10.0f);
  const auto v = vi::Matrix::identity(2);
  auto res = vi::scaled_dot_attention(q, q, v, false);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_NEAR(res.map(i, j), i == j ? 1.0 : 0.0, 1e-4);
      EXPECT_NEAR(res.output(i, j), v(i, j), 1e-4);
    }
  }
}

TEST(ScaledDotAttention, HandEvaluatedExample) {
  // scores = [1/sqrt(2), 0]; softmax evaluated in double precision offline.
  const auto q = vi::Matrix::from_rows({{1, 0}});
  const auto k = vi::Matrix::identity(2);
  const auto v = vi::Matrix::identity(2, 2.0f);
  auto res = vi::scaled_dot_attention(q, k, v, false);
  EXPECT_NEAR(res.map(0, 0), 0.6697615, 1e-4);
  EXPECT_NEAR(res.map(0, 1), 0.3302385, 1e-4);
  EXPECT_NEAR(res.output(0, 0), 1.3395231, 1e-3);
  EXPECT_NEAR(res.output(0, 1), 0.6604769, 1e-3);
}

TEST(ScaledDotAttention, PrunedHeadAveragesValues) {
  std::mt19937 rng(3);
  std::normal_distribution<float> g(0.0f, 5.0f);
  for (int trial = 0; trial < 50; ++trial) {
    vi::Matrix q(3, 4), k(4, 4), v(4, 3);
    for (auto* m : {&q, &k, &v})
      for (float& x : m->data) x = g(rng);
    auto res = vi::scaled_dot_attention(q, k, v, true);
    for (std::size_t r = 0; r < q.rows; ++r) {
      for (std::size_t c = 0; c < k.rows; ++c) EXPECT_EQ(res.map(r, c), 0.25f);
      for (std::size_t c = 0; c < v.cols; ++c) {
        double mean = 0.0;
        for (std::size_t j = 0; j < v.rows; ++j) mean += v(j, c);
        EXPECT_NEAR(res.output(r, c), mean / 4.0, 1e-4);
      }
    }
  }
}

TEST(ScaledDotAttention, PrunedRowsAreUniformForAnyKeyCount) {
  for (std::size_t n = 1; n <= 64; ++n) {
    vi::Matrix q(2, 3, 1.0f), k(n, 3, 2.0f), v(n, 2, 1.0f);
    auto res = vi::scaled_dot_attention(q, k, v, true);
    for (float x : res.map.data) ASSERT_LT(std::abs(x - 1.0 / static_cast<double>(n)), 1e-7);
  }
}

TEST(ScaledDotAttention, DimensionMismatchIsRejected) {
  EXPECT_THROW(vi::scaled_dot_attention(vi::Matrix(2, 3), vi::Matrix(2, 4), vi::Matrix(2, 4), false), vi::InvalidArgument);
  EXPECT_THROW(vi::scaled_dot_attention(vi::Matrix(2, 4), vi::Matrix(3, 4), vi::Matrix(2, 4), false), vi::InvalidArgument);
}

TEST(LayerNorm, ConstantVectorNormalizesToZero) {
  const vi::Vector one(3, 1.0f), zero(3, 0.0f);
  for (float c : {-7.0f, 0.0f, 3.5f}) {
    auto out = vi::layer_norm(vi::Vector(3, c), one, zero);
    for (float x : out) EXPECT_NEAR(x, 0.0, 1e-6);
  }
}

TEST(LayerNorm, KnownValues) {
  const vi::Vector one2(2, 1.0f), zero2(2, 0.0f);
  auto a = vi::layer_norm(vi::Vector{1, -1}, one2, zero2);
  EXPECT_NEAR(a[0], 1.0, 1e-4);
  EXPECT_NEAR(a[1], -1.0, 1e-4);
  // (x - 2) / sqrt(2/3)
  const vi::Vector one3(3, 1.0f), zero3(3, 0.0f);
  auto b = vi::layer_norm(vi::Vector{1, 2, 3}, one3, zero3);
  EXPECT_NEAR(b[0], -1.2247449, 1e-3);
  EXPECT_NEAR(b[1], 0.0, 1e-3);
  EXPECT_NEAR(b[2], 1.2247449, 1e-3);
}

TEST(LayerNorm, GainAndBiasApply) {
  auto out = vi::layer_norm(vi::Vector{1, -1}, vi::Vector{2, 3}, vi::Vector{0.5f, -0.5f});
  EXPECT_NEAR(out[0], 2.5, 1e-4);
  EXPECT_NEAR(out[1], -3.5, 1e-4);
}

TEST(LayerNorm, DimensionMismatchIsRejected) {
  EXPECT_THROW(vi::layer_norm(vi::Vector{1, 2}, vi::Vector{1}, vi::Vector{0, 0}), vi::InvalidArgument);
}

TEST(Gelu, KnownValues) {
  EXPECT_EQ(vi::gelu(0.0f), 0.0f);
  EXPECT_NEAR(vi::gelu(10.0f), 10.0, 1e-4);
  EXPECT_NEAR(vi::gelu(1.0f), 0.8411920, 1e-3);
}

// The tanh GELU has a single minimum near x = -0.7518 (value about -0.170),
// so it is monotone on each side of it rather than on all of [-6, 6].
TEST(Gelu, MonotoneOnEachSideOfMinimum) {
  constexpr float kArgMin = -0.7518f;
  float prev = vi::gelu(-6.0f);
  float lowest = prev;
  for (int i = 1; i < 1000; ++i) {
    const float x = -6.0f + 12.0f * static_cast<float>(i) / 999.0f;
    const float y = vi::gelu(x);
    if (x <= kArgMin - 1e-3f) {
      ASSERT_LE(y, prev) << "at x=" << x;
    }
    if (x >= kArgMin + 1e-2f) {
      ASSERT_GE(y, prev) << "at x=" << x;
    }
    lowest = std::min(lowest, y);
    prev = y;
  }
  EXPECT_NEAR(lowest, -0.17004, 1e-3);
}

TEST(Linear, MatchesManualProduct) {
  const auto x = vi::Matrix::from_rows({{1, 2}, {3, 4}});
  const auto w = vi::Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  const vi::Vector b{0.5f, 0, -1};
  auto y = vi::linear(x, w, b);
  EXPECT_EQ(y, vi::Matrix::from_rows({{1.5f, 2, 2}, {3.5f, 4, 6}}));
  EXPECT_THROW(vi::linear(x, vi::Matrix(3, 3), b), vi::InvalidArgument);
}
