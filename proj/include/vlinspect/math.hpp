#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace vlinspect {

using Vector = std::vector<float>;

// Dense row-major float matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw InvalidArgument("matrix data length does not match rows*cols");
  }

  static Matrix from_rows(const std::vector<std::vector<float>>& rs) {
    Matrix m(rs.size(), rs.empty() ? 0 : rs.front().size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (rs[i].size() != m.cols) throw InvalidArgument("ragged rows");
      std::copy(rs[i].begin(), rs[i].end(), m.row(i).begin());
    }
    return m;
  }

  static Matrix identity(std::size_t n, float scale = 1.0f) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = scale;
    return m;
  }

  bool empty() const { return rows == 0 || cols == 0; }

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

}  // namespace detail

// y = x * W^T + b, with W stored [out x in] and one output row per input row.
inline Matrix linear(const Matrix& x, const Matrix& weight, std::span<const float> bias) {
  if (x.cols != weight.cols) {
    throw InvalidArgument("linear: input width " + std::to_string(x.cols) + " != weight width " +
                          std::to_string(weight.cols));
  }
  if (!bias.empty() && bias.size() != weight.rows) throw InvalidArgument("linear: bias length mismatch");
  Matrix y(x.rows, weight.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto xi = x.row(i);
    for (std::size_t o = 0; o < weight.rows; ++o) {
      double acc = detail::dot(xi, weight.row(o));
      if (!bias.empty()) acc += bias[o];
      y(i, o) = static_cast<float>(acc);
    }
  }
  return y;
}

// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& m) {
  if (m.empty()) throw InvalidArgument("softmax_rows: empty matrix");
  Matrix out(m.rows, m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto in = m.row(r);
    auto o = out.row(r);
    const float mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) {
      const double e = std::exp(static_cast<double>(in[c]) - mx);
      o[c] = static_cast<float>(e);
      sum += e;
    }
    for (std::size_t c = 0; c < m.cols; ++c) o[c] = static_cast<float>(o[c] / sum);
  }
  return out;
}

struct AttentionOutput {
  Matrix output;  // queries x value width
  Matrix map;     // queries x keys, row-stochastic
};

// Single-head scaled dot-product attention. A pruned head attends uniformly
// over all keys, so each output row is the column mean of V.
inline AttentionOutput scaled_dot_attention(const Matrix& q, const Matrix& k, const Matrix& v, bool prune) {
  if (q.cols != k.cols) throw InvalidArgument("attention: query and key widths differ");
  if (k.rows != v.rows) throw InvalidArgument("attention: key and value counts differ");
  if (k.rows == 0 || q.rows == 0) throw InvalidArgument("attention: empty query or key set");

  AttentionOutput res;
  if (prune) {
    res.map = Matrix(q.rows, k.rows, static_cast<float>(1.0 / static_cast<double>(k.rows)));
  } else {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
    Matrix scores(q.rows, k.rows);
    for (std::size_t i = 0; i < q.rows; ++i) {
      for (std::size_t j = 0; j < k.rows; ++j) {
        scores(i, j) = static_cast<float>(detail::dot(q.row(i), k.row(j)) * scale);
      }
    }
    res.map = softmax_rows(scores);
  }

  res.output = Matrix(q.rows, v.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    for (std::size_t c = 0; c < v.cols; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < k.rows; ++j) acc += static_cast<double>(res.map(i, j)) * v(j, c);
      res.output(i, c) = static_cast<float>(acc);
    }
  }
  return res;
}

inline constexpr float kLayerNormEps = 1e-12f;

inline Vector layer_norm(std::span<const float> v, std::span<const float> gain, std::span<const float> bias,
                         float eps = kLayerNormEps) {
  if (v.size() != gain.size() || v.size() != bias.size()) throw InvalidArgument("layer_norm: dimension mismatch");
  if (v.empty()) throw InvalidArgument("layer_norm: empty vector");
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (float x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double inv = 1.0 / std::sqrt(var + eps);
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(gain[i] * ((v[i] - mean) * inv) + bias[i]);
  }
  return out;
}

inline void layer_norm_rows(Matrix& m, std::span<const float> gain, std::span<const float> bias) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    Vector n = layer_norm(m.row(r), gain, bias);
    std::copy(n.begin(), n.end(), m.row(r).begin());
  }
}

// tanh approximation
inline float gelu(float x) {
  const double xd = x;
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return static_cast<float>(0.5 * xd * (1.0 + std::tanh(c * (xd + 0.044715 * xd * xd * xd))));
}

inline void gelu_inplace(Matrix& m) {
  for (float& x : m.data) x = gelu(x);
}

inline void add_inplace(Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw InvalidArgument("add: shape mismatch");
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.data.begin(), m.data.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace vlinspect
