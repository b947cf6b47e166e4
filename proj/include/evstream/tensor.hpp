#pragma once

// Minimal dense math for the encoder and temporal stack. Parameters are kept
// as float32 (the serialized dtype); all arithmetic accumulates in double.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace evs {

// Row-major float matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> w;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), w(r * c, 0.0f) {}

  float& at(std::size_t r, std::size_t c) { return w[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return w[r * cols + c]; }
  std::size_t size() const { return w.size(); }
};

// y = x * M for a row vector x (length M.rows), y has length M.cols.
inline void matvec(const Mat& m, std::span<const double> x, std::span<double> y) {
  for (std::size_t c = 0; c < m.cols; ++c) y[c] = 0.0;
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double xr = x[r];
    const float* row = m.w.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += xr * static_cast<double>(row[c]);
  }
}

inline void add_bias(std::span<double> y, const std::vector<float>& b) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += static_cast<double>(b[i]);
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

// Overflow-safe softplus.
inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline constexpr double kLayerNormEps = 1e-5;

// out = (x - mean) / sqrt(var + eps) * gamma + beta, per vector.
inline void layer_norm(std::span<const double> x, const std::vector<float>& gamma,
                       const std::vector<float>& beta, std::span<double> out) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = (x[i] - mean) * inv * static_cast<double>(gamma[i]) +
             static_cast<double>(beta[i]);
  }
}

inline bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace evs
