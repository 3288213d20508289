#pragma once

// Independent reference computations used by the tests. Everything here is
// written as the plainest possible loop over the defining formula.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "faultformer/tensor.hpp"

namespace oracle {

inline faultformer::Tensor random_tensor(faultformer::Shape shape, std::uint64_t seed, bool requires_grad = false,
                                         double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(faultformer::numel_of(shape));
  for (auto& e : v) e = dist(rng);
  return faultformer::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& e : v) e = dist(rng);
  return v;
}

/// X[k] = sum_n x[n] exp(-2 pi i k n / L) for k = 0..L-1, O(L^2).
inline std::vector<std::complex<double>> naive_dft(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t modulo n first so the angle stays small and exact.
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[k] = acc;
  }
  return out;
}

/// Cross-correlation y[b,o,t] = bias[o] + sum_{i,k} w[o,i,k] x[b,i,t*s+k-p].
inline std::vector<double> naive_conv(std::span<const double> x, std::size_t batch, std::size_t cin, std::size_t len,
                                      std::span<const double> w, std::span<const double> bias, std::size_t cout,
                                      std::size_t kernel, std::size_t stride, std::size_t pad, bool depthwise) {
  const std::size_t out_len = (len + 2 * pad - kernel) / stride + 1;
  std::vector<double> y(batch * cout * out_len, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t t = 0; t < out_len; ++t) {
        double acc = bias[o];
        const std::size_t i_begin = depthwise ? o : 0;
        const std::size_t i_end = depthwise ? o + 1 : cin;
        for (std::size_t i = i_begin; i < i_end; ++i) {
          for (std::size_t k = 0; k < kernel; ++k) {
            const long pos = static_cast<long>(t * stride + k) - static_cast<long>(pad);
            if (pos < 0 || pos >= static_cast<long>(len)) continue;
            const std::size_t wi = depthwise ? o * kernel + k : (o * cin + i) * kernel + k;
            acc += w[wi] * x[(b * cin + i) * len + static_cast<std::size_t>(pos)];
          }
        }
        y[(b * cout + o) * out_len + t] = acc;
      }
    }
  }
  return y;
}

struct Scatter {
  std::vector<std::vector<double>> sb;
  std::vector<std::vector<double>> sw;
  double trace_sb = 0.0;
  double trace_sw = 0.0;
};

/// Full D x D between- and within-class scatter matrices by double loops.
inline Scatter brute_force_scatter(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& labels,
                                   std::size_t classes) {
  const std::size_t d = x.front().size();
  std::vector<double> global(d, 0.0);
  std::vector<std::vector<double>> mean(classes, std::vector<double>(d, 0.0));
  std::vector<double> count(classes, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    count[labels[i]] += 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      mean[labels[i]][j] += x[i][j];
      global[j] += x[i][j];
    }
  }
  for (std::size_t j = 0; j < d; ++j) global[j] /= static_cast<double>(x.size());
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < d; ++j) mean[c][j] /= count[c];
  }
  Scatter s;
  s.sb.assign(d, std::vector<double>(d, 0.0));
  s.sw.assign(d, std::vector<double>(d, 0.0));
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = 0; q < d; ++q) {
        s.sb[p][q] += count[c] * (mean[c][p] - global[p]) * (mean[c][q] - global[q]);
      }
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& m = mean[labels[i]];
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = 0; q < d; ++q) s.sw[p][q] += (x[i][p] - m[p]) * (x[i][q] - m[q]);
    }
  }
  for (std::size_t p = 0; p < d; ++p) {
    s.trace_sb += s.sb[p][p];
    s.trace_sw += s.sw[p][p];
  }
  return s;
}

/// Standard normal CDF from the complementary error function.
inline double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
