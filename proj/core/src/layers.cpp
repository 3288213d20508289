#include "faultformer/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "faultformer/autograd.hpp"
#include "faultformer/errors.hpp"
#include "simd.hpp"

namespace faultformer {

using detail::input_grad;
using detail::make_result;
using detail::NodeList;

namespace {

using simd::load4;
using simd::store4;
using simd::Vec4;

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " +
                         to_string(x.shape()));
  }
}

Tensor uniform(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(numel_of(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

constexpr std::size_t kBlock = 8;

[[gnu::always_inline]] inline void dot_into_body(const double* a, const double* b, std::size_t n, double* out) {
  Vec4 acc0{};
  Vec4 acc1{};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 += load4(a + i) * load4(b + i);
    acc1 += load4(a + i + 4) * load4(b + i + 4);
  }
  const Vec4 acc = acc0 + acc1;
  double total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (; i < n; ++i) total += a[i] * b[i];
  *out = total;
}

[[gnu::always_inline]] inline void axpy_body(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

FAULTFORMER_KERNEL(dot_into, (const double* a, const double* b, std::size_t n, double* out), (a, b, n, out))
FAULTFORMER_KERNEL(axpy, (double alpha, const double* x, double* y, std::size_t n), (alpha, x, y, n))

double dot(const double* a, const double* b, std::size_t n) {
  double out = 0.0;
  dot_into(a, b, n, &out);
  return out;
}

// Index arithmetic for one convolution call. Input rows are zero-padded and
// split into `stride` phases of `span` values each, so tap kk of output t
// reads phase[kk % stride][t + kk / stride] with no bounds checks.
struct ConvGeometry {
  std::size_t length;
  std::size_t out_len;
  std::size_t kernel;
  std::size_t stride;
  std::size_t padding;
  std::size_t reach;  // largest kk / stride
  std::size_t span;

  ConvGeometry(std::size_t l, std::size_t out, std::size_t k, std::size_t s, std::size_t pad)
      : length(l), out_len(out), kernel(k), stride(s), padding(pad), reach((k - 1) / s) {
    span = std::max(out_len + reach, (length + 2 * padding + stride - 1) / stride) + kBlock;
  }

  std::size_t row_size() const { return stride * span; }

  // Calls f(n, slot) for every input index n and its split-row slot.
  template <typename F>
  void for_each_slot(F&& f) const {
    for (std::size_t p = 0; p < stride; ++p) {
      // First m = n + padding with m % stride == p and n >= 0.
      std::size_t m = padding + (p + stride - padding % stride) % stride;
      for (; m < padding + length; m += stride) f(m - padding, p * span + m / stride);
    }
  }

  void split(const double* x, double* dst) const {
    std::fill(dst, dst + row_size(), 0.0);
    if (stride == 1) {
      std::copy_n(x, length, dst + padding);
      return;
    }
    for_each_slot([&](std::size_t n, std::size_t slot) { dst[slot] = x[n]; });
  }

  void merge_add(const double* src, double* x) const {
    if (stride == 1) {
      for (std::size_t n = 0; n < length; ++n) x[n] += src[n + padding];
      return;
    }
    for_each_slot([&](std::size_t n, std::size_t slot) { x[n] += src[slot]; });
  }

  std::size_t tap_offset(std::size_t kk) const { return (kk % stride) * span + kk / stride; }
};

constexpr std::size_t kLanes = 4;  // channels per register block
constexpr std::size_t kRun = 8;    // time steps per register block

[[gnu::always_inline]] inline void store_run(double* dst, const Vec4 (&acc)[2], std::size_t n) {
  store4(dst, acc[0], std::min<std::size_t>(n, 4));
  if (n > 4) store4(dst + 4, acc[1], n - 4);
}

// Dense forward pass for one batch item. wpack is [cout/4][cin][k][4].
[[gnu::always_inline]] inline void dense_forward_body(const ConvGeometry& geo, const std::size_t* taps,
                                                      std::size_t cin, std::size_t cout, const double* xs,
                                                      const double* wpack, const double* bias, double* y) {
  const std::size_t k = geo.kernel;
  const std::size_t row = geo.row_size();
  const std::size_t out_len = geo.out_len;
  for (std::size_t ob = 0; ob * kLanes < cout; ++ob) {
    const std::size_t lanes = std::min(kLanes, cout - ob * kLanes);
    for (std::size_t t0 = 0; t0 < out_len; t0 += kRun) {
      Vec4 acc[kLanes][2];
      for (std::size_t l = 0; l < kLanes; ++l) {
        const double b = l < lanes ? bias[ob * kLanes + l] : 0.0;
        acc[l][0] = Vec4{b, b, b, b};
        acc[l][1] = acc[l][0];
      }
      for (std::size_t i = 0; i < cin; ++i) {
        const double* xr = xs + i * row + t0;
        const double* wp = wpack + (ob * cin + i) * k * kLanes;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const Vec4 x0 = load4(xr + taps[kk]);
          const Vec4 x1 = load4(xr + taps[kk] + 4);
          const double* w = wp + kk * kLanes;
          for (std::size_t l = 0; l < kLanes; ++l) {
            acc[l][0] += w[l] * x0;
            acc[l][1] += w[l] * x1;
          }
        }
      }
      const std::size_t n = std::min(kRun, out_len - t0);
      for (std::size_t l = 0; l < lanes; ++l) store_run(y + (ob * kLanes + l) * out_len + t0, acc[l], n);
    }
  }
}

// Input gradient in split layout for channels [ib*4, ib*4+4). gyp holds
// padded output-gradient rows; wtpack is [cin/4][cout][k][4].
[[gnu::always_inline]] inline void dense_input_grad_body(const ConvGeometry& geo, std::size_t ib, std::size_t cout,
                                                         const double* gyp, std::size_t gy_row,
                                                         const double* wtpack, double* gsplit) {
  const std::size_t k = geo.kernel;
  const std::size_t stride = geo.stride;
  const std::size_t span = geo.span;
  const std::size_t row = geo.row_size();
  for (std::size_t p = 0; p < stride; ++p) {
    for (std::size_t j0 = 0; j0 < span; j0 += kRun) {
      Vec4 acc[kLanes][2] = {};
      for (std::size_t o = 0; o < cout; ++o) {
        const double* src = gyp + o * gy_row + geo.reach + j0;
        const double* wt = wtpack + (ib * cout + o) * k * kLanes;
        for (std::size_t kk = p; kk < k; kk += stride, --src) {
          const Vec4 g0 = load4(src);
          const Vec4 g1 = load4(src + 4);
          const double* w = wt + kk * kLanes;
          for (std::size_t l = 0; l < kLanes; ++l) {
            acc[l][0] += w[l] * g0;
            acc[l][1] += w[l] * g1;
          }
        }
      }
      const std::size_t n = std::min(kRun, span - j0);
      for (std::size_t l = 0; l < kLanes; ++l) store_run(gsplit + l * row + p * span + j0, acc[l], n);
    }
  }
}

// Weight gradient for output channels [ob*4, ob*4+4) against one input row;
// sums is [k][4]. Taps are processed in pairs.
[[gnu::always_inline]] inline void dense_weight_grad_body(const ConvGeometry& geo, const std::size_t* taps,
                                                          const double* const* gy, const double* xr, double* sums) {
  const std::size_t out_len = geo.out_len;
  const std::size_t full = out_len - out_len % 4;
  const double* g[kLanes] = {gy[0], gy[1], gy[2], gy[3]};
  for (std::size_t kk = 0; kk < geo.kernel; kk += 2) {
    const bool pair = kk + 1 < geo.kernel;
    const double* s0 = xr + taps[kk];
    const double* s1 = pair ? xr + taps[kk + 1] : s0;
    Vec4 acc[kLanes][2] = {};
    for (std::size_t t = 0; t < full; t += 4) {
      const Vec4 x0 = load4(s0 + t);
      const Vec4 x1 = load4(s1 + t);
      for (std::size_t l = 0; l < kLanes; ++l) {
        const Vec4 gv = load4(g[l] + t);
        acc[l][0] += gv * x0;
        acc[l][1] += gv * x1;
      }
    }
    for (std::size_t j = 0; j < (pair ? 2U : 1U); ++j) {
      const double* src = j == 0 ? s0 : s1;
      for (std::size_t l = 0; l < kLanes; ++l) {
        double lanes[4];
        __builtin_memcpy(lanes, &acc[l][j], sizeof lanes);
        double total = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
        for (std::size_t t = full; t < out_len; ++t) total += g[l][t] * src[t];
        sums[(kk + j) * kLanes + l] = total;
      }
    }
  }
}

FAULTFORMER_KERNEL(dense_forward,
                   (const ConvGeometry& geo, const std::size_t* taps, std::size_t cin, std::size_t cout,
                    const double* xs, const double* wpack, const double* bias, double* y),
                   (geo, taps, cin, cout, xs, wpack, bias, y))
FAULTFORMER_KERNEL(dense_input_grad,
                   (const ConvGeometry& geo, std::size_t ib, std::size_t cout, const double* gyp,
                    std::size_t gy_row, const double* wtpack, double* gsplit),
                   (geo, ib, cout, gyp, gy_row, wtpack, gsplit))
FAULTFORMER_KERNEL(dense_weight_grad,
                   (const ConvGeometry& geo, const std::size_t* taps, const double* const* gy,
                    const double* xr, double* sums),
                   (geo, taps, gy, xr, sums))

// Shared kernel for standard and depthwise convolutions. In depthwise mode
// output channel o reads only input channel o.
Tensor conv_impl(const Tensor& x, const ConvSpec& spec, const char* op) {
  require_rank(x, 3, op);
  spec.validate();
  const std::size_t batch = x.dim(0);
  const std::size_t cin = x.dim(1);
  const std::size_t length = x.dim(2);
  if (cin != spec.in_channels) {
    throw DimensionError(std::string(op) + ": input has " + std::to_string(cin) + " channels, layer expects " +
                         std::to_string(spec.in_channels));
  }
  const std::size_t out_len = spec.output_length(length);
  const std::size_t cout = spec.out_channels;
  const std::size_t k = spec.kernel;
  const bool dw = spec.depthwise;
  const ConvGeometry geo(length, out_len, k, spec.stride, spec.padding);
  const std::size_t row = geo.row_size();
  std::vector<std::size_t> taps(k);
  for (std::size_t kk = 0; kk < k; ++kk) taps[kk] = geo.tap_offset(kk);
  const std::size_t out_blocks = (cout + kLanes - 1) / kLanes;
  const std::size_t in_blocks = (cin + kLanes - 1) / kLanes;

  auto xv = x.data();
  auto wv = spec.weights.data();
  auto bv = spec.bias.data();
  std::vector<double> wpack;
  if (!dw) {
    wpack.assign(out_blocks * cin * k * kLanes, 0.0);
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t i = 0; i < cin; ++i) {
        for (std::size_t kk = 0; kk < k; ++kk) {
          wpack[((o / kLanes * cin + i) * k + kk) * kLanes + o % kLanes] = wv[(o * cin + i) * k + kk];
        }
      }
    }
  }
  std::vector<double> xs(cin * row);
  std::vector<double> out(batch * cout * out_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < cin; ++i) geo.split(&xv[(b * cin + i) * length], &xs[i * row]);
    double* yb = &out[b * cout * out_len];
    if (!dw) {
      dense_forward(geo, taps.data(), cin, cout, xs.data(), wpack.data(), bv.data(), yb);
      continue;
    }
    for (std::size_t o = 0; o < cout; ++o) {
      double* y = yb + o * out_len;
      const double* xr = &xs[o * row];
      std::fill(y, y + out_len, bv[o]);
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double w = wv[o * k + kk];
        const double* src = xr + taps[kk];
        for (std::size_t t = 0; t < out_len; ++t) y[t] += w * src[t];
      }
    }
  }

  return make_result(
      op, {batch, cout, out_len}, std::move(out), {x, spec.weights, spec.bias},
      [=](std::span<const double> g, const NodeList& in) {
        const auto& xd = in[0]->data;
        const auto& wd = in[1]->data;
        auto gx = input_grad(in[0]);
        auto gw = input_grad(in[1]);
        auto gb = input_grad(in[2]);
        const std::size_t gy_row = geo.reach + geo.span + kRun;
        const std::vector<double> zeros(out_len, 0.0);
        std::vector<double> xsplit(gw.empty() ? 0 : cin * row);
        std::vector<double> gyp(gx.empty() ? 0 : cout * gy_row);
        std::vector<double> gsplit(gx.empty() ? 0 : kLanes * row);
        std::vector<double> sums(k * kLanes);
        std::vector<double> wtpack;
        if (!gx.empty() && !dw) {
          wtpack.assign(in_blocks * cout * k * kLanes, 0.0);
          for (std::size_t o = 0; o < cout; ++o) {
            for (std::size_t i = 0; i < cin; ++i) {
              for (std::size_t kk = 0; kk < k; ++kk) {
                wtpack[((i / kLanes * cout + o) * k + kk) * kLanes + i % kLanes] = wd[(o * cin + i) * k + kk];
              }
            }
          }
        }
        for (std::size_t b = 0; b < batch; ++b) {
          const double* g_rows = &g[b * cout * out_len];
          if (!gb.empty()) {
            for (std::size_t o = 0; o < cout; ++o) {
              const double* gy = g_rows + o * out_len;
              double acc = 0.0;
              for (std::size_t t = 0; t < out_len; ++t) acc += gy[t];
              gb[o] += acc;
            }
          }
          if (!gw.empty()) {
            for (std::size_t i = 0; i < cin; ++i) geo.split(&xd[(b * cin + i) * length], &xsplit[i * row]);
            if (dw) {
              for (std::size_t o = 0; o < cout; ++o) {
                for (std::size_t kk = 0; kk < k; ++kk) {
                  gw[o * k + kk] += dot(g_rows + o * out_len, &xsplit[o * row] + taps[kk], out_len);
                }
              }
            } else {
              for (std::size_t ob = 0; ob < out_blocks; ++ob) {
                const double* gy[kLanes];
                for (std::size_t l = 0; l < kLanes; ++l) {
                  const std::size_t o = ob * kLanes + l;
                  gy[l] = o < cout ? g_rows + o * out_len : zeros.data();
                }
                for (std::size_t i = 0; i < cin; ++i) {
                  dense_weight_grad(geo, taps.data(), gy, &xsplit[i * row], sums.data());
                  for (std::size_t l = 0; l < kLanes && ob * kLanes + l < cout; ++l) {
                    double* gwr = &gw[((ob * kLanes + l) * cin + i) * k];
                    for (std::size_t kk = 0; kk < k; ++kk) gwr[kk] += sums[kk * kLanes + l];
                  }
                }
              }
            }
          }
          if (gx.empty()) continue;
          std::fill(gyp.begin(), gyp.end(), 0.0);
          for (std::size_t o = 0; o < cout; ++o) {
            std::copy_n(g_rows + o * out_len, out_len, &gyp[o * gy_row + geo.reach]);
          }
          if (dw) {
            for (std::size_t i = 0; i < cin; ++i) {
              std::fill(gsplit.begin(), gsplit.begin() + static_cast<std::ptrdiff_t>(row), 0.0);
              const double* gr = &gyp[i * gy_row + geo.reach];
              for (std::size_t kk = 0; kk < k; ++kk) {
                const double w = wd[i * k + kk];
                double* dst = &gsplit[taps[kk]];
                for (std::size_t t = 0; t < out_len; ++t) dst[t] += w * gr[t];
              }
              geo.merge_add(gsplit.data(), &gx[(b * cin + i) * length]);
            }
            continue;
          }
          for (std::size_t ib = 0; ib < in_blocks; ++ib) {
            dense_input_grad(geo, ib, cout, gyp.data(), gy_row, wtpack.data(), gsplit.data());
            for (std::size_t l = 0; l < kLanes && ib * kLanes + l < cin; ++l) {
              geo.merge_add(&gsplit[l * row], &gx[(b * cin + ib * kLanes + l) * length]);
            }
          }
        }
      });
}

}  // namespace

std::size_t ConvSpec::output_length(std::size_t input_length) const {
  const std::size_t padded = input_length + 2 * padding;
  if (padded < kernel) {
    throw DimensionError("conv1d: output length < 1 for L=" + std::to_string(input_length) + ", kernel=" +
                         std::to_string(kernel) + ", stride=" + std::to_string(stride) +
                         ", padding=" + std::to_string(padding));
  }
  return (padded - kernel) / stride + 1;
}

void ConvSpec::validate() const {
  if (kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0) {
    throw ConfigError("conv1d: kernel, stride and channel counts must be positive");
  }
  if (depthwise && in_channels != out_channels) {
    throw ConfigError("depthwise conv requires in_channels == out_channels");
  }
  const Shape expected{out_channels, depthwise ? std::size_t{1} : in_channels, kernel};
  if (weights.shape() != expected) {
    throw DimensionError("conv1d: weights " + to_string(weights.shape()) + " but expected " + to_string(expected));
  }
  if (bias.shape() != Shape{out_channels}) {
    throw DimensionError("conv1d: bias " + to_string(bias.shape()) + " but expected [" +
                         std::to_string(out_channels) + "]");
  }
}

ConvSpec make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                   std::size_t padding, Rng& rng) {
  ConvSpec spec{in_channels, out_channels, kernel, stride, padding, false, {}, {}};
  const double bound = std::sqrt(1.0 / static_cast<double>(in_channels * kernel));
  spec.weights = uniform({out_channels, in_channels, kernel}, bound, rng);
  spec.bias = Tensor({out_channels}, true);
  return spec;
}

ConvSpec make_depthwise_conv(std::size_t channels, std::size_t kernel, Rng& rng) {
  if (kernel % 2 == 0) throw ConfigError("depthwise conv kernel must be odd to preserve length");
  ConvSpec spec{channels, channels, kernel, 1, (kernel - 1) / 2, true, {}, {}};
  const double bound = std::sqrt(1.0 / static_cast<double>(kernel));
  spec.weights = uniform({channels, 1, kernel}, bound, rng);
  spec.bias = Tensor({channels}, true);
  return spec;
}

ConvSpec make_same_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng) {
  if (kernel % 2 == 0) throw ConfigError("length-preserving conv needs an odd kernel, got " + std::to_string(kernel));
  return make_conv(in_channels, out_channels, kernel, 1, (kernel - 1) / 2, rng);
}

Tensor conv1d(const Tensor& x, const ConvSpec& spec) {
  return conv_impl(x, spec, spec.depthwise ? "depthwise_conv1d" : "conv1d");
}

Tensor depthwise_conv1d(const Tensor& x, const ConvSpec& spec) {
  if (!spec.depthwise) throw ConfigError("depthwise_conv1d called with a dense ConvSpec");
  return conv_impl(x, spec, "depthwise_conv1d");
}

Tensor gelu(const Tensor& x) {
  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * 0.5 * std::erfc(-xv[i] * std::numbers::sqrt2 / 2.0);
  return make_result("gelu", x.shape(), std::move(out), {x}, [](std::span<const double> g, const NodeList& in) {
    auto gx = input_grad(in[0]);
    if (gx.empty()) return;
    const auto& xd = in[0]->data;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xd[i];
      const double cdf = 0.5 * std::erfc(-v * std::numbers::sqrt2 / 2.0);
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " + to_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  const std::size_t n = shape[axis];

  auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * n * inner + j;
      double peak = xv[base];
      for (std::size_t i = 1; i < n; ++i) peak = std::max(peak, xv[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(xv[base + i * inner] - peak);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= total;
    }
  }
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", shape, std::move(out), {x},
                     [saved, outer, inner, n](std::span<const double> g, const NodeList& in) {
                       auto gx = input_grad(in[0]);
                       if (gx.empty()) return;
                       const auto& y = *saved;
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t j = 0; j < inner; ++j) {
                           const std::size_t base = o * n * inner + j;
                           double dot = 0.0;
                           for (std::size_t i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
                           for (std::size_t i = 0; i < n; ++i) {
                             const std::size_t p = base + i * inner;
                             gx[p] += y[p] * (g[p] - dot);
                           }
                         }
                       }
                     });
}

std::size_t pooled_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) throw ConfigError("maxpool1d: kernel and stride must be positive");
  if (length < kernel) {
    throw DimensionError("maxpool1d: length " + std::to_string(length) + " shorter than kernel " +
                         std::to_string(kernel));
  }
  return (length - kernel) / stride + 1;
}

Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 3, "maxpool1d");
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t length = x.dim(2);
  const std::size_t out_len = pooled_length(length, kernel, stride);
  auto xv = x.data();
  std::vector<double> out(rows * out_len);
  auto argmax = std::make_shared<std::vector<std::size_t>>(rows * out_len);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * length];
    for (std::size_t t = 0; t < out_len; ++t) {
      std::size_t best = t * stride;
      for (std::size_t j = best + 1; j < t * stride + kernel; ++j) {
        if (xr[j] > xr[best]) best = j;
      }
      out[r * out_len + t] = xr[best];
      (*argmax)[r * out_len + t] = r * length + best;
    }
  }
  return make_result("maxpool1d", {x.dim(0), x.dim(1), out_len}, std::move(out), {x},
                     [argmax](std::span<const double> g, const NodeList& in) {
                       auto gx = input_grad(in[0]);
                       if (gx.empty()) return;
                       for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
                     });
}

BatchNormState BatchNormState::create(std::size_t channels) {
  BatchNormState state;
  state.scale = Tensor::full({channels}, 1.0, true);
  state.shift = Tensor::full({channels}, 0.0, true);
  state.running_mean.assign(channels, 0.0);
  state.running_var.assign(channels, 1.0);
  return state;
}

Tensor batchnorm1d(const Tensor& x, BatchNormState& state) {
  require_rank(x, 3, "batchnorm1d");
  const std::size_t batch = x.dim(0);
  const std::size_t channels = x.dim(1);
  const std::size_t length = x.dim(2);
  if (channels != state.channels()) {
    throw DimensionError("batchnorm1d: input has " + std::to_string(channels) + " channels, state has " +
                         std::to_string(state.channels()));
  }
  if (state.epsilon <= 0.0) throw ConfigError("batchnorm1d: epsilon must be positive");
  const std::size_t count = batch * length;
  if (state.training && count < 2) {
    throw ContractError("batchnorm1d: training mode needs batch*length >= 2, got " + std::to_string(count));
  }

  auto xv = x.data();
  auto gamma = state.scale.data();
  auto beta = state.shift.data();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(channels);
  std::vector<double> out(xv.size());
  const double n = static_cast<double>(count);

  for (std::size_t c = 0; c < channels; ++c) {
    double mu = 0.0;
    double var = 0.0;
    if (state.training) {
      for (std::size_t b = 0; b < batch; ++b) {
        const double* row = &xv[(b * channels + c) * length];
        for (std::size_t t = 0; t < length; ++t) mu += row[t];
      }
      mu /= n;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* row = &xv[(b * channels + c) * length];
        for (std::size_t t = 0; t < length; ++t) var += (row[t] - mu) * (row[t] - mu);
      }
      var /= n;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * var * n / (n - 1.0);
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.epsilon);
    (*inv_std)[c] = is;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels + c) * length;
      for (std::size_t t = 0; t < length; ++t) {
        const double h = (xv[base + t] - mu) * is;
        (*xhat)[base + t] = h;
        out[base + t] = gamma[c] * h + beta[c];
      }
    }
  }

  const bool training = state.training;
  return make_result(
      "batchnorm1d", x.shape(), std::move(out), {x, state.scale, state.shift},
      [=](std::span<const double> g, const NodeList& in) {
        const auto& gm = in[1]->data;
        auto gx = input_grad(in[0]);
        auto gg = input_grad(in[1]);
        auto gbeta = input_grad(in[2]);
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_g = 0.0;
          double sum_gh = 0.0;
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * length;
            for (std::size_t t = 0; t < length; ++t) {
              sum_g += g[base + t];
              sum_gh += g[base + t] * (*xhat)[base + t];
            }
          }
          if (!gg.empty()) gg[c] += sum_gh;
          if (!gbeta.empty()) gbeta[c] += sum_g;
          if (gx.empty()) continue;
          const double is = (*inv_std)[c];
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * channels + c) * length;
            for (std::size_t t = 0; t < length; ++t) {
              if (training) {
                // dxhat = g*gamma; dx = is/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                gx[base + t] += gm[c] * is / n * (n * g[base + t] - sum_g - (*xhat)[base + t] * sum_gh);
              } else {
                gx[base + t] += gm[c] * is * g[base + t];
              }
            }
          }
        }
      });
}

LinearSpec make_linear(std::size_t in_features, std::size_t out_features, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(in_features));
  return {uniform({out_features, in_features}, bound, rng), Tensor({out_features}, true)};
}

Tensor linear(const Tensor& x, const LinearSpec& spec) {
  require_rank(x, 2, "linear");
  const std::size_t batch = x.dim(0);
  const std::size_t in_f = x.dim(1);
  const std::size_t out_f = spec.out_features();
  if (in_f != spec.in_features()) {
    throw DimensionError("linear: input has " + std::to_string(in_f) + " features, weights expect " +
                         std::to_string(spec.in_features()));
  }
  if (spec.bias.shape() != Shape{out_f}) throw DimensionError("linear: bias shape " + to_string(spec.bias.shape()));
  auto xv = x.data();
  auto wv = spec.weights.data();
  auto bv = spec.bias.data();
  std::vector<double> out(batch * out_f);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = &xv[b * in_f];
    for (std::size_t j = 0; j < out_f; ++j) {
      const double* wr = &wv[j * in_f];
      out[b * out_f + j] = dot(wr, xr, in_f) + bv[j];
    }
  }
  return make_result("linear", {batch, out_f}, std::move(out), {x, spec.weights, spec.bias},
                     [batch, in_f, out_f](std::span<const double> g, const NodeList& in) {
                       const auto& xd = in[0]->data;
                       const auto& wd = in[1]->data;
                       auto gx = input_grad(in[0]);
                       auto gw = input_grad(in[1]);
                       auto gb = input_grad(in[2]);
                       for (std::size_t b = 0; b < batch; ++b) {
                         const double* xr = &xd[b * in_f];
                         for (std::size_t j = 0; j < out_f; ++j) {
                           const double gj = g[b * out_f + j];
                           if (!gb.empty()) gb[j] += gj;
                           if (gj == 0.0) continue;
                           if (!gw.empty()) {
                             axpy(gj, xr, &gw[j * in_f], in_f);
                           }
                           if (!gx.empty()) {
                             axpy(gj, &wd[j * in_f], &gx[b * in_f], in_f);
                           }
                         }
                       }
                     });
}

}  // namespace faultformer
