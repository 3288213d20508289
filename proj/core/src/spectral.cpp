#include "faultformer/spectral.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>

#include "faultformer/autograd.hpp"
#include "faultformer/errors.hpp"
#include "faultformer/ops.hpp"
#include "simd.hpp"

namespace faultformer {

using detail::input_grad;
using detail::make_result;
using detail::NodeList;

namespace {

bool is_power_of_two(std::size_t n) { return n >= 1 && (n & (n - 1)) == 0; }

using simd::load4;
using simd::store4;
using simd::Vec4;

// Stage twiddles for a radix-2 FFT of size n: entry half + j holds
// exp(-2 pi i j / (2 half)) for each stage half = 1, 2, ..., n / 2.
struct Twiddles {
  std::vector<double> re;
  std::vector<double> im;
  std::vector<double> im_conj;
};

[[gnu::always_inline]] inline void radix2_body(std::size_t n, const std::size_t* bitrev, const double* tw_re,
                                               const double* tw_im, double* re, double* im) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = bitrev[i];
    if (r > i) {
      std::swap(re[i], re[r]);
      std::swap(im[i], im[r]);
    }
  }
  for (std::size_t half = 1; half < n; half <<= 1) {
    const double* wr = tw_re + half;
    const double* wi = tw_im + half;
    for (std::size_t i = 0; i < n; i += 2 * half) {
      double* ar = re + i;
      double* ai = im + i;
      double* br = ar + half;
      double* bi = ai + half;
      if (half >= 4) {
        for (std::size_t j = 0; j < half; j += 4) {
          const Vec4 xr = load4(br + j);
          const Vec4 xi = load4(bi + j);
          const Vec4 cr = load4(wr + j);
          const Vec4 ci = load4(wi + j);
          const Vec4 vr = xr * cr - xi * ci;
          const Vec4 vi = xr * ci + xi * cr;
          const Vec4 ur = load4(ar + j);
          const Vec4 ui = load4(ai + j);
          store4(ar + j, ur + vr);
          store4(ai + j, ui + vi);
          store4(br + j, ur - vr);
          store4(bi + j, ui - vi);
        }
      } else {
        for (std::size_t j = 0; j < half; ++j) {
          const double vr = br[j] * wr[j] - bi[j] * wi[j];
          const double vi = br[j] * wi[j] + bi[j] * wr[j];
          br[j] = ar[j] - vr;
          bi[j] = ai[j] - vi;
          ar[j] += vr;
          ai[j] += vi;
        }
      }
    }
  }
}

FAULTFORMER_KERNEL(radix2,
                   (std::size_t n, const std::size_t* bitrev, const double* tw_re, const double* tw_im, double* re,
                    double* im),
                   (n, bitrev, tw_re, tw_im, re, im))

// Iterative radix-2 FFT for a fixed power-of-two size, on split re/im arrays.
class Radix2 {
 public:
  explicit Radix2(std::size_t size) : size_(size), bitrev_(size) {
    tw_.re.assign(std::max<std::size_t>(size_, 1), 0.0);
    tw_.im.assign(tw_.re.size(), 0.0);
    for (std::size_t half = 1; half < size_; half <<= 1) {
      for (std::size_t j = 0; j < half; ++j) {
        const double angle = -std::numbers::pi * static_cast<double>(j) / static_cast<double>(half);
        tw_.re[half + j] = std::cos(angle);
        tw_.im[half + j] = std::sin(angle);
      }
    }
    tw_.im_conj = tw_.im;
    for (double& v : tw_.im_conj) v = -v;
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < size_) ++bits;
    for (std::size_t i = 0; i < size_; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
      bitrev_[i] = r;
    }
  }

  // In place; conjugate selects the exp(+i...) kernel. Unnormalized.
  void run(double* re, double* im, bool conjugate) const {
    radix2(size_, bitrev_.data(), tw_.re.data(), conjugate ? tw_.im_conj.data() : tw_.im.data(), re, im);
  }

  std::size_t size() const { return size_; }

 private:
  std::size_t size_;
  Twiddles tw_;
  std::vector<std::size_t> bitrev_;
};

// Transform kernels for one length. Power-of-two lengths run the radix-2 FFT
// directly; other lengths go through Bluestein's chirp-z convolution on a
// padded power-of-two FFT.
class DftPlan {
 public:
  explicit DftPlan(std::size_t length)
      : length_(length), bins_(length / 2 + 1), direct_(is_power_of_two(length)),
        fft_(direct_ ? length : padded_size(length)) {
    if (direct_) return;
    const std::size_t m = fft_.size();
    chirp_re_.resize(length_);
    chirp_im_.resize(length_);
    for (std::size_t n = 0; n < length_; ++n) {
      // n^2 mod 2L keeps the angle argument small for large n.
      const std::size_t r = (n * n) % (2 * length_);
      const double angle = -std::numbers::pi * static_cast<double>(r) / static_cast<double>(length_);
      chirp_re_[n] = std::cos(angle);
      chirp_im_[n] = std::sin(angle);
    }
    kernel_re_.assign(m, 0.0);
    kernel_im_.assign(m, 0.0);
    for (std::size_t n = 0; n < length_; ++n) {
      kernel_re_[n] = chirp_re_[n];
      kernel_im_[n] = -chirp_im_[n];
      if (n > 0) {
        kernel_re_[m - n] = chirp_re_[n];
        kernel_im_[m - n] = -chirp_im_[n];
      }
    }
    fft_.run(kernel_re_.data(), kernel_im_.data(), false);
  }

  // Packed rows (re[0..bins) then im[0..bins)) of
  // X[k] = sum_n x[n] exp(-2 pi i k n / L). Rows are transformed two at a
  // time as the real and imaginary parts of one complex signal.
  void forward_rows(const double* x, std::size_t rows, double* packed) const {
    Workspace ws(*this);
    for (std::size_t r = 0; r < rows; r += 2) {
      const double* a = x + r * length_;
      const double* b = r + 1 < rows ? a + length_ : nullptr;
      std::copy_n(a, length_, ws.re.data());
      if (b) {
        std::copy_n(b, length_, ws.im.data());
      } else {
        std::fill_n(ws.im.data(), length_, 0.0);
      }
      transform(ws, false);
      double* pa = packed + r * 2 * bins_;
      double* pb = b ? pa + 2 * bins_ : nullptr;
      for (std::size_t k = 0; k < bins_; ++k) {
        const std::size_t m = (length_ - k) % length_;
        const double zr = ws.re[k];
        const double zi = ws.im[k];
        const double mr = ws.re[m];
        const double mi = -ws.im[m];
        pa[k] = 0.5 * (zr + mr);
        pa[bins_ + k] = 0.5 * (zi + mi);
        if (pb) {
          pb[k] = 0.5 * (zi - mi);
          pb[bins_ + k] = -0.5 * (zr - mr);
        }
      }
      pa[bins_] = 0.0;
      if (pb) pb[bins_] = 0.0;
      if (length_ % 2 == 0) {
        pa[2 * bins_ - 1] = 0.0;
        if (pb) pb[2 * bins_ - 1] = 0.0;
      }
    }
  }

  // Real inverse with 1/L normalization; the imaginary parts of the DC and
  // Nyquist bins are ignored.
  void inverse_rows(const double* packed, std::size_t rows, double* x) const {
    Workspace ws(*this);
    const double inv = 1.0 / static_cast<double>(length_);
    for (std::size_t r = 0; r < rows; r += 2) {
      const double* pa = packed + r * 2 * bins_;
      const double* pb = r + 1 < rows ? pa + 2 * bins_ : nullptr;
      hermitian_fill(ws, pa, pb);
      transform(ws, true);
      double* xa = x + r * length_;
      for (std::size_t n = 0; n < length_; ++n) xa[n] = ws.re[n] * inv;
      if (pb) {
        double* xb = xa + length_;
        for (std::size_t n = 0; n < length_; ++n) xb[n] = ws.im[n] * inv;
      }
    }
  }

  // Transpose of forward_rows, accumulated into dx. The adjoint of a real
  // transform is the Hermitian inverse of the gradient with DC and Nyquist
  // real parts doubled, scaled by L / 2.
  void adjoint_rows_add(const double* grad, std::size_t rows, double* dx) const {
    std::vector<double> tweaked(grad, grad + rows * 2 * bins_);
    for (std::size_t r = 0; r < rows; ++r) {
      double* row = &tweaked[r * 2 * bins_];
      row[0] *= 2.0;
      if (length_ % 2 == 0) row[bins_ - 1] *= 2.0;
    }
    std::vector<double> out(rows * length_);
    inverse_rows(tweaked.data(), rows, out.data());
    const double scale = 0.5 * static_cast<double>(length_);
    for (std::size_t i = 0; i < out.size(); ++i) dx[i] += scale * out[i];
  }

  // Multiplicity of bin k in the full Hermitian spectrum.
  double hermitian_weight(std::size_t k) const { return (k == 0 || 2 * k == length_) ? 1.0 : 2.0; }

  std::size_t length() const { return length_; }
  std::size_t bins() const { return bins_; }

 private:
  struct Workspace {
    explicit Workspace(const DftPlan& plan)
        : re(plan.length_), im(plan.length_), pad_re(plan.direct_ ? 0 : plan.fft_.size()),
          pad_im(pad_re.size()) {}
    std::vector<double> re;
    std::vector<double> im;
    std::vector<double> pad_re;
    std::vector<double> pad_im;
  };

  static std::size_t padded_size(std::size_t length) {
    std::size_t m = 1;
    while (m < 2 * length - 1) m <<= 1;
    return m;
  }

  // ws.re + i ws.im = H_a + i H_b, H the Hermitian extension of a packed row.
  void hermitian_fill(Workspace& ws, const double* pa, const double* pb) const {
    for (std::size_t k = 0; k < bins_; ++k) {
      const bool real_only = k == 0 || 2 * k == length_;
      const double ar = pa[k];
      const double ai = real_only ? 0.0 : pa[bins_ + k];
      const double br = pb ? pb[k] : 0.0;
      const double bi = (pb && !real_only) ? pb[bins_ + k] : 0.0;
      ws.re[k] = ar - bi;
      ws.im[k] = ai + br;
      if (!real_only) {
        // conj(a) + i conj(b)
        ws.re[length_ - k] = ar + bi;
        ws.im[length_ - k] = -ai + br;
      }
    }
  }

  // Full complex DFT of length L on ws.re/ws.im, in place. conjugate selects
  // exp(+i...).
  void transform(Workspace& ws, bool conjugate) const {
    if (direct_) {
      fft_.run(ws.re.data(), ws.im.data(), conjugate);
      return;
    }
    // The conjugate kernel is conj(DFT(conj(x))).
    const double sign = conjugate ? -1.0 : 1.0;
    auto& ar = ws.pad_re;
    auto& ai = ws.pad_im;
    std::fill(ar.begin(), ar.end(), 0.0);
    std::fill(ai.begin(), ai.end(), 0.0);
    for (std::size_t n = 0; n < length_; ++n) {
      const double xr = ws.re[n];
      const double xi = sign * ws.im[n];
      ar[n] = xr * chirp_re_[n] - xi * chirp_im_[n];
      ai[n] = xr * chirp_im_[n] + xi * chirp_re_[n];
    }
    fft_.run(ar.data(), ai.data(), false);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double xr = ar[i];
      const double xi = ai[i];
      ar[i] = xr * kernel_re_[i] - xi * kernel_im_[i];
      ai[i] = xr * kernel_im_[i] + xi * kernel_re_[i];
    }
    fft_.run(ar.data(), ai.data(), true);
    const double inv = 1.0 / static_cast<double>(ar.size());
    for (std::size_t k = 0; k < length_; ++k) {
      const double vr = (ar[k] * chirp_re_[k] - ai[k] * chirp_im_[k]) * inv;
      const double vi = (ar[k] * chirp_im_[k] + ai[k] * chirp_re_[k]) * inv;
      ws.re[k] = vr;
      ws.im[k] = sign * vi;
    }
  }

  std::size_t length_;
  std::size_t bins_;
  bool direct_;
  Radix2 fft_;
  std::vector<double> chirp_re_;
  std::vector<double> chirp_im_;
  std::vector<double> kernel_re_;
  std::vector<double> kernel_im_;
};

std::shared_ptr<const DftPlan> plan_for(std::size_t length) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const DftPlan>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[length];
  if (!slot) slot = std::make_shared<const DftPlan>(length);
  return slot;
}

Shape with_last(Shape shape, std::size_t last) {
  shape.back() = last;
  return shape;
}

}  // namespace

std::size_t ComplexSpectrum::channels() const {
  return packed.rank() >= 2 ? packed.dim(packed.rank() - 2) : 1;
}

double ComplexSpectrum::magnitude(std::size_t row, std::size_t bin) const {
  return std::hypot(re(row, bin), im(row, bin));
}

ComplexSpectrum ComplexSpectrum::from_parts(Shape rows_shape, std::size_t length, std::span<const double> re,
                                            std::span<const double> im, bool requires_grad) {
  const std::size_t bins = length / 2 + 1;
  const std::size_t rows = numel_of(rows_shape);
  if (re.size() != rows * bins || im.size() != rows * bins) {
    throw DimensionError("spectrum parts must hold rows*bins = " + std::to_string(rows * bins) + " values");
  }
  std::vector<double> packed(rows * 2 * bins);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(re.begin() + r * bins, bins, packed.begin() + r * 2 * bins);
    std::copy_n(im.begin() + r * bins, bins, packed.begin() + r * 2 * bins + bins);
  }
  rows_shape.push_back(2 * bins);
  return {Tensor(std::move(rows_shape), std::move(packed), requires_grad), length};
}

SpectralWeight SpectralWeight::identity(std::size_t channels, std::size_t bins) {
  return {Tensor::full({channels, bins}, 1.0, true), Tensor::full({channels, bins}, 0.0, true)};
}

ComplexSpectrum rdft(const Tensor& x) {
  const std::size_t length = x.shape().back();
  if (length < 2) throw DimensionError("rdft: signal length " + std::to_string(length) + " < 2");
  auto plan = plan_for(length);
  const std::size_t bins = plan->bins();
  const std::size_t rows = x.numel() / length;
  auto xv = x.data();
  std::vector<double> out(rows * 2 * bins);
  plan->forward_rows(xv.data(), rows, out.data());
  Tensor packed = make_result("rdft", with_last(x.shape(), 2 * bins), std::move(out), {x},
                              [plan, rows](std::span<const double> g, const NodeList& in) {
                                auto gx = input_grad(in[0]);
                                if (gx.empty()) return;
                                plan->adjoint_rows_add(g.data(), rows, gx.data());
                              });
  return {packed, length};
}

Tensor irdft(const ComplexSpectrum& spectrum) {
  const std::size_t length = spectrum.length;
  if (length < 2) throw DimensionError("irdft: signal length " + std::to_string(length) + " < 2");
  auto plan = plan_for(length);
  const std::size_t bins = plan->bins();
  if (spectrum.packed.shape().back() != 2 * bins) {
    throw DimensionError("irdft: packed spectrum " + to_string(spectrum.packed.shape()) +
                         " does not hold " + std::to_string(bins) + " bins for length " + std::to_string(length));
  }
  const std::size_t rows = spectrum.rows();
  auto sv = spectrum.packed.data();
  std::vector<double> out(rows * length);
  plan->inverse_rows(sv.data(), rows, out.data());
  return make_result("irdft", with_last(spectrum.packed.shape(), length), std::move(out), {spectrum.packed},
                     [plan, rows](std::span<const double> g, const NodeList& in) {
                       auto gs = input_grad(in[0]);
                       if (gs.empty()) return;
                       const auto len = plan->length();
                       const auto nb = plan->bins();
                       const double inv = 1.0 / static_cast<double>(len);
                       std::vector<double> spec(rows * 2 * nb);
                       plan->forward_rows(g.data(), rows, spec.data());
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t k = 0; k < nb; ++k) {
                           const double w = plan->hermitian_weight(k) * inv;
                           gs[r * 2 * nb + k] += w * spec[r * 2 * nb + k];
                           gs[r * 2 * nb + nb + k] += w * spec[r * 2 * nb + nb + k];
                         }
                       }
                     });
}

ComplexSpectrum complex_hadamard(const ComplexSpectrum& spectrum, const SpectralWeight& weight) {
  const std::size_t bins = spectrum.bins();
  const std::size_t channels = spectrum.channels();
  if (weight.re.shape() != weight.im.shape() || weight.re.rank() != 2) {
    throw DimensionError("complex_hadamard: weight parts must both be [channels x bins]");
  }
  if (weight.channels() != channels || weight.bins() != bins) {
    throw DimensionError("complex_hadamard: spectrum has " + std::to_string(channels) + " channels x " +
                         std::to_string(bins) + " bins but weight is " + to_string(weight.re.shape()));
  }
  const std::size_t rows = spectrum.rows();
  auto sv = spectrum.packed.data();
  auto wr = weight.re.data();
  auto wm = weight.im.data();
  std::vector<double> out(sv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t c = r % channels;
    const double* a = &sv[r * 2 * bins];
    const double* b = a + bins;
    const double* pr = &wr[c * bins];
    const double* pm = &wm[c * bins];
    double* oa = &out[r * 2 * bins];
    double* ob = oa + bins;
    for (std::size_t k = 0; k < bins; ++k) {
      oa[k] = a[k] * pr[k] - b[k] * pm[k];
      ob[k] = a[k] * pm[k] + b[k] * pr[k];
    }
  }
  Tensor packed = make_result(
      "complex_hadamard", spectrum.packed.shape(), std::move(out), {spectrum.packed, weight.re, weight.im},
      [rows, channels, bins](std::span<const double> g, const NodeList& in) {
        const auto& sv = in[0]->data;
        const auto& wr = in[1]->data;
        const auto& wm = in[2]->data;
        auto gs = input_grad(in[0]);
        auto gwr = input_grad(in[1]);
        auto gwm = input_grad(in[2]);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t c = r % channels;
          const double* ga = &g[r * 2 * bins];
          const double* gb = ga + bins;
          const double* a = &sv[r * 2 * bins];
          const double* b = a + bins;
          const double* pr = &wr[c * bins];
          const double* pm = &wm[c * bins];
          if (!gs.empty()) {
            double* da = &gs[r * 2 * bins];
            double* db = da + bins;
            for (std::size_t k = 0; k < bins; ++k) {
              da[k] += ga[k] * pr[k] + gb[k] * pm[k];
              db[k] += -ga[k] * pm[k] + gb[k] * pr[k];
            }
          }
          if (!gwr.empty()) {
            for (std::size_t k = 0; k < bins; ++k) gwr[c * bins + k] += ga[k] * a[k] + gb[k] * b[k];
          }
          if (!gwm.empty()) {
            for (std::size_t k = 0; k < bins; ++k) gwm[c * bins + k] += -ga[k] * b[k] + gb[k] * a[k];
          }
        }
      });
  return {packed, spectrum.length};
}

Tensor far_reconstruct(const Tensor& x, const SpectralWeight& weight, double gamma) {
  return scale(irdft(complex_hadamard(rdft(x), weight)), gamma);
}

void write_spectrum_csv(std::ostream& out, const ComplexSpectrum& spectrum, double sample_rate_hz) {
  out << "channel,bin,frequency_hz,re,im,magnitude\n";
  out.precision(17);
  const double df = sample_rate_hz / static_cast<double>(spectrum.length);
  for (std::size_t r = 0; r < spectrum.rows(); ++r) {
    for (std::size_t k = 0; k < spectrum.bins(); ++k) {
      out << r << ',' << k << ',' << df * static_cast<double>(k) << ',' << spectrum.re(r, k) << ','
          << spectrum.im(r, k) << ',' << spectrum.magnitude(r, k) << '\n';
    }
  }
}

}  // namespace faultformer
