#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "faultformer/tensor.hpp"

namespace faultformer {

/// Half spectrum of real signals: floor(L/2)+1 bins per row.
///
/// Stored as one differentiable tensor whose last axis packs the real parts
/// (bins [0, bins)) followed by the imaginary parts (bins [bins, 2*bins)).
/// Leading axes mirror the transformed tensor, e.g. [B, C, L] -> [B, C, 2*bins].
struct ComplexSpectrum {
  Tensor packed;
  std::size_t length = 0;

  std::size_t bins() const { return length / 2 + 1; }
  std::size_t rows() const { return packed.numel() / (2 * bins()); }
  // Number of channels (the axis just before frequency).
  std::size_t channels() const;
  double re(std::size_t row, std::size_t bin) const { return packed[row * 2 * bins() + bin]; }
  double im(std::size_t row, std::size_t bin) const { return packed[row * 2 * bins() + bins() + bin]; }
  double magnitude(std::size_t row, std::size_t bin) const;

  /// Builds a spectrum from per-row real/imaginary arrays; `rows_shape` is the
  /// shape of the time-domain tensor without its last axis.
  static ComplexSpectrum from_parts(Shape rows_shape, std::size_t length, std::span<const double> re,
                                    std::span<const double> im, bool requires_grad = false);
};

/// Learnable complex filter, one coefficient per channel and bin.
struct SpectralWeight {
  Tensor re;  // [channels x bins]
  Tensor im;  // [channels x bins]

  /// re = 1, im = 0: passes the spectrum through unchanged.
  static SpectralWeight identity(std::size_t channels, std::size_t bins);
  std::size_t channels() const { return re.dim(0); }
  std::size_t bins() const { return re.dim(1); }
};

/// Unnormalized forward transform along the last axis:
/// X[k] = sum_n x[n] exp(-2 pi i k n / L).
ComplexSpectrum rdft(const Tensor& x);

/// Inverse of rdft with 1/L normalization. Imaginary parts of the DC bin (and
/// of the Nyquist bin for even L) do not contribute.
Tensor irdft(const ComplexSpectrum& spectrum);

/// Per-bin complex product (A + iB)(wr + i wm); the weight broadcasts over any
/// batch axis in front of the channel axis.
ComplexSpectrum complex_hadamard(const ComplexSpectrum& spectrum, const SpectralWeight& weight);

/// gamma * irdft(rdft(x) ⊗ W). The residual addition is left to the caller.
Tensor far_reconstruct(const Tensor& x, const SpectralWeight& weight, double gamma);

/// CSV with columns channel,bin,frequency_hz,re,im,magnitude. Rows of a batched
/// spectrum are numbered consecutively in the channel column.
void write_spectrum_csv(std::ostream& out, const ComplexSpectrum& spectrum, double sample_rate_hz);

}  // namespace faultformer
