#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "faultformer/tensor.hpp"

namespace faultformer {

using Rng = std::mt19937_64;

/// Geometry and parameters of a 1-D convolution (cross-correlation).
/// weights: [out x in x kernel], or [channels x 1 x kernel] when depthwise.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool depthwise = false;
  Tensor weights;
  Tensor bias;

  std::size_t output_length(std::size_t input_length) const;
  void validate() const;
};

/// Weights uniform in ±sqrt(1/(fan_in)), fan_in = in_channels*kernel (kernel
/// for depthwise); zero bias.
ConvSpec make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
                   std::size_t padding, Rng& rng);
ConvSpec make_depthwise_conv(std::size_t channels, std::size_t kernel, Rng& rng);

/// Length-preserving convolution: stride 1, padding (k-1)/2, k odd.
ConvSpec make_same_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng);

Tensor conv1d(const Tensor& x, const ConvSpec& spec);
Tensor depthwise_conv1d(const Tensor& x, const ConvSpec& spec);

/// x * Phi(x) with the exact normal CDF.
Tensor gelu(const Tensor& x);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Window maxima; gradient goes to the first maximal index of each window.
Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride);
std::size_t pooled_length(std::size_t length, std::size_t kernel, std::size_t stride);

struct BatchNormState {
  Tensor scale;  // [C], learnable
  Tensor shift;  // [C], learnable
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  bool training = true;

  static BatchNormState create(std::size_t channels);
  std::size_t channels() const { return running_mean.size(); }
};

/// Per-channel normalization over (batch, length). Training mode uses batch
/// statistics and updates the running estimates (unbiased variance); eval
/// mode uses the running estimates.
Tensor batchnorm1d(const Tensor& x, BatchNormState& state);

struct LinearSpec {
  Tensor weights;  // [out x in]
  Tensor bias;     // [out]

  std::size_t in_features() const { return weights.dim(1); }
  std::size_t out_features() const { return weights.dim(0); }
};

LinearSpec make_linear(std::size_t in_features, std::size_t out_features, Rng& rng);

/// x [B x in] -> [B x out]
Tensor linear(const Tensor& x, const LinearSpec& spec);

}  // namespace faultformer
