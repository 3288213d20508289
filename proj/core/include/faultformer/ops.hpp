#pragma once

#include "faultformer/tensor.hpp"

namespace faultformer {

/// a + b. `b` may equal a's shape, be a scalar (numel 1), or match a's shape
/// without its leading batch dimension (bias over batch).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);

/// Elementwise product of equally shaped tensors.
Tensor hadamard(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Same values under a new shape of equal element count.
Tensor reshape(const Tensor& a, Shape shape);

/// [B, ...] -> [B, prod(...)]
Tensor flatten(const Tensor& a);

/// sum(a ⊗ weights) for a fixed weight tensor; used to project a tensor to a
/// scalar when checking gradients.
Tensor weighted_sum(const Tensor& a, const Tensor& weights);

}  // namespace faultformer
