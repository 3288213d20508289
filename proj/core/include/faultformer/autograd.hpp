#pragma once

// Op-author interface to the tape. Library code that defines a differentiable
// operation builds its result through make_result() and supplies a backward
// rule that scatters the incoming gradient into its inputs.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "faultformer/tensor.hpp"

namespace faultformer::detail {

using NodeList = std::vector<std::shared_ptr<Node>>;

// grad_out is dL/d(output); implementations add into input_grad(inputs[i]).
using BackwardFn = std::function<void(std::span<const double> grad_out, const NodeList& inputs)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  std::string_view op = "leaf";
  NodeList inputs;
  BackwardFn backward;
};

// Gradient buffer of an input, allocated (zero-filled) on first use. Returns
// an empty span when the input does not take part in differentiation.
std::span<double> input_grad(const std::shared_ptr<Node>& node);

Tensor make_result(std::string_view op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

// Fault injection for verifying the gradient checker: the backward rule of
// the named op receives a sign-flipped incoming gradient. Empty disables.
void set_backward_fault(std::string op);
std::string backward_fault();

}  // namespace faultformer::detail
