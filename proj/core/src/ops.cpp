#include "faultformer/ops.hpp"

#include <numeric>

#include "faultformer/autograd.hpp"
#include "faultformer/errors.hpp"

namespace faultformer {

using detail::input_grad;
using detail::make_result;
using detail::NodeList;

namespace {

enum class Broadcast { same, scalar, over_batch };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() >= 2) {
    Shape tail(sa.begin() + 1, sa.end());
    if (sb == tail) return Broadcast::over_batch;
    Shape lead1 = tail;
    lead1.insert(lead1.begin(), 1);
    if (sb == lead1) return Broadcast::over_batch;
  }
  throw DimensionError(std::string(op) + ": shapes " + to_string(sa) + " and " + to_string(sb) +
                       " are not compatible");
}

Tensor add_signed(const Tensor& a, const Tensor& b, double sign, const char* op) {
  const auto kind = broadcast_kind(a, b, op);
  const auto n = a.numel();
  const auto m = b.numel();
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] + sign * bv[kind == Broadcast::same ? i : i % m];
  return make_result(op, a.shape(), std::move(out), {a, b},
                     [kind, m, sign](std::span<const double> g, const NodeList& in) {
                       if (auto ga = input_grad(in[0]); !ga.empty()) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                       if (auto gb = input_grad(in[1]); !gb.empty()) {
                         if (kind == Broadcast::same) {
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
                         } else {
                           for (std::size_t i = 0; i < g.size(); ++i) gb[i % m] += sign * g[i];
                         }
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_signed(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_signed(a, b, -1.0, "sub"); }

Tensor hadamard(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("hadamard: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                         " differ");
  }
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("hadamard", a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, const NodeList& in) {
                       const auto& ad = in[0]->data;
                       const auto& bd = in[1]->data;
                       if (auto ga = input_grad(in[0]); !ga.empty()) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
                       }
                       if (auto gb = input_grad(in[1]); !gb.empty()) {
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
                       }
                     });
}

Tensor scale(const Tensor& a, double factor) {
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * av[i];
  return make_result("scale", a.shape(), std::move(out), {a},
                     [factor](std::span<const double> g, const NodeList& in) {
                       if (auto ga = input_grad(in[0]); !ga.empty()) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
                       }
                     });
}

Tensor sum(const Tensor& a) {
  auto av = a.data();
  double total = std::accumulate(av.begin(), av.end(), 0.0);
  return make_result("sum", {1}, {total}, {a}, [](std::span<const double> g, const NodeList& in) {
    if (auto ga = input_grad(in[0]); !ga.empty()) {
      for (auto& v : ga) v += g[0];
    }
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {a},
                     [](std::span<const double> g, const NodeList& in) {
                       if (auto ga = input_grad(in[0]); !ga.empty()) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                       }
                     });
}

Tensor flatten(const Tensor& a) {
  const auto batch = a.dim(0);
  return reshape(a, {batch, a.numel() / batch});
}

Tensor weighted_sum(const Tensor& a, const Tensor& weights) {
  if (a.shape() != weights.shape()) {
    throw DimensionError("weighted_sum: shapes " + to_string(a.shape()) + " and " +
                         to_string(weights.shape()) + " differ");
  }
  return sum(hadamard(a, weights));
}

}  // namespace faultformer
