#include "faultformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "faultformer/errors.hpp"

namespace faultformer {
namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("gradcheck: function returned a non-finite value");
  return v;
}

}  // namespace

GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                          const GradcheckOptions& options) {
  return gradcheck([&f, &x] { return f(x); }, {NamedTensor{"x", x}}, options);
}

GradcheckReport gradcheck(const std::function<Tensor()>& f, const std::vector<NamedTensor>& leaves,
                          const GradcheckOptions& options) {
  for (const auto& leaf : leaves) {
    if (!leaf.tensor.requires_grad()) {
      throw ContractError("gradcheck: tensor '" + leaf.name + "' does not require grad");
    }
  }

  std::vector<Tensor> tensors;
  for (const auto& leaf : leaves) {
    tensors.push_back(leaf.tensor);
    tensors.back().zero_grad();
  }
  const Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("gradcheck: function returned a non-finite value");
  backward(loss);

  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    for (std::size_t i = 0; i < tensors[t].numel(); ++i) probes.emplace_back(t, i);
  }
  if (options.max_probes > 0 && options.max_probes < probes.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(probes.begin(), probes.end(), rng);
    probes.resize(options.max_probes);
    std::sort(probes.begin(), probes.end());
  }

  GradcheckReport report;
  for (auto [t, i] : probes) {
    Tensor& tensor = tensors[t];
    const double analytic = tensor.has_grad() ? tensor.grad()[i] : 0.0;
    auto values = tensor.mutable_data();
    const double original = values[i];
    values[i] = original + options.step;
    const double plus = evaluate(f);
    values[i] = original - options.step;
    const double minus = evaluate(f);
    values[i] = original;
    const double numeric = (plus - minus) / (2.0 * options.step);

    GradcheckEntry entry{leaves[t].name, i, analytic, numeric, std::abs(analytic - numeric), 0.0};
    const double denom = std::max(std::abs(analytic), std::abs(numeric));
    entry.rel_error = denom > 0.0 ? entry.abs_error / denom : 0.0;
    report.max_abs_error = std::max(report.max_abs_error, entry.abs_error);
    if (entry.abs_error >= options.abs_floor || denom >= options.magnitude_floor) {
      report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
    }
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace faultformer
