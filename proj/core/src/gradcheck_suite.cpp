#include "faultformer/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <random>

#include "faultformer/autograd.hpp"
#include "faultformer/errors.hpp"
#include "faultformer/layers.hpp"
#include "faultformer/model.hpp"
#include "faultformer/ops.hpp"
#include "faultformer/spectral.hpp"
#include "faultformer/train.hpp"

namespace faultformer {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& e : v) e = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

void randomize(Tensor t, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& e : t.mutable_data()) e = dist(rng);
}

SpectralWeight random_weight(std::size_t channels, std::size_t bins, Rng& rng) {
  return {random_tensor({channels, bins}, rng, true, 0.5, 1.5), random_tensor({channels, bins}, rng, true, -0.5, 0.5)};
}

void add_conv(std::vector<NamedTensor>& leaves, const std::string& name, const ConvSpec& c) {
  leaves.push_back({name + ".weight", c.weights});
  leaves.push_back({name + ".bias", c.bias});
}

// Biases start at zero; give them values so their gradients are exercised
// away from the initial point.
void jitter_bias(ConvSpec& c, Rng& rng) { randomize(c.bias, rng, -0.2, 0.2); }

struct Case {
  std::string name;
  std::function<GradcheckReport(const GradcheckOptions&)> run;
};

// Projects an output to a scalar with fixed random weights so no gradient
// component cancels by symmetry. Built as its own node so an injected fault
// in a library op cannot also hit the projection and cancel out.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng local(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  auto weights = std::make_shared<std::vector<double>>(y.numel());
  for (auto& w : *weights) w = dist(local);
  double total = 0.0;
  for (std::size_t i = 0; i < weights->size(); ++i) total += (*weights)[i] * y[i];
  return detail::make_result("projection", {1}, {total}, {y},
                             [weights](std::span<const double> g, const detail::NodeList& in) {
                               if (auto gy = detail::input_grad(in[0]); !gy.empty()) {
                                 for (std::size_t i = 0; i < gy.size(); ++i) gy[i] += g[0] * (*weights)[i];
                               }
                             });
}

std::function<Tensor()> projected(std::function<Tensor()> f, Rng& rng) {
  return [f = std::move(f), seed = rng()]() { return project(f(), seed); };
}

ModelConfig small_model_config() {
  ModelConfig c;
  c.input_length = 32;
  c.embed_channels = 2;
  c.embed_kernel = 5;
  c.num_blocks = 2;
  c.num_classes = 3;
  c.classifier_hidden = 6;
  c.first_distill_kernel = 4;
  c.first_distill_stride = 2;
  return c;
}

void randomize_model(Model& m, Rng& rng) {
  for (auto& p : m.parameters()) {
    const bool is_filter = p.name.find("filter") != std::string::npos;
    const bool is_re = p.name.size() >= 3 && p.name.compare(p.name.size() - 3, 3, ".re") == 0;
    if (is_filter) {
      randomize(p.tensor, rng, is_re ? 0.5 : -0.5, is_re ? 1.5 : 0.5);
    } else if (p.name.find("bias") != std::string::npos || p.name.find("shift") != std::string::npos) {
      randomize(p.tensor, rng, -0.2, 0.2);
    } else if (p.name.find("scale") != std::string::npos) {
      randomize(p.tensor, rng, 0.5, 1.5);
    }
  }
}

std::vector<Case> build_cases() {
  std::vector<Case> cases;
  auto reg = [&](std::string name, std::function<GradcheckReport(const GradcheckOptions&)> run) {
    cases.push_back({std::move(name), std::move(run)});
  };

  reg("add", [](const GradcheckOptions& o) {
    Rng rng(11);
    Tensor a = random_tensor({2, 3, 8}, rng);
    Tensor b = random_tensor({1, 3, 8}, rng);
    return gradcheck(projected([=] { return add(a, b); }, rng), {{"a", a}, {"b", b}}, o);
  });
  reg("sub", [](const GradcheckOptions& o) {
    Rng rng(12);
    Tensor a = random_tensor({2, 3, 8}, rng);
    Tensor b = random_tensor({2, 3, 8}, rng);
    return gradcheck(projected([=] { return sub(a, b); }, rng), {{"a", a}, {"b", b}}, o);
  });
  reg("hadamard", [](const GradcheckOptions& o) {
    Rng rng(13);
    Tensor a = random_tensor({2, 4, 8}, rng);
    Tensor b = random_tensor({2, 4, 8}, rng);
    return gradcheck(projected([=] { return hadamard(a, b); }, rng), {{"a", a}, {"b", b}}, o);
  });
  reg("scale_mean", [](const GradcheckOptions& o) {
    Rng rng(14);
    Tensor a = random_tensor({2, 4, 8}, rng);
    return gradcheck([=] { return add(project(scale(a, 1.7), 3), mean(hadamard(a, a))); }, {{"a", a}}, o);
  });
  reg("reshape_flatten", [](const GradcheckOptions& o) {
    Rng rng(15);
    Tensor a = random_tensor({2, 4, 8}, rng);
    return gradcheck(
        [=] {
          Tensor h = hadamard(a, a);
          return add(project(reshape(h, {2, 8, 4}), 4), project(flatten(h), 5));
        },
        {{"a", a}}, o);
  });
  reg("rdft", [](const GradcheckOptions& o) {
    Rng rng(21);
    Tensor x = random_tensor({2, 3, 31}, rng);
    Tensor y = random_tensor({1, 2, 32}, rng);
    return gradcheck([=] { return add(project(rdft(x).packed, 1), project(rdft(y).packed, 2)); },
                     {{"x_odd", x}, {"x_even", y}}, o);
  });
  reg("irdft", [](const GradcheckOptions& o) {
    Rng rng(22);
    Tensor even = random_tensor({2, 3, 2 * 17}, rng);
    Tensor odd = random_tensor({2, 2 * 16}, rng);
    return gradcheck(projected(
                         [=] {
                           Tensor a = flatten(irdft({even, 32}));
                           Tensor b = flatten(irdft({odd, 31}));
                           return add(sum(a), sum(hadamard(b, b)));
                         },
                         rng),
                     {{"spectrum_even", even}, {"spectrum_odd", odd}}, o);
  });
  reg("complex_hadamard", [](const GradcheckOptions& o) {
    Rng rng(23);
    Tensor s = random_tensor({2, 3, 2 * 9}, rng);
    SpectralWeight w = random_weight(3, 9, rng);
    return gradcheck(projected([=] { return complex_hadamard({s, 16}, w).packed; }, rng),
                     {{"spectrum", s}, {"w.re", w.re}, {"w.im", w.im}}, o);
  });
  reg("far_reconstruct", [](const GradcheckOptions& o) {
    Rng rng(24);
    Tensor x = random_tensor({2, 4, 30}, rng);
    SpectralWeight w = random_weight(4, 16, rng);
    return gradcheck(projected([=] { return far_reconstruct(x, w, 0.3); }, rng),
                     {{"x", x}, {"w.re", w.re}, {"w.im", w.im}}, o);
  });
  reg("conv1d", [](const GradcheckOptions& o) {
    Rng rng(31);
    ConvSpec c = make_conv(3, 5, 4, 2, 1, rng);
    jitter_bias(c, rng);
    Tensor x = random_tensor({2, 3, 19}, rng);
    std::vector<NamedTensor> leaves{{"x", x}};
    add_conv(leaves, "conv", c);
    return gradcheck(projected([=] { return conv1d(x, c); }, rng), leaves, o);
  });
  reg("depthwise_conv1d", [](const GradcheckOptions& o) {
    Rng rng(32);
    ConvSpec c = make_depthwise_conv(4, 3, rng);
    jitter_bias(c, rng);
    Tensor x = random_tensor({2, 4, 16}, rng);
    std::vector<NamedTensor> leaves{{"x", x}};
    add_conv(leaves, "depthwise", c);
    return gradcheck(projected([=] { return depthwise_conv1d(x, c); }, rng), leaves, o);
  });
  reg("gelu", [](const GradcheckOptions& o) {
    Rng rng(33);
    Tensor x = random_tensor({2, 4, 16}, rng, true, -3.0, 3.0);
    return gradcheck(projected([=] { return gelu(x); }, rng), {{"x", x}}, o);
  });
  reg("softmax", [](const GradcheckOptions& o) {
    Rng rng(34);
    Tensor x = random_tensor({2, 4, 16}, rng, true, -2.0, 2.0);
    return gradcheck(projected([=] { return add(softmax(x, 2), softmax(x, 1)); }, rng), {{"x", x}}, o);
  });
  reg("maxpool1d", [](const GradcheckOptions& o) {
    Rng rng(35);
    Tensor x = random_tensor({2, 3, 17}, rng);
    return gradcheck(projected([=] { return maxpool1d(x, 3, 2); }, rng), {{"x", x}}, o);
  });
  reg("batchnorm1d", [](const GradcheckOptions& o) {
    Rng rng(36);
    auto state = std::make_shared<BatchNormState>(BatchNormState::create(3));
    randomize(state->scale, rng, 0.5, 1.5);
    randomize(state->shift, rng, -0.5, 0.5);
    Tensor x = random_tensor({2, 3, 8}, rng);
    return gradcheck(projected([=] { return batchnorm1d(x, *state); }, rng),
                     {{"x", x}, {"scale", state->scale}, {"shift", state->shift}}, o);
  });
  reg("linear", [](const GradcheckOptions& o) {
    Rng rng(37);
    LinearSpec l = make_linear(12, 5, rng);
    randomize(l.bias, rng, -0.2, 0.2);
    Tensor x = random_tensor({2, 12}, rng);
    return gradcheck(projected([=] { return linear(x, l); }, rng),
                     {{"x", x}, {"weight", l.weights}, {"bias", l.bias}}, o);
  });
  reg("cross_entropy", [](const GradcheckOptions& o) {
    Rng rng(38);
    Tensor z = random_tensor({2, 4}, rng, true, -2.0, 2.0);
    const std::vector<std::size_t> labels{3, 1};
    return gradcheck([=] { return cross_entropy(z, labels); }, {{"logits", z}}, o);
  });

  // Model building blocks, taken from a small model so they match the real
  // wiring exactly.
  auto block_case = [&](std::string name, std::function<std::pair<std::function<Tensor()>, std::vector<NamedTensor>>(
                                              Model&, Rng&)>
                                              make) {
    reg(name, [make](const GradcheckOptions& o) {
      Rng rng(41);
      auto model = std::make_shared<Model>(small_model_config(), 5);
      randomize_model(*model, rng);
      auto [f, leaves] = make(*model, rng);
      auto keep = model;
      return gradcheck(projected([f = f, keep] { return f(); }, rng), leaves, o);
    });
  };

  block_case("farel", [](Model& m, Rng& rng) {
    Tensor x = random_tensor({2, 1, 32}, rng);
    const FarelLayer& layer = m.embedding();
    std::vector<NamedTensor> leaves{{"x", x}};
    add_conv(leaves, "conv", layer.conv);
    leaves.push_back({"filter.re", layer.filter->re});
    leaves.push_back({"filter.im", layer.filter->im});
    return std::pair{std::function<Tensor()>([&layer, x] { return layer.forward(x); }), leaves};
  });
  block_case("mscal", [](Model& m, Rng& rng) {
    Tensor x = random_tensor({2, 2, 7}, rng);
    const MscalLayer& layer = m.blocks()[0].mscal[0];
    std::vector<NamedTensor> leaves{{"x", x}};
    add_conv(leaves, "conv_in", layer.conv_in);
    add_conv(leaves, "branch_small", layer.branch_small);
    add_conv(leaves, "branch_large", layer.branch_large);
    add_conv(leaves, "fuse", layer.fuse);
    add_conv(leaves, "conv_out", layer.conv_out);
    return std::pair{std::function<Tensor()>([&layer, x] { return layer.forward(x); }), leaves};
  });
  block_case("tffn", [](Model& m, Rng& rng) {
    Tensor x = random_tensor({2, 2, 7}, rng);
    const TffnLayer& layer = m.blocks()[0].tffn[0];
    std::vector<NamedTensor> leaves{{"x", x}};
    add_conv(leaves, "expand", layer.expand);
    add_conv(leaves, "depthwise", layer.depthwise);
    add_conv(leaves, "squeeze", layer.squeeze);
    leaves.push_back({"filter.re", layer.filter->re});
    leaves.push_back({"filter.im", layer.filter->im});
    return std::pair{std::function<Tensor()>([&layer, x] { return layer.forward(x); }), leaves};
  });
  block_case("distillation", [](Model& m, Rng& rng) {
    Tensor x = random_tensor({2, 2, 7}, rng);
    const DistillLayer& layer = m.distills()[1];
    std::vector<NamedTensor> leaves{{"x", x}};
    add_conv(leaves, "conv", layer.conv);
    return std::pair{std::function<Tensor()>([&layer, x] { return layer.forward(x); }), leaves};
  });
  block_case("mstff_block", [](Model& m, Rng& rng) {
    Tensor x = random_tensor({2, 2, 7}, rng);
    MstffBlock& block = m.blocks()[0];
    std::vector<NamedTensor> leaves{{"x", x}};
    for (const auto& p : m.parameters()) {
      if (p.name.rfind("block1.", 0) == 0) leaves.push_back(p);
    }
    return std::pair{std::function<Tensor()>([&block, x] { return block.forward(x); }), leaves};
  });
  block_case("model", [](Model& m, Rng& rng) {
    Tensor x = random_tensor({2, 1, 32}, rng, true, 0.0, 1.0);
    std::vector<NamedTensor> leaves{{"x", x}};
    for (const auto& p : m.parameters()) leaves.push_back(p);
    const std::vector<std::size_t> labels{0, 2};
    return std::pair{std::function<Tensor()>([&m, x, labels] {
                       auto out = m.forward(x);
                       return add(cross_entropy(out.logits, labels), mean(hadamard(out.features, out.features)));
                     }),
                     leaves};
  });
  return cases;
}

}  // namespace

std::vector<std::string> differentiable_ops() {
  return {"add",  "sub",     "hadamard",  "scale",       "sum",    "reshape",
          "rdft", "irdft",   "complex_hadamard",        "conv1d", "depthwise_conv1d",
          "gelu", "softmax", "maxpool1d", "batchnorm1d", "linear", "cross_entropy"};
}

ScopedBackwardFault::ScopedBackwardFault(const std::string& op) {
  const auto ops = differentiable_ops();
  if (std::find(ops.begin(), ops.end(), op) == ops.end()) {
    throw ConfigError("unknown op '" + op + "' for fault injection");
  }
  detail::set_backward_fault(op);
}

ScopedBackwardFault::~ScopedBackwardFault() { detail::set_backward_fault(""); }

ModelConfig gradcheck_model_config() { return small_model_config(); }

std::vector<std::string> gradcheck_components() {
  std::vector<std::string> names;
  for (const auto& c : build_cases()) names.push_back(c.name);
  return names;
}

std::vector<SuiteResult> run_gradcheck_suite(const GradcheckOptions& options, const std::vector<std::string>& only) {
  auto cases = build_cases();
  for (const auto& name : only) {
    if (std::none_of(cases.begin(), cases.end(), [&](const Case& c) { return c.name == name; })) {
      throw ConfigError("unknown gradcheck component '" + name + "'");
    }
  }
  std::vector<SuiteResult> results;
  for (const auto& c : cases) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    SuiteResult r{c.name, c.run(options), 0.0};
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace faultformer
