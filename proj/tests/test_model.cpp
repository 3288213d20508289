#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "faultformer/checkpoint.hpp"
#include "faultformer/errors.hpp"
#include "faultformer/gradcheck.hpp"
#include "faultformer/model.hpp"
#include "faultformer/ops.hpp"
#include "faultformer/train.hpp"
#include "oracles.hpp"

using namespace faultformer;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_length = 256;
  c.embed_channels = 4;
  c.num_blocks = 2;
  c.first_distill_kernel = 16;
  c.classifier_hidden = 16;
  c.num_classes = 3;
  return c;
}

void set_scalar_conv(ConvSpec& c, double w, double b) {
  std::fill(c.weights.mutable_data().begin(), c.weights.mutable_data().end(), w);
  std::fill(c.bias.mutable_data().begin(), c.bias.mutable_data().end(), b);
}

bool has_parameter(const Model& m, const std::string& needle) {
  for (const auto& p : m.parameters()) {
    if (p.name.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST(Mscal, ZeroBranchesGiveUniformAttentionClosedForm) {
  Rng rng(1);
  MscalLayer layer;
  layer.conv_in = make_same_conv(1, 1, 1, rng);
  layer.branch_small = make_same_conv(1, 1, 3, rng);
  layer.branch_large = make_same_conv(1, 1, 5, rng);
  layer.fuse = make_same_conv(1, 1, 1, rng);
  layer.conv_out = make_same_conv(1, 1, 1, rng);
  set_scalar_conv(layer.conv_in, 2.0, 0.5);
  set_scalar_conv(layer.branch_small, 0.0, 0.0);
  set_scalar_conv(layer.branch_large, 0.0, 0.0);
  set_scalar_conv(layer.fuse, 2.0, 0.0);
  set_scalar_conv(layer.conv_out, 0.5, 0.25);

  Tensor x({1, 1, 4}, {1.0, -2.0, 0.5, 3.0});
  Tensor attn;
  Tensor y = layer.forward(x, &attn);
  for (double a : attn.data()) EXPECT_EQ(a, 0.25);

  // y1 = 2x + 0.5; y3 = (2 * 1/4) * y1 + y1; y4 = 0.5 * gelu(y3) + 0.25 + x
  const double y1[] = {2.5, -3.5, 1.5, 6.5};
  for (std::size_t t = 0; t < 4; ++t) {
    const double y3 = 1.5 * y1[t];
    EXPECT_NEAR(y[t], 0.5 * oracle::gelu(y3) + 0.25 + x[t], 1e-14) << t;
  }
}

TEST(Mscal, PreservesShapeAndAttentionRowsSumToOne) {
  Model model(ModelConfig{}, 3);
  const auto& layer = model.blocks()[0].mscal[0];
  Tensor x = oracle::random_tensor({2, 32, 496}, 4);
  Tensor attn;
  Tensor y = layer.forward(x, &attn);
  EXPECT_EQ(y.shape(), (Shape{2, 32, 496}));
  for (std::size_t r = 0; r < 64; ++r) {
    double s = 0.0;
    for (std::size_t t = 0; t < 496; ++t) s += attn[r * 496 + t];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Tffn, ZeroGammaIsExactIdentity) {
  Model model(ModelConfig{}, 5);
  TffnLayer layer = model.blocks()[1].tffn[0];
  layer.gamma = 0.0;
  Tensor x = oracle::random_tensor({1, 64, 247}, 6);
  Tensor y = layer.forward(x);
  EXPECT_EQ(y.shape(), (Shape{1, 64, 247}));
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST(Tffn, FreshFilterMatchesScaledSqueeze) {
  Model model(small_config(), 7);
  const TffnLayer& layer = model.blocks()[0].tffn[1];
  Tensor x = oracle::random_tensor({2, 4, 60}, 8);
  Tensor local = gelu(depthwise_conv1d(conv1d(x, layer.expand), layer.depthwise));
  Tensor expected = add(x, conv1d(scale(local, 0.1), layer.squeeze));
  EXPECT_LT(oracle::max_abs_diff(layer.forward(x).data(), expected.data()), 1e-9);
}

TEST(Farel, FreshFilterScalesConvolution) {
  Model model(ModelConfig{}, 9);
  Tensor x = oracle::random_tensor({1, 1, 2048}, 10);
  Tensor conv_out;
  Tensor y = model.embedding().forward(x, &conv_out);
  EXPECT_EQ(y.shape(), (Shape{1, 32, 2048}));
  EXPECT_LT(oracle::max_abs_diff(y.data(), scale(conv_out, 1.1).data()), 1e-9);
}

TEST(Distill, ShapeChainSteps) {
  Model model(ModelConfig{}, 11);
  auto& d = model.distills();
  EXPECT_EQ(d[0].forward(Tensor({1, 32, 2048})).shape(), (Shape{1, 32, 496}));
  EXPECT_EQ(d[1].forward(Tensor({1, 32, 496})).shape(), (Shape{1, 64, 247}));
  EXPECT_EQ(d[3].forward(Tensor({1, 128, 123})).shape(), (Shape{1, 256, 61}));
  EXPECT_THROW(d[0].forward(Tensor({1, 32, 40})), DimensionError);
}

TEST(Model, DefaultShapeChain) {
  const std::vector<Shape> expected{{32, 2048}, {32, 496}, {32, 496}, {64, 247}, {64, 247}, {128, 123},
                                    {128, 123}, {256, 61},  {256, 61}, {15616},   {256},     {4}};
  ModelConfig config;
  auto predicted = config.shape_chain();
  ASSERT_EQ(predicted.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(predicted[i].shape, expected[i]) << predicted[i].name;

  Model model(config, 12);
  model.set_training(false);
  NoGradGuard guard;
  ForwardTrace trace;
  auto result = model.forward(oracle::random_tensor({1, 1, 2048}, 13), &trace);
  ASSERT_EQ(trace.stages.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    EXPECT_EQ(trace.stages[i].name, predicted[i].name);
    EXPECT_EQ(trace.stages[i].shape, expected[i]) << trace.stages[i].name;
  }
  EXPECT_EQ(result.logits.shape(), (Shape{1, 4}));
  EXPECT_EQ(result.features.shape(), (Shape{1, 256}));
}

TEST(Model, ChainFollowsLengthFormula) {
  ModelConfig c = small_config();
  // (256 - 16) / 2 + 1 = 121, pooled to 60, then 29
  EXPECT_EQ(c.block_length(0), 60u);
  EXPECT_EQ(c.block_length(1), 29u);
  EXPECT_EQ(c.flat_features(), 8u * 29u);
  Model model(c, 1);
  NoGradGuard guard;
  ForwardTrace trace;
  model.forward(oracle::random_tensor({3, 1, 256}, 2), &trace);
  auto predicted = c.shape_chain();
  for (std::size_t i = 0; i < predicted.size(); ++i) EXPECT_EQ(trace.stages[i].shape, predicted[i].shape);
}

TEST(Model, RejectsWrongInputLength) {
  Model model(small_config(), 1);
  try {
    model.forward(Tensor({1, 1, 200}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("256"), std::string::npos);
  }
}

TEST(Model, ConfigValidation) {
  ModelConfig c = small_config();
  c.gamma = -0.1;
  EXPECT_THROW(Model(c, 0), ConfigError);
  c = small_config();
  c.num_blocks = 0;
  EXPECT_THROW(Model(c, 0), ConfigError);
  c = small_config();
  c.branch_kernel_large = 4;
  EXPECT_THROW(Model(c, 0), ConfigError);
  c = small_config();
  c.num_blocks = 6;
  EXPECT_THROW(Model(c, 0), DimensionError);
  EXPECT_THROW(parse_ablation("non-attention"), ConfigError);
  EXPECT_EQ(parse_ablation("non_fft"), Ablation::non_fft);
}

TEST(Model, ParameterCountDependsOnlyOnConfig) {
  Model a(small_config(), 1), b(small_config(), 2);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].name, pb[i].name);
}

TEST(Model, DefaultSizeRandomProbesGradcheck) {
  Model model(ModelConfig{}, 21);
  Tensor x = oracle::random_tensor({2, 1, 2048}, 22);
  const std::vector<std::size_t> labels{1, 3};
  GradcheckOptions options;
  options.max_probes = 10;
  options.seed = 23;
  auto report = gradcheck([&] { return cross_entropy(model.forward(x).logits, labels); }, model.parameters(), options);
  EXPECT_EQ(report.entries.size(), 10u);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Model, EvalForwardIsDeterministic) {
  Model model(small_config(), 4);
  model.set_training(false);
  Tensor x = oracle::random_tensor({4, 1, 256}, 5);
  NoGradGuard guard;
  auto first = model.forward(x).logits;
  auto second = model.forward(x).logits;
  EXPECT_TRUE(std::equal(first.data().begin(), first.data().end(), second.data().begin()));
}

TEST(Variants, StructuralDifferences) {
  ModelConfig c = small_config();
  c.ablation = Ablation::non_farel;
  Model non_farel = build_variant(c, 1);
  EXPECT_FALSE(has_parameter(non_farel, "embed.filter"));
  EXPECT_TRUE(has_parameter(non_farel, "tffn1.filter"));
  c.ablation = Ablation::non_fft;
  Model non_fft = build_variant(c, 1);
  EXPECT_TRUE(has_parameter(non_fft, "embed.filter"));
  EXPECT_FALSE(has_parameter(non_fft, "tffn1.filter"));
  c.ablation = Ablation::non_msa;
  Model non_msa = build_variant(c, 1);
  EXPECT_FALSE(has_parameter(non_msa, "branch_small"));
  EXPECT_FALSE(has_parameter(non_msa, "fuse"));
  EXPECT_THROW(non_msa.dump_attention(Tensor({1, 1, 256}), 0, 0), ConfigError);
}

TEST(Variants, AllPreserveShapeChain) {
  ModelConfig base = small_config();
  const auto expected = base.shape_chain();
  for (Ablation a : {Ablation::none, Ablation::non_msa, Ablation::non_fft, Ablation::non_farel}) {
    ModelConfig c = base;
    c.ablation = a;
    Model model = build_variant(c, 3);
    NoGradGuard guard;
    ForwardTrace trace;
    model.forward(oracle::random_tensor({2, 1, 256}, 4), &trace);
    ASSERT_EQ(trace.stages.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(trace.stages[i].shape, expected[i].shape);
  }
}

TEST(Variants, GammaSweepBuildsEightModels) {
  const auto expected = ModelConfig{}.shape_chain();
  for (int i = 1; i <= 8; ++i) {
    ModelConfig c;
    c.gamma = 0.1 * i;
    Model model = build_variant(c, 1);
    EXPECT_DOUBLE_EQ(model.embedding().gamma, 0.1 * i);
    EXPECT_DOUBLE_EQ(model.blocks()[3].tffn[1].gamma, 0.1 * i);
    const auto chain = c.shape_chain();
    for (std::size_t s = 0; s < chain.size(); ++s) EXPECT_EQ(chain[s].shape, expected[s].shape);
  }
}

// With gamma = 0 the embedding reduces to the plain convolution and each
// feed-forward layer to x + squeeze bias, which is zero at initialization.
TEST(Variants, ZeroGammaMatchesModelWithoutReconstruction) {
  ModelConfig c = small_config();
  c.gamma = 0.0;
  Model full(c, 21), stripped(c, 21);
  stripped.embedding().filter.reset();
  for (auto& block : stripped.blocks()) block.tffn.clear();
  Tensor x = oracle::random_tensor({3, 1, 256}, 22);
  NoGradGuard guard;
  auto a = full.forward(x).logits;
  auto b = stripped.forward(x).logits;
  EXPECT_LT(oracle::max_abs_diff(a.data(), b.data()), 1e-12);
}

TEST(Attention, DefaultDumpHasBlockFourLength) {
  Model model(ModelConfig{}, 14);
  Tensor attn = model.dump_attention(oracle::random_tensor({1, 1, 2048}, 15), 3, 0);
  EXPECT_EQ(attn.shape(), (Shape{1, 61}));
  double s = 0.0;
  for (double v : attn.data()) s += v;
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_THROW(model.dump_attention(Tensor({1, 1, 2048}), 4, 0), ConfigError);
  EXPECT_THROW(model.dump_attention(Tensor({1, 1, 2048}), 0, 2), ConfigError);
}

TEST(Attention, TraceRowsSumToOneBeforeAveraging) {
  Model model(small_config(), 16);
  NoGradGuard guard;
  ForwardTrace trace;
  model.forward(oracle::random_tensor({2, 1, 256}, 17), &trace);
  const Tensor& attn = trace.attention[1][0];
  const std::size_t len = attn.dim(2);
  for (std::size_t r = 0; r < attn.dim(0) * attn.dim(1); ++r) {
    double s = 0.0;
    for (std::size_t t = 0; t < len; ++t) s += attn[r * len + t];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Checkpoint, RoundTripRestoresOutputs) {
  Model model(small_config(), 18);
  Tensor x = oracle::random_tensor({4, 1, 256}, 19);
  model.forward(x);  // moves the running statistics away from their defaults
  model.set_training(false);
  auto& p = model.parameters()[2].tensor;
  p.mutable_data()[0] += 0.5;

  std::stringstream buffer;
  save_checkpoint(buffer, model, {{"epoch", "7"}});
  auto loaded = load_checkpoint(buffer);
  EXPECT_EQ(loaded.header.at("epoch"), "7");
  EXPECT_EQ(loaded.header.at("input_length"), "256");
  loaded.model.set_training(false);
  NoGradGuard guard;
  auto a = model.forward(x).logits;
  auto b = loaded.model.forward(x).logits;
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(Checkpoint, RejectsGarbage) {
  std::stringstream bad("not a checkpoint\n");
  EXPECT_THROW(load_checkpoint(bad), ParseError);
  EXPECT_THROW(load_checkpoint(std::string("/nonexistent/model.ckpt")), ConfigError);
}

TEST(ConvNet, ReconstructionEmbeddingAttaches) {
  ConvNetConfig c;
  c.input_length = 512;
  ConvNet with(c, 1);
  c.reconstruction_embedding = false;
  ConvNet without(c, 1);
  EXPECT_GT(with.parameter_count(), without.parameter_count());
  NoGradGuard guard;
  ForwardTrace trace;
  auto out = with.forward(oracle::random_tensor({2, 1, 512}, 2), &trace);
  EXPECT_EQ(out.logits.shape(), (Shape{2, 4}));
}
