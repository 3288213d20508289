#include "faultformer/model.hpp"

#include <algorithm>

#include "faultformer/errors.hpp"
#include "faultformer/ops.hpp"

namespace faultformer {
namespace {

void append_conv(std::vector<NamedTensor>& out, const std::string& prefix, const ConvSpec& conv) {
  out.push_back({prefix + ".weight", conv.weights});
  out.push_back({prefix + ".bias", conv.bias});
}

void append_filter(std::vector<NamedTensor>& out, const std::string& prefix,
                   const std::optional<SpectralWeight>& filter) {
  if (!filter) return;
  out.push_back({prefix + ".re", filter->re});
  out.push_back({prefix + ".im", filter->im});
}

void append_norm(std::vector<NamedTensor>& out, const std::string& prefix, const BatchNormState& norm) {
  out.push_back({prefix + ".scale", norm.scale});
  out.push_back({prefix + ".shift", norm.shift});
}

void append_linear(std::vector<NamedTensor>& out, const std::string& prefix, const LinearSpec& layer) {
  out.push_back({prefix + ".weight", layer.weights});
  out.push_back({prefix + ".bias", layer.bias});
}

std::size_t spectrum_bins(std::size_t length) { return length / 2 + 1; }

Shape per_sample(const Tensor& t) { return Shape(t.shape().begin() + 1, t.shape().end()); }

void check_input(const Tensor& x, std::size_t length) {
  if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != length) {
    throw DimensionError("model input must be [B x 1 x " + std::to_string(length) + "], got " +
                         to_string(x.shape()));
  }
}

}  // namespace

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::none: return "none";
    case Ablation::non_msa: return "non-msa";
    case Ablation::non_fft: return "non-fft";
    case Ablation::non_farel: return "non-farel";
  }
  return "none";
}

Ablation parse_ablation(std::string_view text) {
  std::string s(text);
  std::replace(s.begin(), s.end(), '_', '-');
  if (s == "none" || s.empty()) return Ablation::none;
  if (s == "non-msa") return Ablation::non_msa;
  if (s == "non-fft") return Ablation::non_fft;
  if (s == "non-farel") return Ablation::non_farel;
  throw ConfigError("unknown ablation '" + std::string(text) + "' (expected none, non-msa, non-fft, non-farel)");
}

std::string to_string(AttentionAxis axis) { return axis == AttentionAxis::time ? "time" : "channel"; }

AttentionAxis parse_attention_axis(std::string_view text) {
  if (text == "time") return AttentionAxis::time;
  if (text == "channel") return AttentionAxis::channel;
  throw ConfigError("unknown attention axis '" + std::string(text) + "' (expected time or channel)");
}

void ModelConfig::validate() const {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  if (embed_channels < 1 || num_classes < 1 || classifier_hidden < 1 || tffn_expansion < 1) {
    throw ConfigError("channel, class and hidden counts must be positive");
  }
  for (auto k : {embed_kernel, branch_kernel_small, branch_kernel_large, distill_kernel}) {
    if (k % 2 == 0) throw ConfigError("length-preserving kernels must be odd, got " + std::to_string(k));
  }
  if (first_distill_kernel < 1 || first_distill_stride < 1 || pool_kernel < 1 || pool_stride < 1) {
    throw ConfigError("distillation kernel and stride must be positive");
  }
  if (input_length < 2) throw ConfigError("input_length must be >= 2");
  // Walk the length chain so undersized inputs fail here rather than mid-forward.
  for (std::size_t b = 0; b < num_blocks; ++b) {
    if (block_length(b) < 2) throw DimensionError("block " + std::to_string(b + 1) + " length below 2");
  }
}

std::size_t ModelConfig::block_channels(std::size_t block) const { return embed_channels << block; }

std::size_t ModelConfig::block_length(std::size_t block) const {
  if (input_length < first_distill_kernel) {
    throw DimensionError("input length " + std::to_string(input_length) + " shorter than first distillation kernel " +
                         std::to_string(first_distill_kernel));
  }
  std::size_t length = (input_length - first_distill_kernel) / first_distill_stride + 1;
  length = pooled_length(length, pool_kernel, pool_stride);
  for (std::size_t b = 1; b <= block; ++b) length = pooled_length(length, pool_kernel, pool_stride);
  return length;
}

std::size_t ModelConfig::flat_features() const {
  return block_channels(num_blocks - 1) * block_length(num_blocks - 1);
}

std::vector<StageShape> ModelConfig::shape_chain() const {
  std::vector<StageShape> chain;
  chain.push_back({"embedding", {embed_channels, input_length}});
  for (std::size_t b = 0; b < num_blocks; ++b) {
    chain.push_back({"distill" + std::to_string(b + 1), {block_channels(b), block_length(b)}});
    chain.push_back({"block" + std::to_string(b + 1), {block_channels(b), block_length(b)}});
  }
  chain.push_back({"flatten", {flat_features()}});
  chain.push_back({"hidden", {classifier_hidden}});
  chain.push_back({"logits", {num_classes}});
  return chain;
}

KeyValues ModelConfig::to_key_values() const {
  return {
      {"input_length", std::to_string(input_length)},
      {"embed_channels", std::to_string(embed_channels)},
      {"embed_kernel", std::to_string(embed_kernel)},
      {"num_blocks", std::to_string(num_blocks)},
      {"mscal_per_block", std::to_string(mscal_per_block)},
      {"tffn_per_block", std::to_string(tffn_per_block)},
      {"branch_kernel_small", std::to_string(branch_kernel_small)},
      {"branch_kernel_large", std::to_string(branch_kernel_large)},
      {"tffn_expansion", std::to_string(tffn_expansion)},
      {"gamma", format_double(gamma)},
      {"num_classes", std::to_string(num_classes)},
      {"classifier_hidden", std::to_string(classifier_hidden)},
      {"first_distill_kernel", std::to_string(first_distill_kernel)},
      {"first_distill_stride", std::to_string(first_distill_stride)},
      {"distill_kernel", std::to_string(distill_kernel)},
      {"pool_kernel", std::to_string(pool_kernel)},
      {"pool_stride", std::to_string(pool_stride)},
      {"ablation", to_string(ablation)},
      {"attention_axis", to_string(attention_axis)},
  };
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) { return from_key_values(kv, ModelConfig{}); }

ModelConfig ModelConfig::from_key_values(const KeyValues& kv, ModelConfig c) {
  c.input_length = kv_size(kv, "input_length", c.input_length);
  c.embed_channels = kv_size(kv, "embed_channels", c.embed_channels);
  c.embed_kernel = kv_size(kv, "embed_kernel", c.embed_kernel);
  c.num_blocks = kv_size(kv, "num_blocks", c.num_blocks);
  c.mscal_per_block = kv_size(kv, "mscal_per_block", c.mscal_per_block);
  c.tffn_per_block = kv_size(kv, "tffn_per_block", c.tffn_per_block);
  c.branch_kernel_small = kv_size(kv, "branch_kernel_small", c.branch_kernel_small);
  c.branch_kernel_large = kv_size(kv, "branch_kernel_large", c.branch_kernel_large);
  c.tffn_expansion = kv_size(kv, "tffn_expansion", c.tffn_expansion);
  c.gamma = kv_double(kv, "gamma", c.gamma);
  c.num_classes = kv_size(kv, "num_classes", c.num_classes);
  c.classifier_hidden = kv_size(kv, "classifier_hidden", c.classifier_hidden);
  c.first_distill_kernel = kv_size(kv, "first_distill_kernel", c.first_distill_kernel);
  c.first_distill_stride = kv_size(kv, "first_distill_stride", c.first_distill_stride);
  c.distill_kernel = kv_size(kv, "distill_kernel", c.distill_kernel);
  c.pool_kernel = kv_size(kv, "pool_kernel", c.pool_kernel);
  c.pool_stride = kv_size(kv, "pool_stride", c.pool_stride);
  c.ablation = parse_ablation(kv_string(kv, "ablation", to_string(c.ablation)));
  c.attention_axis = parse_attention_axis(kv_string(kv, "attention_axis", to_string(c.attention_axis)));
  return c;
}

Tensor FarelLayer::forward(const Tensor& x, Tensor* conv_out) const {
  Tensor c = conv1d(x, conv);
  if (conv_out) *conv_out = c;
  if (!filter) return c;
  return add(c, far_reconstruct(c, *filter, gamma));
}

Tensor MscalLayer::forward(const Tensor& x, Tensor* attention_out) const {
  Tensor y1 = conv1d(x, conv_in);
  Tensor y3 = y1;
  if (attention) {
    Tensor y2 = add(conv1d(y1, branch_small), conv1d(y1, branch_large));
    Tensor attn = softmax(y2, axis == AttentionAxis::time ? 2 : 1);
    if (attention_out) *attention_out = attn;
    y3 = add(hadamard(conv1d(attn, fuse), y1), y1);
  }
  return add(conv1d(gelu(y3), conv_out), x);
}

Tensor TffnLayer::forward(const Tensor& x) const {
  Tensor expanded = conv1d(x, expand);
  Tensor local = gelu(depthwise_conv1d(expanded, depthwise));
  Tensor mixed = filter ? far_reconstruct(local, *filter, gamma) : local;
  return add(x, conv1d(mixed, squeeze));
}

Tensor DistillLayer::forward(const Tensor& x) const {
  return maxpool1d(gelu(conv1d(x, conv)), pool_kernel, pool_stride);
}

std::size_t DistillLayer::output_length(std::size_t length) const {
  return pooled_length(conv.output_length(length), pool_kernel, pool_stride);
}

Tensor MstffBlock::forward(const Tensor& x, std::vector<Tensor>* attention) {
  Tensor h = batchnorm1d(x, norm_attention);
  for (const auto& layer : mscal) {
    Tensor attn;
    h = layer.forward(h, attention ? &attn : nullptr);
    if (attention) attention->push_back(attn);
  }
  h = batchnorm1d(h, norm_ffn);
  for (const auto& layer : tffn) h = layer.forward(h);
  return h;
}

std::size_t Classifier::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor.numel();
  return total;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const auto& c = config_;

  embedding_.conv = make_same_conv(1, c.embed_channels, c.embed_kernel, rng);
  embedding_.gamma = c.gamma;
  if (c.ablation != Ablation::non_farel) {
    embedding_.filter = SpectralWeight::identity(c.embed_channels, spectrum_bins(c.input_length));
  }

  for (std::size_t b = 0; b < c.num_blocks; ++b) {
    const std::size_t channels = c.block_channels(b);
    const std::size_t length = c.block_length(b);

    DistillLayer distill;
    distill.pool_kernel = c.pool_kernel;
    distill.pool_stride = c.pool_stride;
    if (b == 0) {
      distill.conv = make_conv(c.embed_channels, channels, c.first_distill_kernel, c.first_distill_stride, 0, rng);
    } else {
      distill.conv = make_same_conv(c.block_channels(b - 1), channels, c.distill_kernel, rng);
    }
    distills_.push_back(std::move(distill));

    MstffBlock block;
    block.norm_attention = BatchNormState::create(channels);
    block.norm_ffn = BatchNormState::create(channels);
    for (std::size_t l = 0; l < c.mscal_per_block; ++l) {
      MscalLayer layer;
      layer.conv_in = make_same_conv(channels, channels, 1, rng);
      layer.branch_small = make_same_conv(channels, channels, c.branch_kernel_small, rng);
      layer.branch_large = make_same_conv(channels, channels, c.branch_kernel_large, rng);
      layer.fuse = make_same_conv(channels, channels, 1, rng);
      layer.conv_out = make_same_conv(channels, channels, 1, rng);
      layer.attention = c.ablation != Ablation::non_msa;
      layer.axis = c.attention_axis;
      block.mscal.push_back(std::move(layer));
    }
    const std::size_t wide = channels * c.tffn_expansion;
    for (std::size_t l = 0; l < c.tffn_per_block; ++l) {
      TffnLayer layer;
      layer.expand = make_same_conv(channels, wide, 1, rng);
      layer.depthwise = make_depthwise_conv(wide, 3, rng);
      layer.squeeze = make_same_conv(wide, channels, 1, rng);
      layer.gamma = c.gamma;
      if (c.ablation != Ablation::non_fft) layer.filter = SpectralWeight::identity(wide, spectrum_bins(length));
      block.tffn.push_back(std::move(layer));
    }
    blocks_.push_back(std::move(block));
  }

  head_.hidden = make_linear(c.flat_features(), c.classifier_hidden, rng);
  head_.output = make_linear(c.classifier_hidden, c.num_classes, rng);
  set_training(true);
}

ForwardResult Model::forward(const Tensor& x, ForwardTrace* trace) {
  check_input(x, config_.input_length);
  Tensor conv_out;
  Tensor h = embedding_.forward(x, trace ? &conv_out : nullptr);
  if (trace) {
    trace->stages.clear();
    trace->attention.clear();
    trace->embed_conv = conv_out;
    trace->embed_output = h;
    trace->stages.push_back({"embedding", per_sample(h)});
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    h = distills_[b].forward(h);
    if (trace) trace->stages.push_back({"distill" + std::to_string(b + 1), per_sample(h)});
    std::vector<Tensor> attention;
    h = blocks_[b].forward(h, trace ? &attention : nullptr);
    if (trace) {
      trace->stages.push_back({"block" + std::to_string(b + 1), per_sample(h)});
      trace->attention.push_back(std::move(attention));
    }
  }
  Tensor flat = flatten(h);
  Tensor features = linear(flat, head_.hidden);
  Tensor logits = linear(gelu(features), head_.output);
  if (trace) {
    trace->stages.push_back({"flatten", per_sample(flat)});
    trace->stages.push_back({"hidden", per_sample(features)});
    trace->stages.push_back({"logits", per_sample(logits)});
  }
  return {logits, features};
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  append_conv(out, "embed.conv", embedding_.conv);
  append_filter(out, "embed.filter", embedding_.filter);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string d = "distill" + std::to_string(b + 1);
    append_conv(out, d + ".conv", distills_[b].conv);
    const std::string p = "block" + std::to_string(b + 1);
    const auto& block = blocks_[b];
    append_norm(out, p + ".norm_attention", block.norm_attention);
    for (std::size_t l = 0; l < block.mscal.size(); ++l) {
      const std::string m = p + ".mscal" + std::to_string(l + 1);
      const auto& layer = block.mscal[l];
      append_conv(out, m + ".conv_in", layer.conv_in);
      if (layer.attention) {
        append_conv(out, m + ".branch_small", layer.branch_small);
        append_conv(out, m + ".branch_large", layer.branch_large);
        append_conv(out, m + ".fuse", layer.fuse);
      }
      append_conv(out, m + ".conv_out", layer.conv_out);
    }
    append_norm(out, p + ".norm_ffn", block.norm_ffn);
    for (std::size_t l = 0; l < block.tffn.size(); ++l) {
      const std::string t = p + ".tffn" + std::to_string(l + 1);
      const auto& layer = block.tffn[l];
      append_conv(out, t + ".expand", layer.expand);
      append_conv(out, t + ".depthwise", layer.depthwise);
      append_filter(out, t + ".filter", layer.filter);
      append_conv(out, t + ".squeeze", layer.squeeze);
    }
  }
  append_linear(out, "head.hidden", head_.hidden);
  append_linear(out, "head.output", head_.output);
  return out;
}

std::vector<NamedBuffer> Model::buffers() {
  std::vector<NamedBuffer> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block" + std::to_string(b + 1);
    auto& block = blocks_[b];
    out.push_back({p + ".norm_attention.running_mean", &block.norm_attention.running_mean});
    out.push_back({p + ".norm_attention.running_var", &block.norm_attention.running_var});
    out.push_back({p + ".norm_ffn.running_mean", &block.norm_ffn.running_mean});
    out.push_back({p + ".norm_ffn.running_var", &block.norm_ffn.running_var});
  }
  return out;
}

void Model::set_training(bool training) {
  training_ = training;
  for (auto& block : blocks_) {
    block.norm_attention.training = training;
    block.norm_ffn.training = training;
  }
}

Tensor Model::dump_attention(const Tensor& x, std::size_t block_index, std::size_t layer_index) {
  if (block_index >= blocks_.size()) {
    throw ConfigError("attention block index " + std::to_string(block_index + 1) + " out of range 1.." +
                      std::to_string(blocks_.size()));
  }
  if (layer_index >= blocks_[block_index].mscal.size()) {
    throw ConfigError("attention layer index " + std::to_string(layer_index + 1) + " out of range 1.." +
                      std::to_string(blocks_[block_index].mscal.size()));
  }
  if (!blocks_[block_index].mscal[layer_index].attention) {
    throw ConfigError("the selected layer has no attention (non-msa variant)");
  }
  NoGradGuard guard;
  ForwardTrace trace;
  forward(x, &trace);
  const Tensor& attn = trace.attention[block_index][layer_index];
  const std::size_t batch = attn.dim(0);
  const std::size_t channels = attn.dim(1);
  const std::size_t length = attn.dim(2);
  std::vector<double> averaged(batch * length, 0.0);
  auto values = attn.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t t = 0; t < length; ++t) averaged[b * length + t] += values[(b * channels + c) * length + t];
    }
  }
  for (auto& v : averaged) v /= static_cast<double>(channels);
  return Tensor({batch, length}, std::move(averaged));
}

Model build_variant(const ModelConfig& config, std::uint64_t seed) { return Model(config, seed); }

ConvNet::ConvNet(ConvNetConfig config, std::uint64_t seed) : config_(config) {
  if (config_.embed_kernel % 2 == 0) throw ConfigError("embedding kernel must be odd");
  Rng rng(seed);
  embedding_.conv = make_same_conv(1, config_.channels, config_.embed_kernel, rng);
  embedding_.gamma = config_.gamma;
  if (config_.reconstruction_embedding) {
    embedding_.filter = SpectralWeight::identity(config_.channels, spectrum_bins(config_.input_length));
  }
  std::size_t length = config_.input_length;
  for (int i = 0; i < 3; ++i) {
    convs_.push_back(make_same_conv(config_.channels, config_.channels, 7, rng));
    length = pooled_length(length, 4, 4);
  }
  head_.hidden = make_linear(config_.channels * length, config_.hidden, rng);
  head_.output = make_linear(config_.hidden, config_.num_classes, rng);
}

ForwardResult ConvNet::forward(const Tensor& x, ForwardTrace* trace) {
  check_input(x, config_.input_length);
  Tensor conv_out;
  Tensor h = embedding_.forward(x, trace ? &conv_out : nullptr);
  if (trace) {
    trace->embed_conv = conv_out;
    trace->embed_output = h;
  }
  for (const auto& conv : convs_) h = maxpool1d(gelu(conv1d(h, conv)), 4, 4);
  Tensor features = linear(flatten(h), head_.hidden);
  return {linear(gelu(features), head_.output), features};
}

std::vector<NamedTensor> ConvNet::parameters() const {
  std::vector<NamedTensor> out;
  append_conv(out, "embed.conv", embedding_.conv);
  append_filter(out, "embed.filter", embedding_.filter);
  for (std::size_t i = 0; i < convs_.size(); ++i) append_conv(out, "conv" + std::to_string(i + 1), convs_[i]);
  append_linear(out, "head.hidden", head_.hidden);
  append_linear(out, "head.output", head_.output);
  return out;
}

}  // namespace faultformer
