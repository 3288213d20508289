#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "faultformer/config.hpp"
#include "faultformer/gradcheck.hpp"
#include "faultformer/layers.hpp"
#include "faultformer/spectral.hpp"
#include "faultformer/tensor.hpp"

namespace faultformer {

enum class Ablation { none, non_msa, non_fft, non_farel };
enum class AttentionAxis { time, channel };

std::string to_string(Ablation ablation);
Ablation parse_ablation(std::string_view text);
std::string to_string(AttentionAxis axis);
AttentionAxis parse_attention_axis(std::string_view text);

struct StageShape {
  std::string name;
  Shape shape;  // per sample, batch axis excluded
};

/// Structural description of the network. Defaults reproduce the reference
/// layout: 1x2048 input, 32-channel embedding, four blocks ending at 256x61.
struct ModelConfig {
  std::size_t input_length = 2048;
  std::size_t embed_channels = 32;
  std::size_t embed_kernel = 63;
  std::size_t num_blocks = 4;
  std::size_t mscal_per_block = 2;
  std::size_t tffn_per_block = 2;
  std::size_t branch_kernel_small = 3;
  std::size_t branch_kernel_large = 5;
  std::size_t tffn_expansion = 2;
  double gamma = 0.1;
  std::size_t num_classes = 4;
  std::size_t classifier_hidden = 256;
  std::size_t first_distill_kernel = 64;
  std::size_t first_distill_stride = 2;
  std::size_t distill_kernel = 5;
  std::size_t pool_kernel = 3;
  std::size_t pool_stride = 2;
  Ablation ablation = Ablation::none;
  AttentionAxis attention_axis = AttentionAxis::time;

  void validate() const;

  std::size_t block_channels(std::size_t block) const;
  std::size_t block_length(std::size_t block) const;
  std::size_t flat_features() const;

  /// Predicted per-sample shapes: embedding, each distillation, each block,
  /// flatten, hidden, logits.
  std::vector<StageShape> shape_chain() const;

  KeyValues to_key_values() const;
  /// Reads recognised keys from `kv`; other keys are left alone.
  static ModelConfig from_key_values(const KeyValues& kv, ModelConfig base);
  static ModelConfig from_key_values(const KeyValues& kv);
};

/// Embedding: wide convolution followed, unless disabled, by the Fourier
/// adaptive reconstruction residual conv(x) + gamma * F^-1{W ⊗ F[conv(x)]}.
struct FarelLayer {
  ConvSpec conv;
  std::optional<SpectralWeight> filter;
  double gamma = 0.1;

  Tensor forward(const Tensor& x, Tensor* conv_out = nullptr) const;
};

/// Multiscale convolutional attention with residual; shape-preserving.
struct MscalLayer {
  ConvSpec conv_in;
  ConvSpec branch_small;
  ConvSpec branch_large;
  ConvSpec fuse;
  ConvSpec conv_out;
  bool attention = true;
  AttentionAxis axis = AttentionAxis::time;

  Tensor forward(const Tensor& x, Tensor* attention_out = nullptr) const;
};

/// Channel-expanding feed-forward with a depthwise conv and a spectral
/// reconstruction inside; residual to the input.
struct TffnLayer {
  ConvSpec expand;
  ConvSpec depthwise;
  ConvSpec squeeze;
  std::optional<SpectralWeight> filter;
  double gamma = 0.1;

  Tensor forward(const Tensor& x) const;
};

/// MaxPool(GELU(Conv1d(x))).
struct DistillLayer {
  ConvSpec conv;
  std::size_t pool_kernel = 3;
  std::size_t pool_stride = 2;

  Tensor forward(const Tensor& x) const;
  std::size_t output_length(std::size_t length) const;
};

struct MstffBlock {
  BatchNormState norm_attention;
  std::vector<MscalLayer> mscal;
  BatchNormState norm_ffn;
  std::vector<TffnLayer> tffn;

  Tensor forward(const Tensor& x, std::vector<Tensor>* attention = nullptr);
};

struct ClassifierHead {
  LinearSpec hidden;
  LinearSpec output;
};

/// Optional diagnostics captured during a forward pass.
struct ForwardTrace {
  std::vector<StageShape> stages;
  std::vector<std::vector<Tensor>> attention;  // [block][mscal layer], each [B x C x L]
  Tensor embed_conv;                           // conv(x) before reconstruction
  Tensor embed_output;                         // embedding output
};

struct ForwardResult {
  Tensor logits;    // [B x classes]
  Tensor features;  // penultimate activations [B x hidden]
};

struct NamedBuffer {
  std::string name;
  std::vector<double>* values;
};

/// Anything trainable by the training loop.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual ForwardResult forward(const Tensor& x, ForwardTrace* trace = nullptr) = 0;
  virtual std::vector<NamedTensor> parameters() const = 0;
  virtual std::vector<NamedBuffer> buffers() { return {}; }
  virtual void set_training(bool training) = 0;
  virtual bool training() const = 0;
  virtual std::size_t input_length() const = 0;
  virtual std::size_t num_classes() const = 0;

  std::size_t parameter_count() const;
};

/// Fourier-embedded multiscale convolutional transformer for 1-D signals.
class Model : public Classifier {
 public:
  explicit Model(ModelConfig config, std::uint64_t seed = 0);
  // Parameters are shared handles; a copy would alias them.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }

  ForwardResult forward(const Tensor& x, ForwardTrace* trace = nullptr) override;
  std::vector<NamedTensor> parameters() const override;
  std::vector<NamedBuffer> buffers() override;
  void set_training(bool training) override;
  bool training() const override { return training_; }
  std::size_t input_length() const override { return config_.input_length; }
  std::size_t num_classes() const override { return config_.num_classes; }

  /// Channel-averaged attention of one MSCAL layer, [B x L_block]. Indices
  /// are zero-based.
  Tensor dump_attention(const Tensor& x, std::size_t block_index, std::size_t layer_index);

  FarelLayer& embedding() { return embedding_; }
  const FarelLayer& embedding() const { return embedding_; }
  std::vector<DistillLayer>& distills() { return distills_; }
  std::vector<MstffBlock>& blocks() { return blocks_; }
  ClassifierHead& head() { return head_; }

 private:
  ModelConfig config_;
  FarelLayer embedding_;
  std::vector<DistillLayer> distills_;
  std::vector<MstffBlock> blocks_;
  ClassifierHead head_;
  bool training_ = true;
};

/// Validates the config (including the ablation tag) and builds fresh weights.
Model build_variant(const ModelConfig& config, std::uint64_t seed = 0);

/// Small plain CNN with an optional reconstruction embedding in front, used
/// to show the embedding attached to an unrelated backbone.
struct ConvNetConfig {
  std::size_t input_length = 2048;
  std::size_t channels = 16;
  std::size_t embed_kernel = 63;
  bool reconstruction_embedding = true;
  double gamma = 0.1;
  std::size_t num_classes = 4;
  std::size_t hidden = 64;
};

class ConvNet : public Classifier {
 public:
  explicit ConvNet(ConvNetConfig config, std::uint64_t seed = 0);

  ForwardResult forward(const Tensor& x, ForwardTrace* trace = nullptr) override;
  std::vector<NamedTensor> parameters() const override;
  void set_training(bool training) override { training_ = training; }
  bool training() const override { return training_; }
  std::size_t input_length() const override { return config_.input_length; }
  std::size_t num_classes() const override { return config_.num_classes; }

 private:
  ConvNetConfig config_;
  FarelLayer embedding_;
  std::vector<ConvSpec> convs_;
  ClassifierHead head_;
  bool training_ = true;
};

}  // namespace faultformer
