#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "emonet/signals.hpp"
#include "emonet/tensor.hpp"

namespace emonet {

struct ConvSpec {
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct BackboneConfig {
  std::size_t d = 64;
  std::size_t n_layers = 12;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 4;
  std::vector<ConvSpec> conv_blocks;  // empty means default_conv_blocks(d)
  std::size_t input_length = 2560;
  std::uint64_t seed = 1234;

  static std::vector<ConvSpec> default_conv_blocks(std::size_t d);
  std::vector<ConvSpec> blocks() const;
  void validate() const;
  // T' after every block with T_out = floor((T_in - kernel) / stride) + 1.
  std::size_t frames() const;
  std::size_t experts() const { return n_layers + 1; }

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

std::size_t conv_output_length(std::size_t input_length, const ConvSpec& spec);

struct ConvBlockParams {
  std::size_t in_channels = 0, out_channels = 0, kernel = 0, stride = 1;
  std::vector<double> weight;  // [out][in][kernel]
  std::vector<double> bias;    // [out]
};

struct LayerNormParams {
  std::vector<double> scale, shift;
};

struct EncoderLayerParams {
  Matrix wq, wk, wv, wo;  // d x d, applied as x * W
  std::vector<double> bq, bk, bv, bo;
  LayerNormParams ln_attn;
  Matrix w_ff1;  // d x (ffn_mult * d)
  std::vector<double> b_ff1;
  Matrix w_ff2;  // (ffn_mult * d) x d
  std::vector<double> b_ff2;
  LayerNormParams ln_ff;
};

// Frozen encoder weights. There is no mutable access after construction; the
// only ways to obtain one are init_backbone and load_backbone_weights.
class BackboneParams {
 public:
  const BackboneConfig& config() const { return cfg_; }
  const std::vector<ConvBlockParams>& conv() const { return conv_; }
  const std::vector<EncoderLayerParams>& layers() const { return layers_; }
  const Matrix& positions() const { return positions_; }

  // Learned tensors only; the positional table is fixed and not counted.
  std::size_t parameter_count() const;
  std::uint64_t checksum() const;
  void for_each_tensor(const std::function<void(std::span<const double>)>& fn) const;

 private:
  friend BackboneParams init_backbone(const BackboneConfig& cfg);
  friend BackboneParams load_backbone_weights(const std::filesystem::path& path);

  explicit BackboneParams(BackboneConfig cfg);
  void for_each_tensor_mut(const std::function<void(std::span<double>, std::size_t fan_in)>& fn);

  BackboneConfig cfg_;
  std::vector<ConvBlockParams> conv_;
  std::vector<EncoderLayerParams> layers_;
  Matrix positions_;
};

BackboneParams init_backbone(const BackboneConfig& cfg);

void save_backbone_weights(const BackboneParams& params, const std::filesystem::path& path);
BackboneParams load_backbone_weights(const std::filesystem::path& path);

// Conv extractor output plus positional table; this is expert 0.
Matrix conv_extract(const BackboneParams& params, std::span<const double> samples);
// One post-norm encoder block: x = LN(x + MHA(x)); x = LN(x + FFN(x)).
Matrix encoder_layer_forward(const BackboneParams& params, std::size_t layer, const Matrix& x);

EmbeddingStack forward_all(const BackboneParams& params, std::span<const double> samples);
EmbeddingStack forward_all(const BackboneParams& params, const Window& window);

// Embedding cache file: "NMOE", u32 version, u32 experts, u32 frames, u32 dim,
// then f32 payload in (expert, frame, dim) order, all little-endian.
void save_stack(const EmbeddingStack& stack, const std::filesystem::path& path);
EmbeddingStack load_stack(const std::filesystem::path& path);

double gelu(double x);

}  // namespace emonet
