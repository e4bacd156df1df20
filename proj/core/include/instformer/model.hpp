#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "instformer/autodiff.hpp"
#include "instformer/geom.hpp"
#include "instformer/instance_encoding.hpp"
#include "instformer/rng.hpp"

namespace instformer {

/// Which halves of the instance code reach the network. `none` is the no-encoding ablation.
enum class EncodingMode { none, inter_only, intra_only, both };

std::string_view to_string(EncodingMode mode);
EncodingMode encoding_mode_from_string(std::string_view name);

struct ModelConfig {
  std::size_t d_model = 256;
  std::size_t n_heads = 4;
  std::size_t n_layers = 6;
  std::size_t noise_dim = 64;
  /// Standard deviation of the per-part noise.
  double noise_scale = 1.0;
  std::size_t max_parts = kDefaultMaxParts;
  std::size_t n_pc = 128;
  std::size_t head_width = 256;
  std::size_t ffn_multiplier = 4;
  EncodingMode encoding = EncodingMode::both;

  void validate() const;
  /// Width of [feature | v_inter | v_intra | previous pose | noise] before projection.
  std::size_t token_width() const { return d_model + 2 * max_parts + 7 + noise_dim; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named configurations: "tiny" (gradient checks), "desk" (default, noise scaled to 0.1) and "full"
/// (1000 points per part, unit noise).
ModelConfig model_preset(std::string_view name);

/// Ordered collection of named parameter tensors.
class ParameterStore {
 public:
  ad::Tensor add(std::string name, ad::Shape shape, std::vector<double> values);
  const ad::Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<std::pair<std::string, ad::Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, ad::Tensor>>& entries() const { return entries_; }
  std::size_t scalar_count() const;

  /// Marks every parameter whose name starts with `prefix` as (non-)trainable.
  void set_trainable(std::string_view prefix, bool trainable);
  void set_all_trainable(bool trainable);
  void zero_grad();
  /// Deep copy of all values (for snapshots and freeze checks).
  std::vector<std::vector<double>> snapshot() const;

 private:
  std::vector<std::pair<std::string, ad::Tensor>> entries_;
};

/// Per-slot side inputs of the token builder. Slot s is padding when valid[s] is false.
struct TokenInputs {
  ad::Tensor codes;  // [S, 2*max_parts]
  ad::Tensor noise;  // [S, noise_dim]; undefined when noise_dim == 0
  std::vector<bool> valid;

  std::size_t slots() const { return valid.size(); }
  std::size_t valid_count() const;
};

/// Assembles token side inputs. `codes` may be shorter than `slots`; extra slots are padding.
TokenInputs make_token_inputs(const ModelConfig& config, std::span<const InstanceCode> codes,
                              std::span<const double> noise, std::size_t slots);

/// Per-layer encoder outputs f_enc, consumed by the decoder.
struct EncoderMemory {
  std::vector<ad::Tensor> layers;  // n_layers x [S, d_model]
  std::vector<bool> valid;
};

/// Poses per layer: n_layers tensors of shape [S, 7] laid out (w, x, y, z, tx, ty, tz).
using PoseSequence = std::vector<ad::Tensor>;

struct EncoderOutput {
  EncoderMemory memory;
  PoseSequence poses;
};

/// First `count` rows of a [S,7] pose tensor as poses (quaternions renormalized).
std::vector<Pose> poses_of(const ad::Tensor& layer_poses, std::size_t count);

/// Identity pose (1,0,0,0 | 0,0,0) for each of `slots` slots.
ad::Tensor identity_poses(std::size_t slots);
ad::Tensor poses_tensor(std::span<const Pose> poses, std::size_t slots);

/// Shared PointNet, instance-encoded transformer encoder with a shared pose head, and the
/// optional in-process decoder. Immutable during inference; forward passes without an active
/// tape are thread-safe.
class AssemblyModel {
 public:
  AssemblyModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return params_; }
  const ParameterStore& parameters() const { return params_; }

  /// Max-pooled per-point MLP feature of each part: [N, d_model].
  ad::Tensor pointnet_encode(std::span<const PartCloud> parts) const;

  /// [features | codes | previous poses | noise] projected to d_model by the layer's projection.
  ad::Tensor build_tokens(std::size_t layer, const ad::Tensor& features, const TokenInputs& inputs,
                          const ad::Tensor& prev_poses, bool decoder = false) const;

  /// Runs all encoder layers. With `fixed_poses`, those poses are attached at every layer
  /// instead of the previous layer's predictions (already-placed parts).
  EncoderOutput encode(const ad::Tensor& features, const TokenInputs& inputs,
                       const ad::Tensor* fixed_poses = nullptr) const;

  ad::Tensor pose_head(const ad::Tensor& features, bool decoder = false) const;

  PoseSequence decode(const ad::Tensor& query_features, const TokenInputs& query_inputs,
                      const EncoderMemory& memory) const;

  /// Adds decoder parameters; the decoder pose head starts as a copy of the encoder head.
  void add_decoder(std::uint64_t seed);
  bool has_decoder() const { return has_decoder_; }

  /// Re-draws every parameter (including the zero-initialized head output) uniformly with the given bound.
  void randomize(std::uint64_t seed, double bound);

 private:
  struct Linear {
    ad::Tensor weight;  // [in, out]
    ad::Tensor bias;    // [out]
    ad::Tensor operator()(const ad::Tensor& x) const;
  };
  struct Norm {
    ad::Tensor gain;
    ad::Tensor bias;
    ad::Tensor operator()(const ad::Tensor& x) const;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct FeedForward {
    Linear up, down;
  };
  struct EncoderBlock {
    Linear in_proj;
    Norm ln_attn, ln_ffn;
    Attention attn;
    FeedForward ffn;
  };
  struct DecoderBlock {
    Linear in_proj;
    Norm ln_self, ln_cross, ln_ffn;
    Attention self_attn, cross_attn;
    FeedForward ffn;
  };
  struct Head {
    Linear fc1, fc2, out;
  };

  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  Linear make_token_projection(const std::string& name, Rng& rng);
  Norm make_norm(const std::string& name, std::size_t width);
  Attention make_attention(const std::string& name, Rng& rng);
  FeedForward make_ffn(const std::string& name, Rng& rng);
  Head make_head(const std::string& name, Rng& rng);

  ad::Tensor attend(const Attention& attn, const ad::Tensor& queries, const ad::Tensor& keys,
                    std::span<const double> mask) const;
  ad::Tensor feed_forward(const FeedForward& ffn, const ad::Tensor& x) const;
  ad::Tensor zero_padding(const ad::Tensor& x, const std::vector<bool>& valid) const;

  ModelConfig config_;
  ParameterStore params_;
  Linear pn1_, pn2_, pn3_;
  std::vector<EncoderBlock> encoder_;
  Head head_;
  bool has_decoder_ = false;
  std::vector<DecoderBlock> decoder_;
  Head decoder_head_;
};

/// Additive attention mask [rows, cols]: -inf where the key slot is padding.
std::vector<double> key_padding_mask(std::size_t rows, const std::vector<bool>& key_valid);

}  // namespace instformer
