#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "catv2ton/conditioning.hpp"
#include "catv2ton/ops.hpp"
#include "catv2ton/rng.hpp"
#include "catv2ton/tensor.hpp"

namespace catv2ton {

struct ModelConfig {
  std::size_t num_blocks = 4;
  std::size_t hidden = 128;
  std::size_t heads = 4;
  std::size_t ffn = 512;
  std::size_t patch = 4;
  std::size_t channels = 3;       // C, image channels per frame
  std::size_t pose_channels = 2;  // P
  std::size_t max_frames = 64;
  // Per-head rotary split; zeros mean "half temporal, quarter row, quarter col".
  std::size_t rope_temporal = 0;
  std::size_t rope_row = 0;
  std::size_t rope_col = 0;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;

  std::size_t head_dim() const { return hidden / heads; }
  std::size_t frame_channels() const { return 2 * channels + 1; }
  std::size_t token_in() const { return frame_channels() * patch * patch; }
  std::size_t token_out() const { return channels * patch * patch; }
  std::size_t pose_token_in() const { return pose_channels * patch * patch; }
  RopeSplit rope_split() const;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct BlockWeights {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct PoseEncoderWeights {
  Tensor<T> embed_w, embed_b;
  BlockWeights<T> block;
  Tensor<T> out_w, out_b;  // zero-initialized so injection starts as a no-op
};

template <typename T>
struct DiTWeights {
  Tensor<T> embed_w, embed_b;
  Tensor<T> time_w1, time_b1, time_w2, time_b2;
  std::vector<BlockWeights<T>> blocks;
  PoseEncoderWeights<T> pose;
  Tensor<T> final_gamma, final_beta;
  Tensor<T> unembed_w, unembed_b;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;  // aliases the storage inside DiTWeights
  bool trainable = true;
};

enum class FreezeMode { full, selective };

struct FreezeReport {
  std::size_t trainable = 0;
  std::size_t total = 0;
  double ratio = 0.0;
};

/// Sinusoidal embedding of a (possibly fractional) timestep, [1, dim].
template <typename T>
Tensor<T> timestep_embedding(double t, std::size_t dim);

/// LN -> attention with RoPE on Q/K -> residual, then LN -> GELU FFN ->
/// residual. When `temb` is given it is added to every token first.
template <typename T>
Tensor<T> dit_block(const Tensor<T>& x, const std::optional<Tensor<T>>& temb,
                    const std::vector<TokenPosition>& positions, const BlockWeights<T>& w,
                    const ModelConfig& cfg);

/// Self-attention sub-layer alone (no norm, no residual): Wo·Attn(RoPE(xWq), RoPE(xWk), xWv).
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const std::vector<TokenPosition>& positions,
                         const BlockWeights<T>& w, const ModelConfig& cfg);

/// h1 + PoseEncoder(pose_tokens). Throws AlignmentError on token-count mismatch.
template <typename T>
Tensor<T> pose_inject(const Tensor<T>& h1, const Tensor<T>& pose_tokens,
                      const std::vector<TokenPosition>& positions,
                      const PoseEncoderWeights<T>& pose, const ModelConfig& cfg);

/// The denoising transformer with its pose encoder.
template <typename T>
class DiTModel {
 public:
  explicit DiTModel(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  DiTWeights<T>& weights() { return weights_; }
  const DiTWeights<T>& weights() const { return weights_; }

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>* find_parameter(const std::string& name);

  /// Token-level forward: tokens [n, (2C+1)p²], pose tokens [n, Pp²]
  /// -> noise prediction [n, Cp²]. With use_pose=false the injection is skipped.
  Tensor<T> forward_tokens(const Tensor<T>& tokens, const Tensor<T>& pose_tokens,
                           const std::vector<TokenPosition>& positions, double t,
                           bool use_pose = true) const;

  /// Marks parameters trainable per mode and reports the trainable share of
  /// all backbone parameters (pose encoder included).
  FreezeReport freeze_partition(FreezeMode mode);

  std::size_t parameter_count() const;

  /// Same weights, no shared storage.
  DiTModel clone() const;

 private:
  DiTModel() = default;
  void register_parameters();

  ModelConfig config_;
  DiTWeights<T> weights_;
  std::vector<Parameter<T>> params_;
};

/// Patchifies a conditioned sequence, runs the model and returns the noise
/// prediction for every frame, [G+T, C, H, W]. Throws ContractError when the
/// per-frame channel count is not 2C+1.
VideoTensor predict_noise(const DiTModel<float>& model, const ConditionedSequence& seq, double t,
                          bool use_pose = true);

extern template class DiTModel<float>;
extern template class DiTModel<double>;

}  // namespace catv2ton
