#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "catv2ton/backbone.hpp"
#include "catv2ton/conditioning.hpp"
#include "catv2ton/diffusion.hpp"

namespace catv2ton {

/// One resolution stage of a progressive schedule; frames are box-downsampled
/// by `downsample` before training for `steps` steps.
struct TrainStage {
  std::size_t downsample = 1;
  std::size_t steps = 0;

  bool operator==(const TrainStage&) const = default;
};

struct TrainConfig {
  double lr = 1e-5;
  double clip_norm = 1.0;
  double garment_dropout = 0.10;
  double exposure_prob = 0.20;
  std::size_t exposure_k_max = 0;  // 0: floor(T/4), at least 1
  std::size_t batch_size = 1;
  std::size_t steps = 100;
  FreezeMode freeze_mode = FreezeMode::selective;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Image and video batches are interleaved in runs of this many each.
  std::size_t mix_images = 1;
  std::size_t mix_videos = 1;
  bool use_pose = true;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::size_t diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<TrainStage> stages;  // empty: one stage at native resolution for `steps`

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  std::size_t total_steps() const;

  bool operator==(const TrainConfig&) const = default;
};

/// AdamW moments. Buffers are allocated only for trainable parameters.
struct OptimizerState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  std::size_t step = 0;

  bool has_moments(std::size_t index) const { return index < m.size() && !m[index].empty(); }
};

struct OptimizerStepStats {
  double grad_norm = 0.0;  // before clipping
  double clip_scale = 1.0;
};

/// Global-norm clipping over trainable gradients (in place), then one AdamW
/// update with bias correction and decoupled weight decay. Frozen parameters
/// are never touched. A non-finite gradient aborts with the parameter's name.
OptimizerStepStats optimizer_step(std::vector<Parameter<float>>& params, OptimizerState& state,
                                  const TrainConfig& cfg);

struct AugmentedSequence {
  ConditionedSequence sequence;
  bool garment_dropped = false;
  std::size_t prompt_count = 0;
};

/// Garment-condition dropout and (videos only) prompt-frame exposure, drawn
/// independently.
AugmentedSequence augment_sample(const TryOnSample& sample, Rng& rng, const TrainConfig& cfg);

/// Box-downsamples every stream; masks are re-binarized at 0.5.
TryOnSample downsample_sample(const TryOnSample& sample, std::size_t factor);

struct TrainLogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_step;
  std::function<void(std::size_t step, const DiTModel<float>&)> on_checkpoint;
};

struct TrainResult {
  std::vector<TrainLogRow> trace;
  FreezeReport freeze;
};

/// Runs every stage of `cfg` on `dataset`. Deterministic for a fixed seed.
TrainResult train(const std::vector<TryOnSample>& dataset, DiTModel<float>& model,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Order-sensitive FNV-1a over the raw bytes of every frozen parameter.
std::uint64_t frozen_checksum(const std::vector<Parameter<float>>& params);

std::string loss_trace_csv(const std::vector<TrainLogRow>& trace);

}  // namespace catv2ton
