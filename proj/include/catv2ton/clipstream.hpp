#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "catv2ton/backbone.hpp"
#include "catv2ton/conditioning.hpp"
#include "catv2ton/diffusion.hpp"

namespace catv2ton {

struct ClipWindow {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t prompt_count = 0;

  std::size_t end() const { return start + length; }
  bool operator==(const ClipWindow&) const = default;
};

struct ClipPlan {
  std::size_t total_frames = 0;
  std::size_t clip_length = 0;
  std::size_t overlap = 0;
  std::vector<ClipWindow> windows;  // generation order
};

/// Fixed-length windows with stride L-k. The last window is pulled back to
/// end at T, which enlarges its prompt region to the realized overlap.
ClipPlan plan_clips(std::size_t total_frames, std::size_t clip_length, std::size_t overlap);

/// Default inference overlap, floor(L/4).
inline std::size_t default_overlap(std::size_t clip_length) { return clip_length / 4; }

/// Conditioning for one window with carried-over prompt frames.
struct FeatureClip {
  ConditionedSequence sequence;
  std::size_t prompt_count = 0;
  VideoTensor reference;  // [prompt_count, C, H, W], the previously generated prompt frames
};

/// Builds the window's sequence. Prompt frames take their content from
/// `produced` (frames generated so far, indexed from 0) and get all-zero
/// masks. `prompt_bias` is added to the prompt content the model sees but
/// not to the stored reference.
FeatureClip carry_prompts(const VideoTensor& produced, const ClipWindow& window,
                          const VideoTensor& person, const VideoTensor& mask,
                          const VideoTensor& pose, const VideoTensor& garment,
                          float prompt_bias = 0.0f);

/// Adaptive clip normalization. Per channel, statistics of x over the frames
/// in `prompt_idx` (and all pixels) are matched to those of `reference`
/// (one frame per prompt index); the affine map is applied to all of x.
template <typename T>
Tensor<T> adacn(const Tensor<T>& x, const Tensor<T>& reference,
                const std::vector<std::size_t>& prompt_idx, double eps = 1e-6);
VideoTensor adacn(const VideoTensor& x, const VideoTensor& reference,
                  const std::vector<std::size_t>& prompt_idx, double eps = 1e-6);

/// Output frame j comes from the first window holding j as a non-prompt frame.
VideoTensor stitch(const std::vector<VideoTensor>& clips, const ClipPlan& plan);

struct LongVideoInputs {
  VideoTensor person;   // [T, C, H, W]
  VideoTensor mask;     // [T, 1, H, W]
  VideoTensor pose;     // [T, P, H, W]
  VideoTensor garment;  // [1, C, H, W]
};

struct LongVideoOptions {
  std::size_t clip_length = 32;
  std::size_t overlap = 8;
  SampleOptions sampler;  // window i samples with seed sampler.seed + i
  bool use_adacn = true;
  // Stress fixture: bias added to the prompt content of window `bias_window`.
  float prompt_bias = 0.0f;
  std::size_t bias_window = 1;
};

struct LongVideoResult {
  VideoTensor video;  // [T, C, H, W]
  ClipPlan plan;
  std::vector<VideoTensor> clips;  // per-window outputs after normalization
};

LongVideoResult generate_long(const DiTModel<float>& model, const NoiseSchedule& schedule,
                              const LongVideoInputs& inputs, const LongVideoOptions& options);

}  // namespace catv2ton
