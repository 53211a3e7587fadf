#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "catv2ton/ops.hpp"
#include "catv2ton/tensor.hpp"

namespace catv2ton {

/// Frame sequence laid out as [frames, channels, height, width] (f32).
/// Imagery lives in [-1, 1]; masks are {0, 1}.
class VideoTensor {
 public:
  VideoTensor() = default;
  VideoTensor(std::size_t frames, std::size_t channels, std::size_t height, std::size_t width,
              float fill = 0.0f);
  explicit VideoTensor(Tensorf tensor);

  std::size_t frames() const { return frames_; }
  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t frame_size() const { return channels_ * height_ * width_; }
  std::size_t plane_size() const { return height_ * width_; }
  bool empty() const { return data_.empty(); }

  float& at(std::size_t t, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((t * channels_ + c) * height_ + h) * width_ + w];
  }
  float at(std::size_t t, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((t * channels_ + c) * height_ + h) * width_ + w];
  }

  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  /// Frames [begin, end).
  VideoTensor slice_frames(std::size_t begin, std::size_t end) const;
  /// Copies `src` into frames starting at `begin`.
  void write_frames(std::size_t begin, const VideoTensor& src);
  VideoTensor channel_range(std::size_t begin, std::size_t end) const;

  Tensorf tensor() const;
  Shape shape() const { return {frames_, channels_, height_, width_}; }

  bool operator==(const VideoTensor& other) const = default;

 private:
  std::size_t frames_ = 0;
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> data_;
};

/// One paired try-on example. Images have a single frame.
struct TryOnSample {
  std::string id;
  VideoTensor person;   // [T, C, H, W]
  VideoTensor mask;     // [T, 1, H, W], binary
  VideoTensor pose;     // [T, P, H, W]
  VideoTensor garment;  // [1, C, H, W]
  VideoTensor target;   // ground-truth try-on result, [T, C, H, W]

  std::size_t frames() const { return person.frames(); }
  bool is_image() const { return person.frames() == 1; }
};

/// Concatenates along the frame axis.
VideoTensor concat_frames(const std::vector<VideoTensor>& parts);

/// Throws ContractError if any value is not exactly 0 or 1.
void require_binary(const VideoTensor& mask, const char* what);

enum class FrameRole { garment, person, prompt };

/// Garment and person frames stacked along time, each frame carrying
/// [latent C | condition C | mask 1] channels, plus aligned pose maps.
struct ConditionedSequence {
  std::size_t image_channels = 0;  // C
  std::size_t garment_frames = 0;  // G
  VideoTensor frames;              // [G+T, 2C+1, H, W]
  VideoTensor pose;                // [G+T, P, H, W]
  std::vector<FrameRole> roles;

  std::size_t total_frames() const { return frames.frames(); }
  std::size_t person_frames() const { return frames.frames() - garment_frames; }
  std::size_t prompt_count() const;

  std::size_t latent_begin() const { return 0; }
  std::size_t condition_begin() const { return image_channels; }
  std::size_t mask_channel() const { return 2 * image_channels; }

  /// Latent channels of the person frames, [T, C, H, W].
  VideoTensor person_latents() const;
  void set_person_latents(const VideoTensor& latents);
};

/// person ⊙ (1 - mask). mask has one channel broadcast over person's channels.
VideoTensor apply_agnostic_mask(const VideoTensor& person, const VideoTensor& mask);

/// Builds the temporally concatenated sequence. The first `prompt_count`
/// person frames are exposed unmasked with all-zero mask channels. The
/// person latent slots hold the clean person frames; callers overwrite
/// them with noised latents. Garment latent slots hold the clean garment.
ConditionedSequence assemble_sequence(const VideoTensor& person, const VideoTensor& mask,
                                      const VideoTensor& pose, const VideoTensor& garment,
                                      std::size_t prompt_count);

struct SplitSequence {
  VideoTensor person;   // person latent slots
  VideoTensor mask;     // person mask channels
  VideoTensor garment;  // garment latent slots
};

SplitSequence split_sequence(const ConditionedSequence& seq);

/// Zeroes the garment frames' image content (latent and condition slots).
/// Person frames are untouched; shapes are unchanged.
ConditionedSequence drop_garment(const ConditionedSequence& seq);

struct Patchified {
  Tensorf tokens;  // [F*(H/p)*(W/p), Ch*p*p]
  std::vector<TokenPosition> positions;
};

/// Splits every frame into p×p patches, frame-major then row-major. Token
/// features are ordered channel, patch row, patch column. Positions are
/// (frame index, patch row, patch col).
Patchified patchify(const VideoTensor& frames, std::size_t patch);

/// Inverse of patchify for tokens [F*(H/p)*(W/p), Ch*p*p].
VideoTensor unpatchify(const Tensorf& tokens, std::size_t frames, std::size_t channels,
                       std::size_t height, std::size_t width, std::size_t patch);

std::vector<TokenPosition> patch_positions(std::size_t frames, std::size_t height,
                                           std::size_t width, std::size_t patch);

}  // namespace catv2ton
