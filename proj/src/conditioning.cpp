#include "catv2ton/conditioning.hpp"

#include <algorithm>
#include <string>

namespace catv2ton {

VideoTensor::VideoTensor(std::size_t frames, std::size_t channels, std::size_t height,
                         std::size_t width, float fill)
    : frames_(frames),
      channels_(channels),
      height_(height),
      width_(width),
      data_(frames * channels * height * width, fill) {}

VideoTensor::VideoTensor(Tensorf tensor) {
  if (tensor.rank() != 4) {
    throw DimensionError("VideoTensor needs [T,C,H,W], got " + shape_str(tensor.shape()));
  }
  frames_ = tensor.dim(0);
  channels_ = tensor.dim(1);
  height_ = tensor.dim(2);
  width_ = tensor.dim(3);
  data_.assign(tensor.data().begin(), tensor.data().end());
}

VideoTensor VideoTensor::slice_frames(std::size_t begin, std::size_t end) const {
  if (begin > end || end > frames_) {
    throw RangeError("slice_frames: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside " + std::to_string(frames_) + " frames");
  }
  VideoTensor out(end - begin, channels_, height_, width_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * frame_size()),
            data_.begin() + static_cast<std::ptrdiff_t>(end * frame_size()), out.data_.begin());
  return out;
}

void VideoTensor::write_frames(std::size_t begin, const VideoTensor& src) {
  if (src.channels_ != channels_ || src.height_ != height_ || src.width_ != width_ ||
      begin + src.frames_ > frames_) {
    throw DimensionError("write_frames: " + shape_str(src.shape()) + " at frame " +
                         std::to_string(begin) + " does not fit " + shape_str(shape()));
  }
  std::copy(src.data_.begin(), src.data_.end(),
            data_.begin() + static_cast<std::ptrdiff_t>(begin * frame_size()));
}

VideoTensor VideoTensor::channel_range(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > channels_) {
    throw RangeError("channel_range outside " + std::to_string(channels_) + " channels");
  }
  VideoTensor out(frames_, end - begin, height_, width_);
  const std::size_t plane = plane_size();
  for (std::size_t t = 0; t < frames_; ++t) {
    for (std::size_t c = begin; c < end; ++c) {
      const auto src = data_.begin() + static_cast<std::ptrdiff_t>((t * channels_ + c) * plane);
      std::copy(src, src + static_cast<std::ptrdiff_t>(plane),
                out.data_.begin() +
                    static_cast<std::ptrdiff_t>((t * out.channels_ + (c - begin)) * plane));
    }
  }
  return out;
}

Tensorf VideoTensor::tensor() const { return Tensorf(shape(), data_); }

VideoTensor concat_frames(const std::vector<VideoTensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_frames: no inputs");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.channels() != parts[0].channels() || p.height() != parts[0].height() ||
        p.width() != parts[0].width()) {
      throw DimensionError("concat_frames: " + shape_str(p.shape()) + " vs " +
                           shape_str(parts[0].shape()));
    }
    total += p.frames();
  }
  VideoTensor out(total, parts[0].channels(), parts[0].height(), parts[0].width());
  std::size_t at = 0;
  for (const auto& p : parts) {
    out.write_frames(at, p);
    at += p.frames();
  }
  return out;
}

void require_binary(const VideoTensor& mask, const char* what) {
  for (std::size_t i = 0; i < mask.values().size(); ++i) {
    const float v = mask.values()[i];
    if (v != 0.0f && v != 1.0f) {
      throw ContractError(std::string(what) + ": mask value " + std::to_string(v) +
                          " at index " + std::to_string(i) + " is not binary");
    }
  }
}

std::size_t ConditionedSequence::prompt_count() const {
  return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), FrameRole::prompt));
}

VideoTensor ConditionedSequence::person_latents() const {
  return frames.slice_frames(garment_frames, frames.frames())
      .channel_range(latent_begin(), latent_begin() + image_channels);
}

void ConditionedSequence::set_person_latents(const VideoTensor& latents) {
  if (latents.frames() != person_frames() || latents.channels() != image_channels ||
      latents.height() != frames.height() || latents.width() != frames.width()) {
    throw DimensionError("set_person_latents: " + shape_str(latents.shape()) +
                         " does not match person slots of " + shape_str(frames.shape()));
  }
  const std::size_t plane = frames.plane_size();
  for (std::size_t t = 0; t < latents.frames(); ++t) {
    for (std::size_t c = 0; c < image_channels; ++c) {
      const float* src = latents.values().data() + (t * image_channels + c) * plane;
      float* dst = frames.values().data() +
                   ((garment_frames + t) * frames.channels() + latent_begin() + c) * plane;
      std::copy(src, src + plane, dst);
    }
  }
}

VideoTensor apply_agnostic_mask(const VideoTensor& person, const VideoTensor& mask) {
  if (mask.channels() != 1 || mask.frames() != person.frames() ||
      mask.height() != person.height() || mask.width() != person.width()) {
    throw DimensionError("apply_agnostic_mask: mask " + shape_str(mask.shape()) +
                         " does not match person " + shape_str(person.shape()));
  }
  require_binary(mask, "apply_agnostic_mask");
  VideoTensor out = person;
  for (std::size_t t = 0; t < person.frames(); ++t)
    for (std::size_t c = 0; c < person.channels(); ++c)
      for (std::size_t h = 0; h < person.height(); ++h)
        for (std::size_t w = 0; w < person.width(); ++w)
          if (mask.at(t, 0, h, w) != 0.0f) out.at(t, c, h, w) = 0.0f;
  return out;
}

ConditionedSequence assemble_sequence(const VideoTensor& person, const VideoTensor& mask,
                                      const VideoTensor& pose, const VideoTensor& garment,
                                      std::size_t prompt_count) {
  const std::size_t T = person.frames(), C = person.channels();
  const std::size_t H = person.height(), W = person.width();
  if (prompt_count > T) {
    throw RangeError("assemble_sequence: prompt count " + std::to_string(prompt_count) +
                     " exceeds " + std::to_string(T) + " person frames");
  }
  if (garment.channels() != C || garment.height() != H || garment.width() != W ||
      garment.frames() == 0) {
    throw DimensionError("assemble_sequence: garment " + shape_str(garment.shape()) +
                         " does not match person " + shape_str(person.shape()));
  }
  if (pose.frames() != T || pose.height() != H || pose.width() != W) {
    throw DimensionError("assemble_sequence: pose " + shape_str(pose.shape()) +
                         " does not match person " + shape_str(person.shape()));
  }
  const VideoTensor masked = apply_agnostic_mask(person, mask);
  const std::size_t G = garment.frames();

  ConditionedSequence seq;
  seq.image_channels = C;
  seq.garment_frames = G;
  seq.frames = VideoTensor(G + T, 2 * C + 1, H, W);
  seq.pose = VideoTensor(G + T, pose.channels(), H, W);
  seq.roles.assign(G, FrameRole::garment);

  auto& f = seq.frames;
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          const float v = garment.at(g, c, h, w);
          f.at(g, c, h, w) = v;
          f.at(g, C + c, h, w) = v;
        }
  }
  for (std::size_t t = 0; t < T; ++t) {
    const bool prompt = t < prompt_count;
    seq.roles.push_back(prompt ? FrameRole::prompt : FrameRole::person);
    const std::size_t fi = G + t;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          f.at(fi, c, h, w) = person.at(t, c, h, w);
          f.at(fi, C + c, h, w) = prompt ? person.at(t, c, h, w) : masked.at(t, c, h, w);
        }
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) f.at(fi, 2 * C, h, w) = prompt ? 0.0f : mask.at(t, 0, h, w);
  }
  seq.pose.write_frames(G, pose);
  return seq;
}

SplitSequence split_sequence(const ConditionedSequence& seq) {
  const std::size_t G = seq.garment_frames, C = seq.image_channels;
  SplitSequence out;
  const VideoTensor person_part = seq.frames.slice_frames(G, seq.total_frames());
  out.person = person_part.channel_range(0, C);
  out.mask = person_part.channel_range(2 * C, 2 * C + 1);
  out.garment = seq.frames.slice_frames(0, G).channel_range(0, C);
  return out;
}

ConditionedSequence drop_garment(const ConditionedSequence& seq) {
  ConditionedSequence out = seq;
  const std::size_t plane = seq.frames.plane_size();
  for (std::size_t g = 0; g < seq.garment_frames; ++g) {
    float* frame = out.frames.values().data() + g * out.frames.frame_size();
    std::fill(frame, frame + 2 * seq.image_channels * plane, 0.0f);
  }
  return out;
}

std::vector<TokenPosition> patch_positions(std::size_t frames, std::size_t height,
                                           std::size_t width, std::size_t patch) {
  const std::size_t ph = height / patch, pw = width / patch;
  std::vector<TokenPosition> pos;
  pos.reserve(frames * ph * pw);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t r = 0; r < ph; ++r)
      for (std::size_t c = 0; c < pw; ++c)
        pos.push_back({static_cast<int>(t), static_cast<int>(r), static_cast<int>(c)});
  return pos;
}

Patchified patchify(const VideoTensor& frames, std::size_t patch) {
  const std::size_t F = frames.frames(), Ch = frames.channels();
  const std::size_t H = frames.height(), W = frames.width();
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw ConfigError("patchify: " + std::to_string(H) + "x" + std::to_string(W) +
                      " not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t ph = H / patch, pw = W / patch, dim = Ch * patch * patch;
  std::vector<float> tokens(F * ph * pw * dim);
  std::size_t row = 0;
  for (std::size_t t = 0; t < F; ++t)
    for (std::size_t r = 0; r < ph; ++r)
      for (std::size_t c = 0; c < pw; ++c, ++row) {
        float* dst = tokens.data() + row * dim;
        for (std::size_t ch = 0; ch < Ch; ++ch)
          for (std::size_t y = 0; y < patch; ++y)
            for (std::size_t x = 0; x < patch; ++x)
              *dst++ = frames.at(t, ch, r * patch + y, c * patch + x);
      }
  return {Tensorf({F * ph * pw, dim}, std::move(tokens)), patch_positions(F, H, W, patch)};
}

VideoTensor unpatchify(const Tensorf& tokens, std::size_t frames, std::size_t channels,
                       std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("unpatchify: extents not divisible by patch size");
  }
  const std::size_t ph = height / patch, pw = width / patch, dim = channels * patch * patch;
  if (tokens.rank() != 2 || tokens.dim(0) != frames * ph * pw || tokens.dim(1) != dim) {
    throw DimensionError("unpatchify: tokens " + shape_str(tokens.shape()) +
                         " do not match frame grid " +
                         shape_str({frames, channels, height, width}));
  }
  VideoTensor out(frames, channels, height, width);
  const auto td = tokens.data();
  std::size_t row = 0;
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t r = 0; r < ph; ++r)
      for (std::size_t c = 0; c < pw; ++c, ++row) {
        const float* src = td.data() + row * dim;
        for (std::size_t ch = 0; ch < channels; ++ch)
          for (std::size_t y = 0; y < patch; ++y)
            for (std::size_t x = 0; x < patch; ++x)
              out.at(t, ch, r * patch + y, c * patch + x) = *src++;
      }
  return out;
}

}  // namespace catv2ton
