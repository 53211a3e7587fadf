#include "catv2ton/clipstream.hpp"

#include <cmath>
#include <numeric>

namespace catv2ton {

ClipPlan plan_clips(std::size_t total_frames, std::size_t clip_length, std::size_t overlap) {
  if (total_frames == 0) throw ConfigError("plan_clips: need at least one frame");
  if (clip_length == 0) throw ConfigError("plan_clips: clip length must be >= 1");
  if (overlap >= clip_length) {
    throw ConfigError("plan_clips: overlap " + std::to_string(overlap) + " must be < clip length " +
                      std::to_string(clip_length));
  }
  ClipPlan plan{total_frames, clip_length, overlap, {}};
  if (total_frames <= clip_length) {
    plan.windows.push_back({0, total_frames, 0});
    return plan;
  }
  plan.windows.push_back({0, clip_length, 0});
  const std::size_t stride = clip_length - overlap;
  while (plan.windows.back().end() < total_frames) {
    const ClipWindow& prev = plan.windows.back();
    std::size_t start = prev.start + stride;
    if (start + clip_length > total_frames) start = total_frames - clip_length;
    plan.windows.push_back({start, clip_length, prev.end() - start});
  }
  return plan;
}

FeatureClip carry_prompts(const VideoTensor& produced, const ClipWindow& window,
                          const VideoTensor& person, const VideoTensor& mask,
                          const VideoTensor& pose, const VideoTensor& garment, float prompt_bias) {
  if (window.end() > person.frames() || window.end() > mask.frames() ||
      window.end() > pose.frames()) {
    throw PlanningError("carry_prompts: window [" + std::to_string(window.start) + ", " +
                        std::to_string(window.end()) + ") exceeds the input length");
  }
  const std::size_t p = window.prompt_count;
  if (p > 0 && (produced.empty() || produced.frames() < window.start + p)) {
    throw PlanningError("carry_prompts: prompt frames [" + std::to_string(window.start) + ", " +
                        std::to_string(window.start + p) + ") not yet generated (have " +
                        std::to_string(produced.frames()) + ")");
  }
  FeatureClip clip;
  clip.prompt_count = p;
  VideoTensor content = person.slice_frames(window.start, window.end());
  if (p > 0) {
    clip.reference = produced.slice_frames(window.start, window.start + p);
    VideoTensor prompts = clip.reference;
    if (prompt_bias != 0.0f) {
      for (auto& v : prompts.values()) v += prompt_bias;
    }
    content.write_frames(0, prompts);
  }
  clip.sequence = assemble_sequence(content, mask.slice_frames(window.start, window.end()),
                                    pose.slice_frames(window.start, window.end()), garment, p);
  return clip;
}

template <typename T>
Tensor<T> adacn(const Tensor<T>& x, const Tensor<T>& reference,
                const std::vector<std::size_t>& prompt_idx, double eps) {
  if (prompt_idx.empty()) throw ContractError("adacn: empty prompt index set");
  if (x.rank() != 4 || reference.rank() != 4) {
    throw DimensionError("adacn: expected [L,C,H,W] clip and reference");
  }
  const std::size_t L = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (reference.dim(0) != prompt_idx.size() || reference.dim(1) != C ||
      reference.dim(2) * reference.dim(3) != plane) {
    throw DimensionError("adacn: reference " + shape_str(reference.shape()) +
                         " does not match clip " + shape_str(x.shape()) + " with " +
                         std::to_string(prompt_idx.size()) + " prompt frames");
  }
  for (std::size_t i : prompt_idx) {
    if (i >= L) throw RangeError("adacn: prompt index " + std::to_string(i) + " outside clip");
  }
  const auto xd = x.data();
  const auto yd = reference.data();
  const double n = static_cast<double>(prompt_idx.size() * plane);
  std::vector<T> out(xd.begin(), xd.end());
  for (std::size_t c = 0; c < C; ++c) {
    auto x_at = [&](std::size_t f, std::size_t k) { return static_cast<double>(xd[(f * C + c) * plane + k]); };
    auto y_at = [&](std::size_t f, std::size_t k) { return static_cast<double>(yd[(f * C + c) * plane + k]); };
    double mx = 0.0, my = 0.0;
    for (std::size_t j = 0; j < prompt_idx.size(); ++j)
      for (std::size_t k = 0; k < plane; ++k) {
        mx += x_at(prompt_idx[j], k);
        my += y_at(j, k);
      }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0;
    for (std::size_t j = 0; j < prompt_idx.size(); ++j)
      for (std::size_t k = 0; k < plane; ++k) {
        const double dx = x_at(prompt_idx[j], k) - mx;
        const double dy = y_at(j, k) - my;
        vx += dx * dx;
        vy += dy * dy;
      }
    double sx = std::sqrt(vx / n);
    const double sy = std::sqrt(vy / n);
    if (sx < eps) sx = eps;
    for (std::size_t f = 0; f < L; ++f)
      for (std::size_t k = 0; k < plane; ++k) {
        auto& v = out[(f * C + c) * plane + k];
        v = static_cast<T>(sy * (static_cast<double>(v) - mx) / sx + my);
      }
  }
  return Tensor<T>(x.shape(), std::move(out));
}

VideoTensor adacn(const VideoTensor& x, const VideoTensor& reference,
                  const std::vector<std::size_t>& prompt_idx, double eps) {
  return VideoTensor(adacn(x.tensor(), reference.tensor(), prompt_idx, eps));
}

template Tensor<float> adacn(const Tensor<float>&, const Tensor<float>&,
                             const std::vector<std::size_t>&, double);
template Tensor<double> adacn(const Tensor<double>&, const Tensor<double>&,
                              const std::vector<std::size_t>&, double);

VideoTensor stitch(const std::vector<VideoTensor>& clips, const ClipPlan& plan) {
  if (clips.size() != plan.windows.size()) {
    throw PlanningError("stitch: " + std::to_string(clips.size()) + " clips for " +
                        std::to_string(plan.windows.size()) + " windows");
  }
  if (clips.empty()) throw PlanningError("stitch: empty plan");
  const VideoTensor& first = clips.front();
  VideoTensor out(plan.total_frames, first.channels(), first.height(), first.width());
  std::size_t written = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const ClipWindow& w = plan.windows[i];
    if (clips[i].frames() != w.length) {
      throw PlanningError("stitch: clip " + std::to_string(i) + " has " +
                          std::to_string(clips[i].frames()) + " frames, window expects " +
                          std::to_string(w.length));
    }
    if (w.start + w.prompt_count != written) {
      throw PlanningError("stitch: window " + std::to_string(i) + " does not continue at frame " +
                          std::to_string(written));
    }
    out.write_frames(written, clips[i].slice_frames(w.prompt_count, w.length));
    written = w.end();
  }
  if (written != plan.total_frames) {
    throw PlanningError("stitch: covered " + std::to_string(written) + " of " +
                        std::to_string(plan.total_frames) + " frames");
  }
  return out;
}

LongVideoResult generate_long(const DiTModel<float>& model, const NoiseSchedule& schedule,
                              const LongVideoInputs& inputs, const LongVideoOptions& options) {
  LongVideoResult result;
  result.plan = plan_clips(inputs.person.frames(), options.clip_length, options.overlap);
  VideoTensor produced;
  for (std::size_t i = 0; i < result.plan.windows.size(); ++i) {
    const ClipWindow& w = result.plan.windows[i];
    const float bias = (i == options.bias_window) ? options.prompt_bias : 0.0f;
    FeatureClip clip =
        carry_prompts(produced, w, inputs.person, inputs.mask, inputs.pose, inputs.garment, bias);
    SampleOptions so = options.sampler;
    so.seed = options.sampler.seed + i;
    VideoTensor out = sample(model, schedule, clip.sequence, so);
    if (options.use_adacn && clip.prompt_count > 0) {
      std::vector<std::size_t> idx(clip.prompt_count);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      out = adacn(out, clip.reference, idx);
    }
    result.clips.push_back(out);
    // Frames generated so far, in stitched order.
    if (produced.empty()) {
      produced = out;
    } else {
      produced = concat_frames({produced, out.slice_frames(w.prompt_count, w.length)});
    }
  }
  result.video = stitch(result.clips, result.plan);
  return result;
}

}  // namespace catv2ton
