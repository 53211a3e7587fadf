#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "catv2ton/conditioning.hpp"
#include "catv2ton/io.hpp"

namespace catv2ton {

struct SmoothingConfig {
  std::array<std::size_t, 3> kernel{3, 5, 5};  // (t, h, w), odd
  double threshold = 0.3;
};

/// Spatio-temporal box average (replicate padding) followed by
/// re-binarization at `threshold`. Works channel by channel.
VideoTensor smooth_mask_3d(const VideoTensor& masks, const SmoothingConfig& cfg = {});

enum class Orientation { frontal, back };

struct OrientationTrack {
  std::string video_id;
  std::vector<Orientation> labels;
};

struct FrameSegment {
  std::size_t start = 0;
  std::size_t length = 0;

  bool operator==(const FrameSegment&) const = default;
};

/// Maximal frontal runs strictly longer than `min_run`, in order.
std::vector<FrameSegment> filter_frontal_runs(const OrientationTrack& track, std::size_t min_run = 24);

/// One label per line, 'F' or 'B'. A trailing newline is optional.
OrientationTrack parse_orientation_labels(const std::string& text, std::string video_id = {});
std::string format_orientation_labels(const OrientationTrack& track);

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t videos = 8;
  std::size_t images = 8;
  std::size_t frames = 16;
  std::size_t height = 32;
  std::size_t width = 24;
  std::size_t patch = 4;
};

/// Geometry of one synthetic frame, exposed for containment tests.
struct TorsoBox {
  std::size_t top = 0, left = 0, bottom = 0, right = 0;  // half-open
};

struct SyntheticSample {
  TryOnSample sample;
  std::vector<TorsoBox> garment_boxes;  // per frame, where the garment is worn
  std::uint64_t seed = 0;
};

/// Deterministic procedural try-on pair: a colored figure translating
/// sinusoidally and wearing a two-color textured garment. The person
/// stream equals the ground truth (paired setting). Pose maps carry
/// normalized (row, col) coordinates inside the figure, zero elsewhere.
SyntheticSample make_synthetic_sample(std::uint64_t seed, std::size_t frames, std::size_t height,
                                      std::size_t width);

std::uint64_t synthetic_sample_seed(std::uint64_t dataset_seed, std::size_t index);

/// Writes `root/manifest.json` and one directory per sample. Videos come
/// first (ids v000..), then single-frame images (i000..).
Manifest make_synthetic_dataset(const std::filesystem::path& root, const SynthConfig& cfg);

/// In-memory counterpart of make_synthetic_dataset.
std::vector<TryOnSample> synthetic_dataset(const SynthConfig& cfg);

/// Mask video with boundary pixels toggling frame to frame and sporadic
/// single-frame specks, for smoothing tests.
VideoTensor flickering_mask_fixture(std::uint64_t seed, std::size_t frames = 24,
                                    std::size_t height = 32, std::size_t width = 24);

}  // namespace catv2ton
