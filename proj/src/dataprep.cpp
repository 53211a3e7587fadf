#include "catv2ton/dataprep.hpp"

#include <cmath>
#include <numbers>

#include "catv2ton/rng.hpp"
#include "catv2ton/stats.hpp"

namespace catv2ton {

VideoTensor smooth_mask_3d(const VideoTensor& masks, const SmoothingConfig& cfg) {
  require_binary(masks, "smooth_mask_3d");
  if (!(cfg.threshold > 0.0 && cfg.threshold <= 1.0)) {
    throw ConfigError("smooth_mask_3d: threshold must be in (0, 1]");
  }
  const std::size_t T = masks.frames(), C = masks.channels(), H = masks.height(), W = masks.width();
  VideoTensor out(T, C, H, W);
  const auto thr = static_cast<float>(cfg.threshold);
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<float> plane(T * H * W);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < H * W; ++k) plane[t * H * W + k] = masks.values()[(t * C + c) * H * W + k];
    const Tensorf pooled = avg_pool_3d(Tensorf({T, H, W}, std::move(plane)), cfg.kernel);
    const auto pd = pooled.data();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t k = 0; k < H * W; ++k)
        out.values()[(t * C + c) * H * W + k] = pd[t * H * W + k] >= thr ? 1.0f : 0.0f;
  }
  return out;
}

std::vector<FrameSegment> filter_frontal_runs(const OrientationTrack& track, std::size_t min_run) {
  std::vector<FrameSegment> out;
  const auto& labels = track.labels;
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] != Orientation::frontal) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < labels.size() && labels[j] == Orientation::frontal) ++j;
    if (j - i > min_run) out.push_back({i, j - i});
    i = j;
  }
  return out;
}

OrientationTrack parse_orientation_labels(const std::string& text, std::string video_id) {
  OrientationTrack track{std::move(video_id), {}};
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "F") {
      track.labels.push_back(Orientation::frontal);
    } else if (line == "B") {
      track.labels.push_back(Orientation::back);
    } else {
      throw ParseError("orientation labels: expected 'F' or 'B', got '" + line + "'", pos);
    }
    pos = end + 1;
  }
  return track;
}

std::string format_orientation_labels(const OrientationTrack& track) {
  std::string out;
  out.reserve(track.labels.size() * 2);
  for (auto l : track.labels) {
    out += l == Orientation::frontal ? 'F' : 'B';
    out += '\n';
  }
  return out;
}

namespace {

using Rgb = std::array<std::uint8_t, 3>;

Rgb random_color(Rng& rng, int lo, int hi) {
  return {static_cast<std::uint8_t>(rng.uniform_int(lo, hi)),
          static_cast<std::uint8_t>(rng.uniform_int(lo, hi)),
          static_cast<std::uint8_t>(rng.uniform_int(lo, hi))};
}

int color_distance(const Rgb& a, const Rgb& b) {
  int d = 0;
  for (int c = 0; c < 3; ++c) d += std::abs(int(a[c]) - int(b[c]));
  return d;
}

void put(VideoTensor& v, std::size_t t, std::size_t h, std::size_t w, const Rgb& c) {
  for (std::size_t k = 0; k < 3; ++k) v.at(t, k, h, w) = pixel_to_unit(c[k]);
}

std::size_t iround(double v) { return static_cast<std::size_t>(std::lround(std::max(0.0, v))); }

}  // namespace

std::uint64_t synthetic_sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  // splitmix64 finalizer over (seed, index)
  std::uint64_t z = dataset_seed * 0x9E3779B97F4A7C15ULL + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SyntheticSample make_synthetic_sample(std::uint64_t seed, std::size_t frames, std::size_t height,
                                      std::size_t width) {
  if (frames == 0 || height < 8 || width < 8) throw ConfigError("synthetic sample: extent too small");
  Rng rng(seed);
  const Rgb background = random_color(rng, 20, 80);
  const Rgb skin = random_color(rng, 120, 220);
  Rgb c1 = random_color(rng, 0, 255);
  Rgb c2 = random_color(rng, 0, 255);
  while (color_distance(c1, c2) < 180) c2 = random_color(rng, 0, 255);
  const int pattern = static_cast<int>(rng.uniform_int(0, 2));  // stripes across, stripes down, checker
  const auto period = static_cast<std::size_t>(rng.uniform_int(2, 4));
  const double H = static_cast<double>(height), W = static_cast<double>(width);
  const double amplitude = rng.uniform(1.0, std::max(1.0, W / 8.0));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double motion_period = rng.uniform(8.0, 24.0);

  const std::size_t gh = iround(0.36 * H), gw = iround(0.40 * W);
  auto texture = [&](std::size_t u, std::size_t v) -> const Rgb& {
    bool first = false;
    switch (pattern) {
      case 0: first = (u / period) % 2 == 0; break;
      case 1: first = (v / period) % 2 == 0; break;
      default: first = ((u / period) + (v / period)) % 2 == 0; break;
    }
    return first ? c1 : c2;
  };

  SyntheticSample out;
  out.seed = seed;
  TryOnSample& s = out.sample;
  s.id = "synthetic";
  s.target = VideoTensor(frames, 3, height, width);
  s.mask = VideoTensor(frames, 1, height, width);
  s.pose = VideoTensor(frames, 2, height, width);
  s.garment = VideoTensor(1, 3, height, width);

  const double body_top = 0.28 * H, half_width = 0.22 * W;
  const double head_row = 0.15 * H, head_radius = std::max(1.0, 0.11 * H);
  for (std::size_t t = 0; t < frames; ++t) {
    const double cx =
        W / 2.0 + amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / motion_period + phase);
    TorsoBox box;
    box.top = iround(0.34 * H);
    box.bottom = box.top + gh;
    box.left = iround(cx - static_cast<double>(gw) / 2.0);
    box.right = std::min(width, box.left + gw);
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const double y = static_cast<double>(r) + 0.5, x = static_cast<double>(c) + 0.5;
        const bool in_body = y >= body_top && y < 0.97 * H && std::abs(x - cx) < half_width;
        const bool in_head = (y - head_row) * (y - head_row) + (x - cx) * (x - cx) < head_radius * head_radius;
        const bool in_garment = r >= box.top && r < box.bottom && c >= box.left && c < box.right;
        if (in_garment) {
          put(s.target, t, r, c, texture(r - box.top, c - box.left));
        } else if (in_body || in_head) {
          put(s.target, t, r, c, skin);
        } else {
          put(s.target, t, r, c, background);
        }
        if (in_body || in_head || in_garment) {
          s.pose.at(t, 0, r, c) = static_cast<float>(static_cast<double>(r) / (H - 1.0) * 2.0 - 1.0);
          s.pose.at(t, 1, r, c) = static_cast<float>(std::clamp((x - cx) / half_width, -1.0, 1.0));
        }
        // Agnostic mask: garment region dilated by one pixel.
        const bool near = r + 1 >= box.top && r < box.bottom + 1 && c + 1 >= box.left && c < box.right + 1;
        s.mask.at(t, 0, r, c) = near ? 1.0f : 0.0f;
      }
    }
    out.garment_boxes.push_back(box);
  }
  s.person = s.target;

  const Rgb flat{230, 230, 230};
  const std::size_t top = (height - gh) / 2, left = (width - gw) / 2;
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const bool in = r >= top && r < top + gh && c >= left && c < left + gw;
      put(s.garment, 0, r, c, in ? texture(r - top, c - left) : flat);
    }
  return out;
}

namespace {

std::string sample_id(char kind, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%03zu", kind, i);
  return buf;
}

struct PlannedSample {
  ManifestEntry entry;
  std::size_t frames;
};

std::vector<PlannedSample> plan_dataset(const SynthConfig& cfg) {
  if (cfg.patch == 0 || cfg.height % cfg.patch != 0 || cfg.width % cfg.patch != 0) {
    throw ConfigError("synth: " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                      " not divisible by patch " + std::to_string(cfg.patch));
  }
  if (cfg.videos + cfg.images == 0) throw ConfigError("synth: no samples requested");
  if (cfg.videos > 0 && cfg.frames < 2) throw ConfigError("synth: video samples need at least 2 frames");
  std::vector<PlannedSample> out;
  auto add = [&](char kind, std::size_t count, std::size_t frames, std::size_t offset) {
    for (std::size_t i = 0; i < count; ++i) {
      ManifestEntry e;
      e.id = sample_id(kind, i);
      e.dir = e.id;
      e.frames = frames;
      e.seed = synthetic_sample_seed(cfg.seed, offset + i);
      e.garment = e.id + "/garment.ppm";
      if (count > 1) e.unpaired_garment = sample_id(kind, (i + 1) % count) + "/garment.ppm";
      out.push_back({e, frames});
    }
  };
  add('v', cfg.videos, cfg.frames, 0);
  add('i', cfg.images, 1, cfg.videos);
  return out;
}

}  // namespace

std::vector<TryOnSample> synthetic_dataset(const SynthConfig& cfg) {
  std::vector<TryOnSample> out;
  for (const auto& p : plan_dataset(cfg)) {
    TryOnSample s = make_synthetic_sample(p.entry.seed, p.frames, cfg.height, cfg.width).sample;
    s.id = p.entry.id;
    out.push_back(std::move(s));
  }
  return out;
}

Manifest make_synthetic_dataset(const std::filesystem::path& root, const SynthConfig& cfg) {
  Manifest m;
  m.seed = cfg.seed;
  m.height = cfg.height;
  m.width = cfg.width;
  m.pose_channels = 2;
  for (const auto& p : plan_dataset(cfg)) {
    TryOnSample s = make_synthetic_sample(p.entry.seed, p.frames, cfg.height, cfg.width).sample;
    s.id = p.entry.id;
    write_sample(root, p.entry, s);
    m.samples.push_back(p.entry);
  }
  write_text(root / "manifest.json", m.to_json());
  return m;
}

VideoTensor flickering_mask_fixture(std::uint64_t seed, std::size_t frames, std::size_t height,
                                    std::size_t width) {
  Rng rng(seed);
  VideoTensor out(frames, 1, height, width);
  const std::size_t top = height / 4, bottom = height - height / 4;
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t left = width / 4 + (t / 4) % 3;
    const std::size_t right = left + width / 2;
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) {
        const bool inside = r >= top && r < bottom && c >= left && c < right;
        const bool edge = inside && (r == top || r + 1 == bottom || c == left || c + 1 == right);
        const bool rim = !inside && r + 1 >= top && r <= bottom && c + 1 >= left && c <= right;
        float v = inside ? 1.0f : 0.0f;
        if ((edge || rim) && rng.bernoulli(0.3)) v = 1.0f - v;
        out.at(t, 0, r, c) = v;
      }
    if (rng.bernoulli(0.3)) {
      const auto r = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(height) - 2));
      const auto c = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(width) - 2));
      for (std::size_t dr = 0; dr < 2; ++dr)
        for (std::size_t dc = 0; dc < 2; ++dc) out.at(t, 0, r + dr, c + dc) = 1.0f;
    }
  }
  return out;
}

}  // namespace catv2ton
