#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "catv2ton/backbone.hpp"
#include "catv2ton/conditioning.hpp"
#include "catv2ton/tensor.hpp"

namespace catv2ton {

namespace fs = std::filesystem;

// Pixel mappings. Imagery: v/255*2-1. Masks: v >= 128 -> 1.
inline float pixel_to_unit(std::uint8_t v) { return static_cast<float>(v) / 255.0f * 2.0f - 1.0f; }
std::uint8_t unit_to_pixel(float v);
inline float pixel_to_mask(std::uint8_t v) { return v >= 128 ? 1.0f : 0.0f; }
inline std::uint8_t mask_to_pixel(float v) { return v >= 0.5f ? 255 : 0; }

/// 8-bit raster, interleaved. channels is 3 (P6) or 1 (P5).
struct RasterImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  bool operator==(const RasterImage&) const = default;
};

/// Strict binary PNM: magic, single whitespace-separated decimal fields,
/// maxval 255, one whitespace byte, then exactly width*height*channels bytes.
/// Comments are not accepted.
RasterImage decode_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const RasterImage& image);

std::vector<std::uint8_t> read_file(const fs::path& path);
void write_file(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

RasterImage read_pnm(const fs::path& path);
void write_pnm(const fs::path& path, const RasterImage& image);

/// One RGB frame of `video` (values in [-1,1]) as an 8-bit raster.
RasterImage frame_to_image(const VideoTensor& video, std::size_t t);
/// One mask frame as an 8-bit gray raster (0 / 255).
RasterImage frame_to_mask(const VideoTensor& video, std::size_t t);
/// [1, C, H, W] imagery from a raster.
VideoTensor image_to_frame(const RasterImage& image);
/// [1, 1, H, W] binary mask from a gray raster.
VideoTensor mask_to_frame(const RasterImage& image);

// CVT1 tensors: "CVT1" | dtype u8 | ndim u8 | 2 zero bytes | ndim x u32 LE extents | LE payload.
std::vector<std::uint8_t> encode_cvt(const Tensorf& t);
std::vector<std::uint8_t> encode_cvt(const Tensord& t);
DType peek_cvt_dtype(std::span<const std::uint8_t> bytes);
/// Decodes a complete CVT1 buffer; trailing bytes are an error. The stored
/// dtype must match T.
template <typename T>
Tensor<T> decode_cvt(std::span<const std::uint8_t> bytes);

// CVTW checkpoints: "CVTW" | version u32 | u32 length + canonical config JSON |
// u32 count | count x (u16 name length + name + CVT1 tensor).
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::vector<std::uint8_t> encode_checkpoint(const DiTModel<float>& model);
/// Rebuilds the model from the embedded config; every parameter must be
/// present once, in order, with the expected shape.
DiTModel<float> decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const fs::path& path, const DiTModel<float>& model);
DiTModel<float> load_checkpoint(const fs::path& path);

enum class FrameKind { image, mask, tensor };

/// Writes frame_%05d.{ppm,pgm,cvt} into `dir` (created if missing).
void write_frames(const fs::path& dir, const VideoTensor& video, FrameKind kind);
/// Reads frame_00000 .. frame_N-1 from `dir`; numbering must be contiguous.
VideoTensor read_frames(const fs::path& dir, FrameKind kind);
/// A directory of frames or a single image/mask file.
VideoTensor read_frames_or_file(const fs::path& path, FrameKind kind);

struct ManifestEntry {
  std::string id;
  std::string dir;
  std::size_t frames = 0;
  std::uint64_t seed = 0;
  std::string garment;            // paired garment, relative to the dataset root
  std::string unpaired_garment;   // garment of another sample

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  int schema = 1;
  std::uint64_t seed = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t pose_channels = 0;
  std::vector<ManifestEntry> samples;

  std::string to_json() const;
  static Manifest from_json(const std::string& text);
  bool operator==(const Manifest&) const = default;
};

/// Loads every sample (paired garments) of a dataset directory.
std::vector<TryOnSample> load_dataset(const fs::path& root);
Manifest load_manifest(const fs::path& root);
TryOnSample load_sample(const fs::path& root, const ManifestEntry& entry);
void write_sample(const fs::path& root, const ManifestEntry& entry, const TryOnSample& sample);

}  // namespace catv2ton
