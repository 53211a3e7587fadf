#include "catv2ton/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <limits>

namespace catv2ton {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

std::uint8_t unit_to_pixel(float v) {
  const float scaled = (v + 1.0f) * 0.5f * 255.0f;
  if (!(scaled > 0.0f)) return 0;
  if (scaled >= 255.0f) return 255;
  return static_cast<std::uint8_t>(std::lround(scaled));
}

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t base = 0) : bytes_(bytes), base_(base) {}

  std::size_t pos() const { return pos_; }
  std::size_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw ParseError(std::string(what) + ": need " + std::to_string(n) + " bytes, have " +
                           std::to_string(remaining()),
                       offset());
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v;
    std::memcpy(&v, bytes_.data() + pos_, 2);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t peek() const { return bytes_[pos_]; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 2);
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

// Decimal header field of a PNM file, limited to 5 digits.
std::size_t pnm_field(Reader& r, const char* what) {
  std::size_t value = 0;
  std::size_t digits = 0;
  while (r.remaining() > 0 && r.peek() >= '0' && r.peek() <= '9') {
    if (++digits > 5) throw ParseError(std::string("pnm: ") + what + " has too many digits", r.offset());
    value = value * 10 + (r.u8(what) - '0');
  }
  if (digits == 0) throw ParseError(std::string("pnm: expected decimal ") + what, r.offset());
  return value;
}

void pnm_space(Reader& r, const char* what) {
  const std::size_t at = r.offset();
  if (r.remaining() == 0 || !is_space(r.u8(what))) {
    throw ParseError(std::string("pnm: expected whitespace after ") + what, at);
  }
}

}  // namespace

RasterImage decode_pnm(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(2, "pnm magic");
  RasterImage img;
  if (bytes[0] == 'P' && bytes[1] == '6') {
    img.channels = 3;
  } else if (bytes[0] == 'P' && bytes[1] == '5') {
    img.channels = 1;
  } else {
    throw ParseError("pnm: bad magic, expected P5 or P6", 0);
  }
  r.take(2, "pnm magic");
  pnm_space(r, "magic");
  img.width = pnm_field(r, "width");
  pnm_space(r, "width");
  img.height = pnm_field(r, "height");
  pnm_space(r, "height");
  const std::size_t maxval_at = r.offset();
  const std::size_t maxval = pnm_field(r, "maxval");
  if (maxval != 255) throw ParseError("pnm: maxval must be 255, got " + std::to_string(maxval), maxval_at);
  pnm_space(r, "maxval");
  if (img.width == 0 || img.height == 0) throw ParseError("pnm: zero extent", maxval_at);
  const std::size_t expected = img.width * img.height * img.channels;
  if (r.remaining() != expected) {
    throw ParseError("pnm: payload expected " + std::to_string(expected) + " bytes, got " +
                         std::to_string(r.remaining()),
                     r.offset());
  }
  auto payload = r.take(expected, "pnm payload");
  img.pixels.assign(payload.begin(), payload.end());
  return img;
}

std::vector<std::uint8_t> encode_pnm(const RasterImage& image) {
  if (image.channels != 1 && image.channels != 3) throw ContractError("pnm: channels must be 1 or 3");
  if (image.pixels.size() != image.width * image.height * image.channels || image.width == 0 ||
      image.height == 0) {
    throw DimensionError("pnm: pixel buffer does not match extents");
  }
  const std::string header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" +
                             std::to_string(image.width) + " " + std::to_string(image.height) +
                             "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

RasterImage read_pnm(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_pnm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

void write_pnm(const fs::path& path, const RasterImage& image) { write_file(path, encode_pnm(image)); }

RasterImage frame_to_image(const VideoTensor& video, std::size_t t) {
  if (video.channels() != 3) throw DimensionError("frame_to_image: expected 3 channels");
  RasterImage img{video.width(), video.height(), 3, {}};
  img.pixels.resize(video.plane_size() * 3);
  for (std::size_t h = 0; h < video.height(); ++h)
    for (std::size_t w = 0; w < video.width(); ++w)
      for (std::size_t c = 0; c < 3; ++c)
        img.pixels[(h * video.width() + w) * 3 + c] = unit_to_pixel(video.at(t, c, h, w));
  return img;
}

RasterImage frame_to_mask(const VideoTensor& video, std::size_t t) {
  if (video.channels() != 1) throw DimensionError("frame_to_mask: expected 1 channel");
  RasterImage img{video.width(), video.height(), 1, {}};
  img.pixels.resize(video.plane_size());
  for (std::size_t h = 0; h < video.height(); ++h)
    for (std::size_t w = 0; w < video.width(); ++w)
      img.pixels[h * video.width() + w] = mask_to_pixel(video.at(t, 0, h, w));
  return img;
}

VideoTensor image_to_frame(const RasterImage& image) {
  if (image.channels != 3) throw DimensionError("image_to_frame: expected an RGB image");
  VideoTensor out(1, 3, image.height, image.width);
  for (std::size_t h = 0; h < image.height; ++h)
    for (std::size_t w = 0; w < image.width; ++w)
      for (std::size_t c = 0; c < 3; ++c)
        out.at(0, c, h, w) = pixel_to_unit(image.pixels[(h * image.width + w) * 3 + c]);
  return out;
}

VideoTensor mask_to_frame(const RasterImage& image) {
  if (image.channels != 1) throw DimensionError("mask_to_frame: expected a gray image");
  VideoTensor out(1, 1, image.height, image.width);
  for (std::size_t h = 0; h < image.height; ++h)
    for (std::size_t w = 0; w < image.width; ++w)
      out.at(0, 0, h, w) = pixel_to_mask(image.pixels[h * image.width + w]);
  return out;
}

namespace {

constexpr std::size_t kMaxRank = 8;

template <typename T>
std::vector<std::uint8_t> encode_cvt_impl(const Tensor<T>& t) {
  if (t.rank() > kMaxRank) throw DimensionError("cvt: rank above 8");
  std::vector<std::uint8_t> out = {'C', 'V', 'T', '1', static_cast<std::uint8_t>(dtype_of<T>()),
                                   static_cast<std::uint8_t>(t.rank()), 0, 0};
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw DimensionError("cvt: extent exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  const auto data = t.data();
  const auto* p = reinterpret_cast<const std::uint8_t*>(data.data());
  out.insert(out.end(), p, p + data.size() * sizeof(T));
  return out;
}

struct CvtHeader {
  DType dtype;
  Shape shape;
  std::size_t payload_bytes;
};

CvtHeader read_cvt_header(Reader& r) {
  const std::size_t start = r.offset();
  const auto magic = r.take(4, "cvt magic");
  if (std::memcmp(magic.data(), "CVT1", 4) != 0) throw ParseError("cvt: bad magic, expected CVT1", start);
  const std::size_t dtype_at = r.offset();
  const std::uint8_t dtype = r.u8("cvt dtype");
  if (dtype > 1) throw ParseError("cvt: unknown dtype code " + std::to_string(dtype), dtype_at);
  const std::size_t rank_at = r.offset();
  const std::uint8_t rank = r.u8("cvt rank");
  if (rank == 0 || rank > kMaxRank) throw ParseError("cvt: rank must be in [1, 8], got " + std::to_string(rank), rank_at);
  const std::size_t reserved_at = r.offset();
  if (r.u8("cvt reserved") != 0 || r.u8("cvt reserved") != 0) {
    throw ParseError("cvt: reserved bytes must be zero", reserved_at);
  }
  CvtHeader h{static_cast<DType>(dtype), {}, 0};
  const std::size_t elem = dtype == 0 ? 4 : 8;
  std::size_t numel = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t at = r.offset();
    const std::uint32_t d = r.u32("cvt extent");
    if (d == 0) throw ParseError("cvt: zero extent", at);
    if (numel > (std::numeric_limits<std::size_t>::max() / elem) / d) throw ParseError("cvt: size overflow", at);
    numel *= d;
    h.shape.push_back(d);
  }
  h.payload_bytes = numel * elem;
  return h;
}

template <typename T>
Tensor<T> read_cvt_body(Reader& r, const CvtHeader& h) {
  if (h.dtype != dtype_of<T>()) {
    throw ParseError(std::string("cvt: stored dtype is ") + (h.dtype == DType::f32 ? "f32" : "f64") +
                         ", requested " + (dtype_of<T>() == DType::f32 ? "f32" : "f64"),
                     r.offset());
  }
  const std::size_t at = r.offset();
  if (r.remaining() < h.payload_bytes) {
    throw ParseError("cvt: truncated payload, expected " + std::to_string(h.payload_bytes) +
                         " bytes, got " + std::to_string(r.remaining()),
                     at);
  }
  const auto payload = r.take(h.payload_bytes, "cvt payload");
  std::vector<T> data(h.payload_bytes / sizeof(T));
  std::memcpy(data.data(), payload.data(), h.payload_bytes);
  return Tensor<T>(h.shape, std::move(data));
}

}  // namespace

std::vector<std::uint8_t> encode_cvt(const Tensorf& t) { return encode_cvt_impl(t); }
std::vector<std::uint8_t> encode_cvt(const Tensord& t) { return encode_cvt_impl(t); }

DType peek_cvt_dtype(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  return read_cvt_header(r).dtype;
}

template <typename T>
Tensor<T> decode_cvt(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const CvtHeader h = read_cvt_header(r);
  Tensor<T> t = read_cvt_body<T>(r, h);
  if (r.remaining() != 0) {
    throw ParseError("cvt: " + std::to_string(r.remaining()) + " trailing bytes after payload", r.offset());
  }
  return t;
}

template Tensor<float> decode_cvt(std::span<const std::uint8_t>);
template Tensor<double> decode_cvt(std::span<const std::uint8_t>);

std::vector<std::uint8_t> encode_checkpoint(const DiTModel<float>& model) {
  std::vector<std::uint8_t> out = {'C', 'V', 'T', 'W'};
  put_u32(out, kCheckpointVersion);
  const std::string config = model.config().to_json();
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out.insert(out.end(), config.begin(), config.end());
  const auto& params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    const auto t = encode_cvt(p.value);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

DiTModel<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "checkpoint magic");
  if (std::memcmp(magic.data(), "CVTW", 4) != 0) throw ParseError("checkpoint: bad magic, expected CVTW", 0);
  const std::size_t version_at = r.offset();
  const std::uint32_t version = r.u32("checkpoint version");
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version), version_at);
  }
  const std::size_t config_at = r.offset();
  const std::uint32_t config_len = r.u32("checkpoint config length");
  const auto config_bytes = r.take(config_len, "checkpoint config");
  ModelConfig config;
  try {
    config = ModelConfig::from_json(std::string(config_bytes.begin(), config_bytes.end()));
  } catch (const Error& e) {
    throw ParseError(std::string("checkpoint: bad config: ") + e.what(), config_at);
  }
  DiTModel<float> model(config, 0);
  auto& params = model.parameters();
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32("checkpoint parameter count");
  if (count != params.size()) {
    throw ParseError("checkpoint: " + std::to_string(count) + " parameters, config implies " +
                         std::to_string(params.size()),
                     count_at);
  }
  for (auto& p : params) {
    const std::size_t name_at = r.offset();
    const std::uint16_t name_len = r.u16("parameter name length");
    const auto name = r.take(name_len, "parameter name");
    if (std::string(name.begin(), name.end()) != p.name) {
      throw ParseError("checkpoint: expected parameter '" + p.name + "', found '" +
                           std::string(name.begin(), name.end()) + "'",
                       name_at);
    }
    const std::size_t tensor_at = r.offset();
    const CvtHeader h = read_cvt_header(r);
    if (h.shape != p.value.shape()) {
      throw ParseError("checkpoint: parameter '" + p.name + "' has shape " + shape_str(h.shape) +
                           ", expected " + shape_str(p.value.shape()),
                       tensor_at);
    }
    const Tensorf t = read_cvt_body<float>(r, h);
    const auto src = t.data();
    auto dst = p.value.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  if (r.remaining() != 0) {
    throw ParseError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes", r.offset());
  }
  return model;
}

void save_checkpoint(const fs::path& path, const DiTModel<float>& model) {
  write_file(path, encode_checkpoint(model));
}

DiTModel<float> load_checkpoint(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

namespace {

const char* extension(FrameKind kind) {
  switch (kind) {
    case FrameKind::image: return ".ppm";
    case FrameKind::mask: return ".pgm";
    case FrameKind::tensor: return ".cvt";
  }
  return "";
}

std::string frame_name(std::size_t t, FrameKind kind) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05zu%s", t, extension(kind));
  return buf;
}

VideoTensor read_one(const fs::path& path, FrameKind kind) {
  switch (kind) {
    case FrameKind::image: return image_to_frame(read_pnm(path));
    case FrameKind::mask: return mask_to_frame(read_pnm(path));
    case FrameKind::tensor: {
      const auto bytes = read_file(path);
      Tensorf t;
      try {
        t = decode_cvt<float>(bytes);
      } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), e.offset());
      }
      if (t.rank() != 3) throw DimensionError(path.string() + ": expected a [C,H,W] tensor");
      return VideoTensor(t.reshape({1, t.dim(0), t.dim(1), t.dim(2)}));
    }
  }
  throw ContractError("unknown frame kind");
}

}  // namespace

void write_frames(const fs::path& dir, const VideoTensor& video, FrameKind kind) {
  fs::create_directories(dir);
  for (std::size_t t = 0; t < video.frames(); ++t) {
    const fs::path path = dir / frame_name(t, kind);
    switch (kind) {
      case FrameKind::image: write_pnm(path, frame_to_image(video, t)); break;
      case FrameKind::mask: write_pnm(path, frame_to_mask(video, t)); break;
      case FrameKind::tensor: {
        const VideoTensor f = video.slice_frames(t, t + 1);
        write_file(path, encode_cvt(f.tensor().reshape({video.channels(), video.height(), video.width()})));
        break;
      }
    }
  }
}

VideoTensor read_frames(const fs::path& dir, FrameKind kind) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && entry.path().extension() == extension(kind)) ++count;
  }
  if (count == 0) throw Error("no frames in " + dir.string());
  std::vector<VideoTensor> frames;
  frames.reserve(count);
  for (std::size_t t = 0; t < count; ++t) {
    const fs::path path = dir / frame_name(t, kind);
    if (!fs::exists(path)) throw Error("frame numbering not contiguous: missing " + path.string());
    frames.push_back(read_one(path, kind));
  }
  return concat_frames(frames);
}

VideoTensor read_frames_or_file(const fs::path& path, FrameKind kind) {
  if (fs::is_directory(path)) return read_frames(path, kind);
  return read_one(path, kind);
}

std::string Manifest::to_json() const {
  nlohmann::ordered_json j;
  j["schema"] = schema;
  j["seed"] = seed;
  j["height"] = height;
  j["width"] = width;
  j["pose_channels"] = pose_channels;
  j["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : samples) {
    nlohmann::ordered_json e;
    e["id"] = s.id;
    e["dir"] = s.dir;
    e["frames"] = s.frames;
    e["seed"] = s.seed;
    e["garment"] = s.garment;
    e["unpaired_garment"] = s.unpaired_garment;
    j["samples"].push_back(e);
  }
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.schema = j.at("schema").get<int>();
    if (m.schema != 1) throw ConfigError("manifest: unsupported schema " + std::to_string(m.schema));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.pose_channels = j.at("pose_channels").get<std::size_t>();
    for (const auto& e : j.at("samples")) {
      ManifestEntry s;
      s.id = e.at("id").get<std::string>();
      s.dir = e.at("dir").get<std::string>();
      s.frames = e.at("frames").get<std::size_t>();
      s.seed = e.at("seed").get<std::uint64_t>();
      s.garment = e.at("garment").get<std::string>();
      s.unpaired_garment = e.value("unpaired_garment", std::string());
      m.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  return m;
}

Manifest load_manifest(const fs::path& root) { return Manifest::from_json(read_text(root / "manifest.json")); }

TryOnSample load_sample(const fs::path& root, const ManifestEntry& entry) {
  const fs::path dir = root / entry.dir;
  TryOnSample s;
  s.id = entry.id;
  s.person = read_frames(dir / "person", FrameKind::image);
  s.mask = read_frames(dir / "mask", FrameKind::mask);
  s.pose = read_frames(dir / "pose", FrameKind::tensor);
  s.garment = image_to_frame(read_pnm(root / entry.garment));
  s.target = read_frames(dir / "gt", FrameKind::image);
  for (const auto* v : {&s.mask, &s.pose, &s.target}) {
    if (v->frames() != s.person.frames() || v->height() != s.person.height() ||
        v->width() != s.person.width()) {
      throw DimensionError("sample " + entry.id + ": streams disagree on (T, H, W)");
    }
  }
  if (s.person.frames() != entry.frames) {
    throw DimensionError("sample " + entry.id + ": manifest says " + std::to_string(entry.frames) +
                         " frames, found " + std::to_string(s.person.frames()));
  }
  return s;
}

void write_sample(const fs::path& root, const ManifestEntry& entry, const TryOnSample& sample) {
  const fs::path dir = root / entry.dir;
  write_frames(dir / "person", sample.person, FrameKind::image);
  write_frames(dir / "mask", sample.mask, FrameKind::mask);
  write_frames(dir / "pose", sample.pose, FrameKind::tensor);
  write_pnm(dir / "garment.ppm", frame_to_image(sample.garment, 0));
  write_frames(dir / "gt", sample.target, FrameKind::image);
}

std::vector<TryOnSample> load_dataset(const fs::path& root) {
  const Manifest m = load_manifest(root);
  std::vector<TryOnSample> out;
  for (const auto& e : m.samples) {
    out.push_back(load_sample(root, e));
    if (out.back().person.height() != m.height || out.back().person.width() != m.width) {
      throw DimensionError("sample " + e.id + ": extent differs from the manifest");
    }
  }
  return out;
}

}  // namespace catv2ton
