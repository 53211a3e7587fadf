#include <doctest.h>

#include <functional>

#include "catv2ton/errors.hpp"
#include "catv2ton/io.hpp"
#include "oracles.hpp"

using namespace catv2ton;

namespace {

using Bytes = std::vector<std::uint8_t>;

Bytes bytes_of(const std::string& s) { return Bytes(s.begin(), s.end()); }

RasterImage random_raster(std::size_t w, std::size_t h, std::size_t c, Rng& rng) {
  RasterImage img{w, h, c, {}};
  for (std::size_t i = 0; i < w * h * c; ++i) img.pixels.push_back(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
  return img;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.num_blocks = 1;
  c.hidden = 8;
  c.heads = 1;
  c.ffn = 8;
  c.patch = 2;
  return c;
}

Bytes mutate_header(const Bytes& src, std::size_t header_len, Rng& rng) {
  Bytes b = src;
  const auto pos = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(header_len) - 1));
  switch (rng.uniform_int(0, 4)) {
    case 0: b[pos] = static_cast<std::uint8_t>(rng.uniform_int(0, 255)); break;
    case 1: b[pos] ^= static_cast<std::uint8_t>(1u << rng.uniform_int(0, 7)); break;
    case 2: b.erase(b.begin() + static_cast<std::ptrdiff_t>(pos)); break;
    case 3: b.insert(b.begin() + static_cast<std::ptrdiff_t>(pos), static_cast<std::uint8_t>(rng.uniform_int(0, 255))); break;
    default: b.resize(pos); break;
  }
  return b;
}

// A mutation is handled cleanly if it is rejected with a ParseError or, when
// it happens to leave the meaning intact, decodes to the original content.
template <typename Decode>
void fuzz(const Bytes& fixture, std::size_t header_len, int rounds, std::uint64_t seed, Decode same_as_original) {
  Rng rng(seed);
  int rejected = 0;
  for (int i = 0; i < rounds; ++i) {
    const Bytes m = mutate_header(fixture, header_len, rng);
    try {
      const bool same = same_as_original(m);
      CHECK_MESSAGE(same, "mutation " << i << " decoded to different content");
    } catch (const ParseError&) {
      ++rejected;
    } catch (const std::exception& e) {
      FAIL("mutation " << i << " raised a non-parse error: " << e.what());
    }
  }
  CHECK(rejected > rounds / 2);
}

}  // namespace

TEST_CASE("2x2 P6 fixture decodes to known floats") {
  Bytes f = bytes_of("P6\n2 2\n255\n");
  for (std::uint8_t v : {0, 255, 128, 51, 102, 153, 204, 1, 2, 3, 4, 5}) f.push_back(v);
  auto img = decode_pnm(f);
  CHECK(img.width == 2);
  CHECK(img.height == 2);
  CHECK(img.channels == 3);
  auto frame = image_to_frame(img);
  CHECK(frame.shape() == Shape{1, 3, 2, 2});
  CHECK(frame.at(0, 0, 0, 0) == -1.0f);
  CHECK(frame.at(0, 1, 0, 0) == 1.0f);
  CHECK(frame.at(0, 2, 0, 0) == doctest::Approx(128.0 / 255 * 2 - 1));
  CHECK(frame.at(0, 0, 0, 1) == doctest::Approx(51.0 / 255 * 2 - 1));
  CHECK(frame.at(0, 2, 1, 1) == doctest::Approx(5.0 / 255 * 2 - 1));
  CHECK(encode_pnm(img) == f);
  CHECK(frame_to_image(frame, 0) == img);
}

TEST_CASE("PGM masks threshold at 128") {
  Bytes f = bytes_of("P5\n3 1\n255\n");
  for (std::uint8_t v : {127, 128, 255}) f.push_back(v);
  auto m = mask_to_frame(decode_pnm(f));
  CHECK(m.values() == std::vector<float>{0.0f, 1.0f, 1.0f});
  auto back = frame_to_mask(m, 0);
  CHECK(back.pixels == std::vector<std::uint8_t>{0, 255, 255});
}

TEST_CASE("pixel mapping round trip") {
  for (int v = 0; v < 256; ++v) CHECK(unit_to_pixel(pixel_to_unit(static_cast<std::uint8_t>(v))) == v);
  CHECK(unit_to_pixel(-3.0f) == 0);
  CHECK(unit_to_pixel(3.0f) == 255);
}

TEST_CASE("PNM errors carry offsets and lengths") {
  Bytes f = bytes_of("P6\n2 2\n255\n");
  f.resize(f.size() + 10, 7);
  try {
    decode_pnm(f);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("12") != std::string::npos);
    CHECK(msg.find("10") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_pnm(bytes_of("P3\n1 1\n255\n\x01\x02\x03")), ParseError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n1 1\n65535\n\x01\x02")), ParseError);
  CHECK_THROWS_AS(decode_pnm(bytes_of("P5\n# c\n1 1\n255\n\x01")), ParseError);
  CHECK_THROWS_AS(decode_pnm(Bytes{}), ParseError);
  try {
    decode_pnm(bytes_of("P7\n1 1\n255\n\x01"));
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
  }
}

TEST_CASE("PNM file round trips are byte-identical") {
  Rng rng(1);
  auto dir = oracle::scratch_dir("pnm");
  for (std::size_t c : {1u, 3u}) {
    auto img = random_raster(5, 4, c, rng);
    auto path = dir / (c == 1 ? "a.pgm" : "a.ppm");
    write_pnm(path, img);
    auto bytes = read_file(path);
    CHECK(read_pnm(path) == img);
    write_pnm(dir / "b", read_pnm(path));
    CHECK(read_file(dir / "b") == bytes);
  }
}

TEST_CASE("CVT1 round trips") {
  Rng rng(2);
  auto tf = cast<float>(oracle::random_tensor({2, 3, 4}, rng));
  auto bytes = encode_cvt(tf);
  CHECK(bytes.size() == 8 + 3 * 4 + 24 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CVT1");
  CHECK(peek_cvt_dtype(bytes) == DType::f32);
  auto back = decode_cvt<float>(bytes);
  CHECK(back.shape() == tf.shape());
  CHECK(oracle::to_vec(back) == oracle::to_vec(tf));
  CHECK(encode_cvt(back) == bytes);

  auto td = oracle::random_tensor({7}, rng);
  auto bd = encode_cvt(td);
  CHECK(oracle::to_vec(decode_cvt<double>(bd)) == oracle::to_vec(td));
  CHECK_THROWS_AS(decode_cvt<float>(bd), ParseError);
}

TEST_CASE("CVT1 errors") {
  Rng rng(3);
  auto bytes = encode_cvt(cast<float>(oracle::random_tensor({4, 4}, rng)));
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  try {
    decode_cvt<float>(cut);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected 64") != std::string::npos);
    CHECK(msg.find("got 61") != std::string::npos);
  }
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_cvt<float>(extra), ParseError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_cvt<float>(bad), ParseError);
  bad = bytes;
  bad[5] = 0;
  CHECK_THROWS_AS(decode_cvt<float>(bad), ParseError);
  bad = bytes;
  bad[6] = 1;
  CHECK_THROWS_AS(decode_cvt<float>(bad), ParseError);
}

TEST_CASE("CVTW checkpoints round trip") {
  DiTModel<float> model(tiny_config(), 5);
  auto bytes = encode_checkpoint(model);
  auto back = decode_checkpoint(bytes);
  CHECK(back.config() == model.config());
  REQUIRE(back.parameters().size() == model.parameters().size());
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    CHECK(back.parameters()[i].name == model.parameters()[i].name);
    CHECK(oracle::to_vec(back.parameters()[i].value) == oracle::to_vec(model.parameters()[i].value));
  }
  CHECK(encode_checkpoint(back) == bytes);

  auto dir = oracle::scratch_dir("ckpt");
  save_checkpoint(dir / "m.cvtw", model);
  CHECK(read_file(dir / "m.cvtw") == bytes);
  CHECK(encode_checkpoint(load_checkpoint(dir / "m.cvtw")) == bytes);

  auto cut = bytes;
  cut.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_checkpoint(cut), ParseError);
  auto extra = bytes;
  extra.push_back(1);
  CHECK_THROWS_AS(decode_checkpoint(extra), ParseError);
}

TEST_CASE("fuzzed headers are rejected cleanly") {
  Rng rng(4);
  const auto ppm_img = random_raster(4, 3, 3, rng);
  const auto ppm = encode_pnm(ppm_img);
  fuzz(ppm, 11, 250, 10, [&](const Bytes& b) { return decode_pnm(b) == ppm_img; });

  const auto pgm_img = random_raster(3, 5, 1, rng);
  const auto pgm = encode_pnm(pgm_img);
  fuzz(pgm, 11, 250, 11, [&](const Bytes& b) { return decode_pnm(b) == pgm_img; });

  const auto t = cast<float>(oracle::random_tensor({2, 3}, rng));
  const auto cvt = encode_cvt(t);
  fuzz(cvt, 16, 250, 12, [&](const Bytes& b) {
    auto d = decode_cvt<float>(b);
    return d.shape() == t.shape() && oracle::to_vec(d) == oracle::to_vec(t);
  });

  DiTModel<float> model(tiny_config(), 6);
  const auto ckpt = encode_checkpoint(model);
  fuzz(ckpt, 64, 250, 13, [&](const Bytes& b) { return encode_checkpoint(decode_checkpoint(b)) == ckpt; });
}

TEST_CASE("frame directories") {
  Rng rng(5);
  auto dir = oracle::scratch_dir("frames");
  VideoTensor img(3, 3, 4, 2);
  for (auto& v : img.values()) v = pixel_to_unit(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
  write_frames(dir / "img", img, FrameKind::image);
  CHECK(fs::exists(dir / "img" / "frame_00002.ppm"));
  CHECK(read_frames(dir / "img", FrameKind::image) == img);

  VideoTensor mask(2, 1, 4, 2);
  for (auto& v : mask.values()) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
  write_frames(dir / "mask", mask, FrameKind::mask);
  CHECK(read_frames(dir / "mask", FrameKind::mask) == mask);

  VideoTensor pose(2, 2, 4, 2);
  for (auto& v : pose.values()) v = static_cast<float>(rng.normal());
  write_frames(dir / "pose", pose, FrameKind::tensor);
  CHECK(read_frames(dir / "pose", FrameKind::tensor) == pose);

  CHECK(read_frames_or_file(dir / "img" / "frame_00001.ppm", FrameKind::image) == img.slice_frames(1, 2));

  fs::remove(dir / "img" / "frame_00001.ppm");
  CHECK_THROWS(read_frames(dir / "img", FrameKind::image));
}

TEST_CASE("manifest json round trip and sample io") {
  Manifest m;
  m.seed = 9;
  m.height = 8;
  m.width = 8;
  m.pose_channels = 2;
  m.samples.push_back({"v000", "v000", 2, 123, "v000/garment.ppm", "v001/garment.ppm"});
  CHECK(Manifest::from_json(m.to_json()) == m);
  CHECK_THROWS_AS(Manifest::from_json("{\"schema\": 2}"), ConfigError);
  CHECK_THROWS_AS(Manifest::from_json("not json"), ConfigError);

  Rng rng(6);
  TryOnSample s;
  auto rnd_img = [&](std::size_t T) {
    VideoTensor v(T, 3, 8, 8);
    for (auto& x : v.values()) x = pixel_to_unit(static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
    return v;
  };
  s.person = rnd_img(2);
  s.target = rnd_img(2);
  s.garment = rnd_img(1);
  s.mask = VideoTensor(2, 1, 8, 8, 1.0f);
  s.pose = VideoTensor(2, 2, 8, 8, 0.25f);
  auto root = oracle::scratch_dir("manifest");
  write_sample(root, m.samples[0], s);
  write_text(root / "manifest.json", m.to_json());
  CHECK(load_manifest(root) == m);
  auto back = load_sample(root, m.samples[0]);
  CHECK(back.id == "v000");
  CHECK(back.person == s.person);
  CHECK(back.target == s.target);
  CHECK(back.garment == s.garment);
  CHECK(back.mask == s.mask);
  CHECK(back.pose == s.pose);
}
