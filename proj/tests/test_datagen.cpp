#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "datagen/datagen.hpp"
#include "datagen/digits.hpp"
#include "io/png_io.hpp"

using namespace xdd;
using namespace xdd::datagen;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("xdd_test_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

GrayscaleDigit uniform_digit(int size, uint8_t value) {
  GrayscaleDigit d;
  d.size = size;
  d.label = 0;
  d.intensity.assign(static_cast<size_t>(size) * size, value);
  return d;
}
}  // namespace

TEST_CASE("colorize_digit: multiplicative definition") {
  GrayscaleDigit black = uniform_digit(8, 0);
  Tensor img = colorize_digit(black, {0.3f, 0.9f, 0.1f}, 8);
  for (size_t i = 0; i < img.numel(); ++i) CHECK(img.data()[i] == 0.0f);  // black stays black

  GrayscaleDigit full = uniform_digit(8, 255);
  Tensor red = colorize_digit(full, {1.0f, 0.0f, 0.0f}, 8);
  for (size_t i = 0; i < red.numel(); i += 3) {
    CHECK(red.data()[i] == 1.0f);
    CHECK(red.data()[i + 1] == 0.0f);
    CHECK(red.data()[i + 2] == 0.0f);
  }
  CHECK_THROWS_AS(colorize_digit(full, {1.2f, 0.0f, 0.0f}, 8), InvalidArgument);
}

TEST_CASE("colorize_background: blend definition") {
  GrayscaleDigit full = uniform_digit(8, 255);
  Tensor white = colorize_background(full, {0.2f, 0.4f, 0.8f}, 8);
  for (size_t i = 0; i < white.numel(); ++i) CHECK(white.data()[i] == 1.0f);

  GrayscaleDigit black = uniform_digit(8, 0);
  Tensor blue = colorize_background(black, {0.0f, 0.0f, 1.0f}, 8);
  for (size_t i = 0; i < blue.numel(); i += 3) {
    CHECK(blue.data()[i] == 0.0f);
    CHECK(blue.data()[i + 1] == 0.0f);
    CHECK(blue.data()[i + 2] == 1.0f);
  }
  CHECK_THROWS_AS(colorize_background(black, {0.0f, -0.1f, 1.0f}, 8), InvalidArgument);
}

TEST_CASE("rendered digits look like digits: nonempty, centered-ish, distinct") {
  for (int label = 0; label < 10; ++label) {
    GrayscaleDigit d = render_digit(label, 32, 1234);
    double mass = 0;
    for (uint8_t v : d.intensity) mass += v / 255.0;
    const double frac = mass / (32.0 * 32.0);
    CAPTURE(label);
    CHECK(frac > 0.05);  // visible strokes
    CHECK(frac < 0.55);  // not a blob
  }
  // Same seed reproduces bit-identically; different seed changes the raster.
  GrayscaleDigit a = render_digit(3, 32, 7);
  GrayscaleDigit b = render_digit(3, 32, 7);
  GrayscaleDigit c = render_digit(3, 32, 8);
  CHECK(a.intensity == b.intensity);
  CHECK(a.intensity != c.intensity);
}

TEST_CASE("build_split determinism and pairing invariant") {
  auto digits = synth_digits(100, 32, 99);
  DatasetSplit s1 = build_split(digits, "train", 7, 100, 32);
  DatasetSplit s2 = build_split(digits, "train", 7, 100, 32);
  REQUIRE(s1.size() == 100);
  for (size_t i = 0; i < s1.size(); ++i) {
    CHECK(s1.samples[i].x.rgb == s2.samples[i].x.rgb);  // byte-identical
    CHECK(s1.samples[i].y.rgb == s2.samples[i].y.rgb);
  }

  // Different seed gives different colors.
  DatasetSplit s3 = build_split(digits, "train", 8, 100, 32);
  int diff = 0;
  for (size_t i = 0; i < s1.size(); ++i)
    diff += s1.samples[i].x.rgb != s3.samples[i].x.rgb;
  CHECK(diff > 90);

  // Pairing: mask recomputed from the stored digit matches both domains.
  for (const auto& s : s1.samples) {
    std::vector<uint8_t> from_digit(s.digit.intensity.size());
    for (size_t p = 0; p < from_digit.size(); ++p)
      from_digit[p] = s.digit.intensity[p] > 127 ? 1 : 0;
    CHECK(digit_mask_x(s.x) == from_digit);
    CHECK(digit_mask_y(s.y) == from_digit);
  }

  CHECK_THROWS_AS(build_split({}, "train", 0, 0, 32), InvalidArgument);
  CHECK_THROWS_AS(build_split(digits, "train", 0, 101, 32), InvalidArgument);
}

TEST_CASE("color marginals: channel means near palette mean") {
  DatasetSplit s = synth_mnist_cdcb("train", 3, 1000, 16);
  double mean[3] = {0, 0, 0};
  for (const auto& smp : s.samples)
    for (int c = 0; c < 3; ++c) mean[c] += smp.digit_color[static_cast<size_t>(c)];
  for (int c = 0; c < 3; ++c) {
    mean[c] /= static_cast<double>(s.size());
    CHECK(std::abs(mean[c] - 0.5) < 0.1);  // analytic mean of the vivid palette
  }
}

TEST_CASE("export then reload round trip") {
  fs::path dir = temp_dir("roundtrip");
  DatasetSplit s = synth_mnist_cdcb("test", 5, 12, 24);
  export_split(s, dir.string());

  DatasetSplit r = load_paired_directory(dir.string(), 24);
  REQUIRE(r.size() == s.size());
  CHECK(r.has_ground_truth);
  for (size_t i = 0; i < s.size(); ++i) {
    CHECK(r.samples[i].x.rgb == s.samples[i].x.rgb);  // PNG is lossless for u8
    CHECK(r.samples[i].y.rgb == s.samples[i].y.rgb);
    CHECK(r.samples[i].label == s.samples[i].label);
    CHECK(r.samples[i].digit.intensity == s.samples[i].digit.intensity);
    for (int c = 0; c < 3; ++c)
      CHECK(r.samples[i].background_color[static_cast<size_t>(c)] ==
            doctest::Approx(s.samples[i].background_color[static_cast<size_t>(c)]));
  }
  fs::remove_all(dir);
}

TEST_CASE("load_paired_directory: empty and error cases") {
  fs::path dir = temp_dir("empty");
  DatasetSplit s = load_paired_directory(dir.string(), 16);
  CHECK(s.size() == 0);

  CHECK_THROWS_AS(load_paired_directory((dir / "missing").string(), 16), IoError);

  // Mirrored layout with mismatched counts names the offending directories.
  fs::create_directories(dir / "A");
  fs::create_directories(dir / "B");
  DatasetSplit tiny = synth_mnist_cdcb("test", 1, 1, 16);
  io::write_png((dir / "A" / "0.png").string(), tiny.samples[0].x);
  CHECK_THROWS_AS(load_paired_directory(dir.string(), 16), IoError);
  io::write_png((dir / "B" / "0.png").string(), tiny.samples[0].y);
  DatasetSplit m = load_paired_directory(dir.string(), 16);
  REQUIRE(m.size() == 1);
  CHECK(m.samples[0].x.rgb == tiny.samples[0].x.rgb);
  CHECK_FALSE(m.has_ground_truth);
  fs::remove_all(dir);
}

TEST_CASE("batch conversion maps into [-1,1] and back") {
  DatasetSplit s = synth_mnist_cdcb("test", 11, 3, 16);
  std::vector<const io::ImageU8*> imgs;
  for (const auto& smp : s.samples) imgs.push_back(&smp.x);
  Tensor batch = images_to_batch(imgs);
  REQUIRE(batch.shape() == Shape{3, 16, 16, 3});
  for (size_t i = 0; i < batch.numel(); ++i) {
    CHECK(batch.data()[i] >= -1.0f);
    CHECK(batch.data()[i] <= 1.0f);
  }
  io::ImageU8 back = batch_to_image(batch, 1);
  CHECK(back.rgb == s.samples[1].x.rgb);
}

TEST_CASE("mask iou") {
  std::vector<uint8_t> a = {1, 1, 0, 0}, b = {1, 0, 1, 0};
  CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(mask_iou(a, a) == doctest::Approx(1.0));
}
