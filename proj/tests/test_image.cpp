#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>

#include "flora/error.hpp"
#include "flora/image.hpp"
#include "flora/image_io.hpp"
#include "flora/rng.hpp"
#include "test_util.hpp"

using flora::Rgb;
using flora::RgbImage;

namespace {

RgbImage random_image(flora::Rng& rng, int w, int h) {
  RgbImage img(w, h);
  for (auto& p : img.pixels) {
    p.r = static_cast<std::uint8_t>(rng.next_index(256));
    p.g = static_cast<std::uint8_t>(rng.next_index(256));
    p.b = static_cast<std::uint8_t>(rng.next_index(256));
  }
  return img;
}

}  // namespace

TEST_CASE("rgb_to_hsv matches known anchor colors") {
  struct Anchor {
    std::uint8_t r, g, b;
    double hue, sat, val;
  };
  const Anchor anchors[] = {
      {255, 0, 0, 0.0, 1.0, 1.0},      {0, 255, 0, 120.0, 1.0, 1.0},
      {0, 0, 255, 240.0, 1.0, 1.0},    {255, 255, 0, 60.0, 1.0, 1.0},
      {0, 255, 255, 180.0, 1.0, 1.0},  {255, 0, 255, 300.0, 1.0, 1.0},
      {128, 0, 0, 0.0, 1.0, 128.0 / 255.0},
  };
  for (const auto& a : anchors) {
    const flora::HsvPixel hsv = flora::rgb_to_hsv(a.r, a.g, a.b);
    REQUIRE(hsv.hue.has_value());
    CHECK(*hsv.hue == Catch::Approx(a.hue).margin(1e-9));
    CHECK(hsv.saturation == Catch::Approx(a.sat).margin(1e-9));
    CHECK(hsv.value == Catch::Approx(a.val).margin(1e-9));
  }
}

TEST_CASE("achromatic pixels have undefined hue and zero saturation") {
  for (int v : {0, 1, 77, 128, 254, 255}) {
    const auto b = static_cast<std::uint8_t>(v);
    const flora::HsvPixel hsv = flora::rgb_to_hsv(b, b, b);
    CHECK_FALSE(hsv.hue.has_value());
    CHECK(hsv.saturation == 0.0);
    CHECK(hsv.value == Catch::Approx(v / 255.0).margin(1e-12));
  }
}

TEST_CASE("hsv round trip reproduces every random color within one step") {
  flora::Rng rng(101);
  for (int i = 0; i < 10000; ++i) {
    const auto r = static_cast<std::uint8_t>(rng.next_index(256));
    const auto g = static_cast<std::uint8_t>(rng.next_index(256));
    const auto b = static_cast<std::uint8_t>(rng.next_index(256));
    const flora::HsvPixel hsv = flora::rgb_to_hsv(r, g, b);
    REQUIRE(hsv.saturation >= 0.0);
    REQUIRE(hsv.saturation <= 1.0);
    REQUIRE(hsv.value >= 0.0);
    REQUIRE(hsv.value <= 1.0);
    if (hsv.hue) {
      REQUIRE(*hsv.hue >= 0.0);
      REQUIRE(*hsv.hue < 360.0);
    }
    const Rgb back = flora::hsv_to_rgb(hsv.hue.value_or(0.0), hsv.saturation, hsv.value);
    CHECK(std::abs(int(back.r) - int(r)) <= 1);
    CHECK(std::abs(int(back.g) - int(g)) <= 1);
    CHECK(std::abs(int(back.b) - int(b)) <= 1);
  }
}

TEST_CASE("hsv_to_rgb wraps hue outside [0, 360)") {
  CHECK(flora::hsv_to_rgb(360.0, 1.0, 1.0) == flora::hsv_to_rgb(0.0, 1.0, 1.0));
  CHECK(flora::hsv_to_rgb(-120.0, 1.0, 1.0) == flora::hsv_to_rgb(240.0, 1.0, 1.0));
  CHECK(flora::hsv_to_rgb(720.0 + 45.0, 1.0, 1.0) == flora::hsv_to_rgb(45.0, 1.0, 1.0));
}

TEST_CASE("border_mask covers exactly the ceil-banded frame") {
  // 10x10, fraction 0.02 -> band ceil(0.2) = 1 -> 100 - 8*8 = 36 pixels
  RgbImage small(10, 10);
  const flora::PixelMask band1 = flora::border_mask(small, 0.02);
  CHECK(band1.count() == 36);
  for (int i = 0; i < 10; ++i) {
    CHECK(band1.get(i, 0));
    CHECK(band1.get(i, 9));
    CHECK(band1.get(0, i));
    CHECK(band1.get(9, i));
  }
  CHECK_FALSE(band1.get(5, 5));

  // 64x64, fraction 0.02 -> band ceil(1.28) = 2 -> 64^2 - 60^2 = 496
  RgbImage mid(64, 64);
  CHECK(flora::border_mask(mid, 0.02).count() == 496);

  // rectangular: 20x10, fraction 0.25 -> band ceil(2.5) = 3 -> 200 - 14*4 = 144
  RgbImage rect(20, 10);
  CHECK(flora::border_mask(rect, 0.25).count() == 144);

  // fraction 0.5 on an even side consumes the whole image
  RgbImage tiny(4, 4);
  CHECK(flora::border_mask(tiny, 0.5).count() == 16);
}

TEST_CASE("border_mask rejects out-of-range fractions") {
  RgbImage img(8, 8);
  CHECK_THROWS_AS(flora::border_mask(img, 0.0), flora::DimensionMismatch);
  CHECK_THROWS_AS(flora::border_mask(img, -0.1), flora::DimensionMismatch);
  CHECK_THROWS_AS(flora::border_mask(img, 0.51), flora::DimensionMismatch);
}

TEST_CASE("png encode/decode round trip is lossless") {
  flora::Rng rng(2024);
  for (auto [w, h] : {std::pair{1, 1}, {7, 3}, {32, 32}, {61, 17}}) {
    const RgbImage img = random_image(rng, w, h);
    const std::vector<std::uint8_t> bytes = flora::encode_png(img);
    const RgbImage back = flora::decode_image(bytes);
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    CHECK(back == img);
  }
}

TEST_CASE("save_png and load_image round trip through the filesystem") {
  testutil::TempDir dir;
  flora::Rng rng(7);
  const RgbImage img = random_image(rng, 23, 11);
  const auto path = dir.path / "round.png";
  flora::save_png(path, img);
  CHECK(flora::load_image(path) == img);
}

TEST_CASE("jpeg decoding recovers a smooth gradient approximately") {
  RgbImage img(48, 32);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      img.at(x, y) = Rgb{static_cast<std::uint8_t>(x * 5), static_cast<std::uint8_t>(y * 7),
                         static_cast<std::uint8_t>(128)};
  const std::vector<std::uint8_t> bytes = testutil::encode_jpeg(img, 95);
  const RgbImage back = flora::decode_image(bytes);
  REQUIRE(back.width == img.width);
  REQUIRE(back.height == img.height);
  double worst = 0.0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    worst = std::max(worst, std::abs(int(back.pixels[i].r) - int(img.pixels[i].r)) * 1.0);
    worst = std::max(worst, std::abs(int(back.pixels[i].g) - int(img.pixels[i].g)) * 1.0);
    worst = std::max(worst, std::abs(int(back.pixels[i].b) - int(img.pixels[i].b)) * 1.0);
  }
  CHECK(worst <= 16.0);  // lossy, but quality 95 stays close on smooth content
}

TEST_CASE("decode_image rejects garbage, empty, and truncated streams") {
  CHECK_THROWS_AS(flora::decode_image({}), flora::MalformedImage);
  CHECK_THROWS_AS(flora::decode_image({'h', 'e', 'l', 'l', 'o'}), flora::MalformedImage);

  flora::Rng rng(3);
  const std::vector<std::uint8_t> good = flora::encode_png(random_image(rng, 16, 16));
  const std::vector<std::uint8_t> truncated(good.begin(), good.begin() + 40);
  CHECK_THROWS_AS(flora::decode_image(truncated), flora::MalformedImage);

  std::vector<std::uint8_t> corrupted = good;
  for (std::size_t i = 60; i < corrupted.size() && i < 120; ++i) corrupted[i] ^= 0xFF;
  CHECK_THROWS_AS(flora::decode_image(corrupted), flora::MalformedImage);
}

TEST_CASE("mask png encodes true as white and false as black") {
  flora::PixelMask mask(9, 5, false);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      mask.set(x, y, (x + y) % 2 == 0);
  const RgbImage decoded = flora::decode_image(flora::encode_mask_png(mask));
  REQUIRE(decoded.width == mask.width);
  REQUIRE(decoded.height == mask.height);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const Rgb expect = mask.get(x, y) ? Rgb{255, 255, 255} : Rgb{0, 0, 0};
      REQUIRE(decoded.at(x, y) == expect);
    }
}

TEST_CASE("reading a missing file reports an i/o error") {
  testutil::TempDir dir;
  CHECK_THROWS_AS(flora::read_file(dir.path / "nope.png"), flora::IoFailure);
  CHECK_THROWS_AS(flora::load_image(dir.path / "nope.png"), flora::IoFailure);
}
