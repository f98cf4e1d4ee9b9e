#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "flora/error.hpp"
#include "flora/image.hpp"
#include "flora/rng.hpp"
#include "flora/segmentation.hpp"
#include "test_util.hpp"

using flora::PixelMask;
using flora::RgbImage;
using flora::SegmentationConfig;

TEST_CASE("hue_bin maps degrees onto fixed-width bins") {
  CHECK(flora::hue_bin(0.0, 36) == 0);
  CHECK(flora::hue_bin(9.999, 36) == 0);
  CHECK(flora::hue_bin(10.0, 36) == 1);
  CHECK(flora::hue_bin(180.0, 36) == 18);
  CHECK(flora::hue_bin(359.999, 36) == 35);
  CHECK(flora::hue_bin(0.0, 2) == 0);
  CHECK(flora::hue_bin(179.999, 2) == 0);
  CHECK(flora::hue_bin(180.0, 2) == 1);
  // guard against float rounding right at the top of the range
  CHECK(flora::hue_bin(std::nextafter(360.0, 0.0), 36) == 35);
}

TEST_CASE("histogram of a uniform red image lands in bin zero") {
  RgbImage img(12, 12, flora::Rgb{255, 0, 0});
  PixelMask all(12, 12, true);
  SegmentationConfig config;
  const flora::HueHistogram hist = flora::build_hue_histogram(img, all, config);
  REQUIRE(hist.counts.size() == 36);
  CHECK(hist.counts[0] == 144);
  CHECK(hist.total == 144);
  for (int b = 1; b < 36; ++b) CHECK(hist.counts[b] == 0);
}

TEST_CASE("histogram splits a half red half cyan image into two bins") {
  RgbImage img(10, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 10; ++x) img.at(x, y) = x < 5 ? flora::Rgb{255, 0, 0} : flora::Rgb{0, 255, 255};
  PixelMask all(10, 8, true);
  const flora::HueHistogram hist = flora::build_hue_histogram(img, all, SegmentationConfig{});
  CHECK(hist.counts[0] == 40);
  CHECK(hist.counts[18] == 40);
  CHECK(hist.total == 80);
}

TEST_CASE("histogram equals an independent per-pixel tally") {
  flora::Rng rng(555);
  RgbImage img(31, 17);
  PixelMask mask(31, 17, false);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      img.at(x, y) = flora::Rgb{static_cast<std::uint8_t>(rng.next_index(256)),
                                static_cast<std::uint8_t>(rng.next_index(256)),
                                static_cast<std::uint8_t>(rng.next_index(256))};
      mask.set(x, y, rng.next_double() < 0.6);
    }
  SegmentationConfig config;
  config.bin_count = 24;
  const flora::HueHistogram hist = flora::build_hue_histogram(img, mask, config);

  std::vector<std::uint64_t> expect(24, 0);
  std::uint64_t total = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (!mask.get(x, y)) continue;
      const flora::HsvPixel hsv = flora::rgb_to_hsv(img.at(x, y));
      if (!hsv.hue || hsv.saturation < config.saturation_floor) continue;
      ++expect[flora::hue_bin(*hsv.hue, 24)];
      ++total;
    }
  CHECK(hist.counts == expect);
  CHECK(hist.total == total);
}

TEST_CASE("histogram excludes achromatic and low-saturation pixels") {
  RgbImage img(6, 1);
  img.at(0, 0) = flora::Rgb{90, 90, 90};    // achromatic, no hue
  img.at(1, 0) = flora::Rgb{255, 250, 250}; // saturation ~0.02, below floor
  img.at(2, 0) = flora::Rgb{255, 0, 0};
  img.at(3, 0) = flora::Rgb{255, 0, 0};
  img.at(4, 0) = flora::Rgb{0, 0, 0};
  img.at(5, 0) = flora::Rgb{0, 255, 0};
  const flora::HueHistogram hist =
      flora::build_hue_histogram(img, PixelMask(6, 1, true), SegmentationConfig{});
  CHECK(hist.total == 3);
  CHECK(hist.counts[0] == 2);
  CHECK(hist.counts[12] == 1);
}

TEST_CASE("build_hue_histogram rejects a mismatched mask") {
  CHECK_THROWS_AS(
      flora::build_hue_histogram(RgbImage(4, 4), PixelMask(5, 4, true), SegmentationConfig{}),
      flora::DimensionMismatch);
}

TEST_CASE("dominant_hue_bin picks the maximum and breaks ties low") {
  flora::HueHistogram hist;
  hist.counts = {5, 3, 9};
  hist.total = 17;
  CHECK(flora::dominant_hue_bin(hist) == 2);

  hist.counts = {4, 4};
  hist.total = 8;
  CHECK(flora::dominant_hue_bin(hist) == 0);

  flora::Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    hist.counts.assign(1 + rng.next_index(40), 0);
    hist.total = 0;
    for (auto& c : hist.counts) {
      c = rng.next_index(50);
      hist.total += c;
    }
    if (hist.total == 0) {
      CHECK_THROWS_AS(flora::dominant_hue_bin(hist), flora::EmptyHistogram);
      continue;
    }
    const int got = flora::dominant_hue_bin(hist);
    for (std::size_t b = 0; b < hist.counts.size(); ++b) {
      CHECK(hist.counts[b] <= hist.counts[got]);
      if (hist.counts[b] == hist.counts[got]) CHECK(static_cast<std::size_t>(got) <= b);
    }
  }
}

TEST_CASE("dominant_hue_bin rejects an empty histogram") {
  flora::HueHistogram hist;
  hist.counts.assign(36, 0);
  hist.total = 0;
  CHECK_THROWS_AS(flora::dominant_hue_bin(hist), flora::EmptyHistogram);
}

TEST_CASE("apply_black_background keeps or clears per pixel") {
  flora::Rng rng(31);
  RgbImage img(13, 9);
  for (auto& p : img.pixels)
    p = flora::Rgb{static_cast<std::uint8_t>(rng.next_index(256)),
                   static_cast<std::uint8_t>(rng.next_index(256)),
                   static_cast<std::uint8_t>(rng.next_index(256))};

  CHECK(flora::apply_black_background(img, PixelMask(13, 9, true)) == img);

  const RgbImage black = flora::apply_black_background(img, PixelMask(13, 9, false));
  for (const auto& p : black.pixels) CHECK(p == flora::Rgb{0, 0, 0});

  PixelMask checker(13, 9, false);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 13; ++x) checker.set(x, y, (x + y) % 2 == 0);
  const RgbImage mixed = flora::apply_black_background(img, checker);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 13; ++x) {
      const flora::Rgb expect = checker.get(x, y) ? img.at(x, y) : flora::Rgb{0, 0, 0};
      REQUIRE(mixed.at(x, y) == expect);
    }

  CHECK_THROWS_AS(flora::apply_black_background(img, PixelMask(9, 13, true)),
                  flora::DimensionMismatch);
}

TEST_CASE("segment recovers a red disk from a green frame") {
  // Deterministic scene: saturated green frame, saturated red disk.
  const int size = 64;
  RgbImage img(size, size);
  PixelMask truth(size, size, false);
  const double cx = 32.0, cy = 30.0, radius = 13.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const bool disk = dx * dx + dy * dy <= radius * radius;
      img.at(x, y) = disk ? flora::Rgb{220, 30, 30} : flora::Rgb{40, 190, 60};
      truth.set(x, y, disk);
    }
  const flora::SegmentationResult result = flora::segment(img, SegmentationConfig{});
  CHECK(testutil::mask_iou(result.mask, truth) >= 0.99);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    if (result.mask.bits[i])
      REQUIRE(result.output.pixels[i] == img.pixels[i]);
    else
      REQUIRE(result.output.pixels[i] == flora::Rgb{0, 0, 0});
  }
}

TEST_CASE("segment on randomized frame+disk scenes keeps IoU high") {
  flora::Rng rng(424242);
  int good = 0;
  for (int i = 0; i < 100; ++i) {
    const testutil::FrameDiskScene scene = testutil::make_frame_disk(rng);
    const flora::SegmentationResult result = flora::segment(scene.image, SegmentationConfig{});
    if (testutil::mask_iou(result.mask, scene.truth) >= 0.95) ++good;
  }
  CHECK(good >= 95);
}

TEST_CASE("segment of a uniform image is an error, not an empty mask") {
  CHECK_THROWS_AS(flora::segment(RgbImage(20, 20, flora::Rgb{255, 0, 0}), SegmentationConfig{}),
                  flora::EmptyForeground);
}

TEST_CASE("segment is deterministic and never repeats a removed bin") {
  flora::Rng rng(77);
  const testutil::FrameDiskScene scene = testutil::make_frame_disk(rng);
  const flora::SegmentationResult a = flora::segment(scene.image, SegmentationConfig{});
  const flora::SegmentationResult b = flora::segment(scene.image, SegmentationConfig{});
  CHECK(a.mask.bits == b.mask.bits);
  CHECK(a.output == b.output);
  CHECK(a.iterations_used == b.iterations_used);
  CHECK(a.removed_bins == b.removed_bins);

  CHECK(a.removed_bins.size() <= static_cast<std::size_t>(SegmentationConfig{}.max_iterations));
  std::set<int> unique(a.removed_bins.begin(), a.removed_bins.end());
  CHECK(unique.size() == a.removed_bins.size());
}

TEST_CASE("segment config validation rejects bad parameters") {
  RgbImage img(16, 16, flora::Rgb{10, 200, 10});
  SegmentationConfig config;
  config.bin_count = 1;
  CHECK_THROWS_AS(flora::segment(img, config), flora::DimensionMismatch);
  config = SegmentationConfig{};
  config.max_iterations = 0;
  CHECK_THROWS_AS(flora::segment(img, config), flora::DimensionMismatch);
  config = SegmentationConfig{};
  config.border_band_fraction = 0.0;
  CHECK_THROWS_AS(flora::segment(img, config), flora::DimensionMismatch);
  config = SegmentationConfig{};
  config.background_stop_fraction = 1.5;
  CHECK_THROWS_AS(flora::segment(img, config), flora::DimensionMismatch);
}
