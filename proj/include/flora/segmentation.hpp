#pragma once

#include <cstdint>
#include <vector>

#include "flora/error.hpp"
#include "flora/image.hpp"

namespace flora {

// Fixed-bin hue occurrence counts over a masked pixel set.
struct HueHistogram {
  int bin_count = 36;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;
};

struct SegmentationConfig {
  int bin_count = 36;                  // 10 degree bins
  double border_band_fraction = 0.02;  // initial background estimate
  double saturation_floor = 0.15;      // below this a pixel has no usable hue
  double background_stop_fraction = 0.98;
  int max_iterations = 16;

  void validate() const {
    if (bin_count < 2) throw DimensionMismatch("bin_count must be >= 2");
    if (max_iterations < 1) throw DimensionMismatch("max_iterations must be >= 1");
    if (!(border_band_fraction > 0.0) || border_band_fraction > 0.5)
      throw DimensionMismatch("border_band_fraction must be in (0, 0.5]");
    if (saturation_floor < 0.0 || saturation_floor > 1.0)
      throw DimensionMismatch("saturation_floor must be in [0, 1]");
    if (!(background_stop_fraction > 0.0) || background_stop_fraction > 1.0)
      throw DimensionMismatch("background_stop_fraction must be in (0, 1]");
  }
};

struct SegmentationResult {
  PixelMask mask;    // true = foreground
  RgbImage output;   // foreground preserved, background exactly (0,0,0)
  int iterations_used = 0;
  std::vector<int> removed_bins;  // dominant bins in removal order
};

inline int hue_bin(double hue_degrees, int bin_count) {
  const int bin = static_cast<int>(hue_degrees / (360.0 / bin_count));
  return bin >= bin_count ? bin_count - 1 : bin;  // guard hue == 360 - eps rounding
}

// Tallies masked pixels that have a defined hue and saturation >= the floor.
inline HueHistogram build_hue_histogram(const RgbImage& image, const PixelMask& mask,
                                        const SegmentationConfig& config) {
  config.validate();
  if (!mask.matches(image))
    throw DimensionMismatch("mask dimensions do not match image");

  HueHistogram hist;
  hist.bin_count = config.bin_count;
  hist.counts.assign(config.bin_count, 0);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      if (!mask.get(x, y)) continue;
      const HsvPixel hsv = rgb_to_hsv(image.at(x, y));
      if (!hsv.hue || hsv.saturation < config.saturation_floor) continue;
      ++hist.counts[hue_bin(*hsv.hue, config.bin_count)];
      ++hist.total;
    }
  }
  return hist;
}

// Index of the maximum count; ties break to the lowest index.
inline int dominant_hue_bin(const HueHistogram& hist) {
  if (hist.total == 0) throw EmptyHistogram("histogram has no counted pixels");
  int best = 0;
  for (int i = 1; i < static_cast<int>(hist.counts.size()); ++i)
    if (hist.counts[i] > hist.counts[best]) best = i;
  return best;
}

// Per-pixel select: mask-true keeps the input pixel, mask-false turns black.
inline RgbImage apply_black_background(const RgbImage& image, const PixelMask& mask) {
  if (!mask.matches(image))
    throw DimensionMismatch("mask dimensions do not match image");
  RgbImage out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    if (!mask.bits[i]) out.pixels[i] = Rgb{0, 0, 0};
  return out;
}

// Iterative dominant-hue background removal. The border band seeds the
// background estimate; each round counts hues over the current background,
// then relabels every pixel in the dominant bin (anywhere in the image) as
// background. Low-saturation and achromatic pixels are swept to background
// on the first round. A bin is only ever removed once.
inline SegmentationResult segment(const RgbImage& image, const SegmentationConfig& config) {
  config.validate();
  if (image.width < 1 || image.height < 1)
    throw DimensionMismatch("cannot segment an empty image");

  const std::size_t total_pixels = image.pixel_count();

  // Per-pixel hue bin (-1 when hue is undefined or saturation below floor).
  std::vector<int> bin_of(total_pixels, -1);
  for (std::size_t i = 0; i < total_pixels; ++i) {
    const HsvPixel hsv = rgb_to_hsv(image.pixels[i]);
    if (hsv.hue && hsv.saturation >= config.saturation_floor)
      bin_of[i] = hue_bin(*hsv.hue, config.bin_count);
  }

  PixelMask background = border_mask(image, config.border_band_fraction);
  std::size_t background_count = background.count();

  std::vector<std::uint8_t> bin_removed(config.bin_count, 0);
  SegmentationResult result;

  while (result.iterations_used < config.max_iterations) {
    const double bg_fraction = static_cast<double>(background_count) / total_pixels;
    if (bg_fraction >= config.background_stop_fraction) break;

    // Hue histogram over the current background, restricted to bins not yet
    // removed (a removed bin's pixels are already all background).
    std::vector<std::uint64_t> counts(config.bin_count, 0);
    for (std::size_t i = 0; i < total_pixels; ++i)
      if (background.bits[i] && bin_of[i] >= 0 && !bin_removed[bin_of[i]])
        ++counts[bin_of[i]];

    int dominant = 0;
    for (int b = 1; b < config.bin_count; ++b)
      if (counts[b] > counts[dominant]) dominant = b;
    if (counts[dominant] == 0) break;

    ++result.iterations_used;
    result.removed_bins.push_back(dominant);
    bin_removed[dominant] = 1;

    const bool first_iteration = result.iterations_used == 1;
    for (std::size_t i = 0; i < total_pixels; ++i) {
      if (background.bits[i]) continue;
      if (bin_of[i] == dominant || (first_iteration && bin_of[i] < 0)) {
        background.bits[i] = 1;
        ++background_count;
      }
    }
  }

  if (background_count == total_pixels)
    throw EmptyForeground("every pixel was labeled background");

  result.mask = PixelMask(image.width, image.height, false);
  for (std::size_t i = 0; i < total_pixels; ++i)
    result.mask.bits[i] = background.bits[i] ? 0 : 1;
  result.output = apply_black_background(image, result.mask);
  return result;
}

}  // namespace flora
