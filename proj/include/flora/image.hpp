#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "flora/error.hpp"

namespace flora {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Rectangular grid of 8-bit RGB pixels, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill = {}) : width(w), height(h) {
    if (w < 1 || h < 1) throw DimensionMismatch("image dimensions must be >= 1");
    pixels.assign(static_cast<std::size_t>(w) * h, fill);
  }

  Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int x, int y) const {
    return pixels[static_cast<std::size_t>(y) * width + x];
  }
  std::size_t pixel_count() const { return pixels.size(); }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

// hue is absent exactly when saturation == 0 (achromatic pixel)
struct HsvPixel {
  std::optional<double> hue;  // degrees in [0, 360)
  double saturation = 0.0;    // [0, 1]
  double value = 0.0;         // [0, 1]
};

// One boolean per pixel; true = selected.
struct PixelMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  PixelMask() = default;
  PixelMask(int w, int h, bool fill = false) : width(w), height(h) {
    if (w < 1 || h < 1) throw DimensionMismatch("mask dimensions must be >= 1");
    bits.assign(static_cast<std::size_t>(w) * h, fill ? 1 : 0);
  }

  bool get(int x, int y) const {
    return bits[static_cast<std::size_t>(y) * width + x] != 0;
  }
  void set(int x, int y, bool v) {
    bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }
  bool matches(const RgbImage& img) const {
    return width == img.width && height == img.height;
  }
};

// Standard hexcone conversion. Hue comes back empty for achromatic input
// (max == min), which is exactly the saturation == 0 case.
inline HsvPixel rgb_to_hsv(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double rf = r / 255.0, gf = g / 255.0, bf = b / 255.0;
  const double mx = std::max({rf, gf, bf});
  const double mn = std::min({rf, gf, bf});
  const double delta = mx - mn;

  HsvPixel out;
  out.value = mx;
  out.saturation = (mx == 0.0) ? 0.0 : delta / mx;
  if (delta == 0.0) return out;  // hue undefined

  double h;
  if (mx == rf) {
    h = 60.0 * ((gf - bf) / delta);
  } else if (mx == gf) {
    h = 60.0 * ((bf - rf) / delta + 2.0);
  } else {
    h = 60.0 * ((rf - gf) / delta + 4.0);
  }
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h -= 360.0;
  out.hue = h;
  return out;
}

inline HsvPixel rgb_to_hsv(const Rgb& p) { return rgb_to_hsv(p.r, p.g, p.b); }

// Inverse hexcone conversion; h in degrees (wrapped into [0, 360)), s and v
// clamped to [0, 1].
inline Rgb hsv_to_rgb(double h, double s, double v) {
  s = std::clamp(s, 0.0, 1.0);
  v = std::clamp(v, 0.0, 1.0);
  h = std::fmod(h, 360.0);
  if (h < 0.0) h += 360.0;

  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double rf = 0, gf = 0, bf = 0;
  switch (static_cast<int>(hp)) {
    case 0: rf = c; gf = x; break;
    case 1: rf = x; gf = c; break;
    case 2: gf = c; bf = x; break;
    case 3: gf = x; bf = c; break;
    case 4: rf = x; bf = c; break;
    default: rf = c; bf = x; break;
  }
  const double m = v - c;
  auto to_byte = [](double f) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(f, 0.0, 1.0) * 255.0));
  };
  return {to_byte(rf + m), to_byte(gf + m), to_byte(bf + m)};
}

// Selects every pixel within ceil(band_fraction * min(w, h)) of any edge.
inline PixelMask border_mask(const RgbImage& image, double band_fraction) {
  if (!(band_fraction > 0.0) || band_fraction > 0.5)
    throw DimensionMismatch("band_fraction must be in (0, 0.5]");
  const int short_side = std::min(image.width, image.height);
  const int band = static_cast<int>(std::ceil(band_fraction * short_side));
  PixelMask mask(image.width, image.height, false);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const bool on_band = x < band || y < band || x >= image.width - band ||
                           y >= image.height - band;
      if (on_band) mask.set(x, y, true);
    }
  }
  return mask;
}

}  // namespace flora
