#pragma once

// Shared helpers for the test suite: temporary directories, finite-difference
// gradient checking, synthetic segmentation scenes, a minimal JPEG encoder for
// decode fixtures, and a subprocess runner for the command-line binary.

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <jpeglib.h>

#include "flora/image.hpp"
#include "flora/rng.hpp"

namespace testutil {

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "flora-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

// Combined relative/absolute comparison used by all gradient checks: the
// relative part dominates for large gradients, the floor absorbs
// finite-difference noise when both values are near zero.
inline bool grad_close(double analytic, double numeric, double rel = 1e-4,
                       double abs_floor = 1e-6) {
  const double diff = std::abs(analytic - numeric);
  return diff <= rel * std::max(std::abs(analytic), std::abs(numeric)) + abs_floor;
}

// Central difference d f / d*x computed by displacing *x in place.
inline double central_diff(const std::function<double()>& f, double* x, double eps = 1e-6) {
  const double keep = *x;
  *x = keep + eps;
  const double up = f();
  *x = keep - eps;
  const double down = f();
  *x = keep;
  return (up - down) / (2.0 * eps);
}

// A saturated frame filling the whole image with one hue family, plus a
// saturated disk of a contrasting hue. The base hues sit at least 28 degrees
// apart circularly; with +-4 degree per-pixel jitter every frame pixel stays
// at least 20 degrees (two histogram bins) from every disk pixel. The disk
// stays clear of the 2-pixel border band, so the band sees only frame pixels.
struct FrameDiskScene {
  flora::RgbImage image;
  flora::PixelMask truth;  // true on the disk
};

inline FrameDiskScene make_frame_disk(flora::Rng& rng, int size = 64) {
  const double frame_hue = rng.next_range(0.0, 360.0);
  const double disk_hue = std::fmod(frame_hue + rng.next_range(28.0, 332.0), 360.0);
  const double cx = rng.next_range(0.35, 0.65) * size;
  const double cy = rng.next_range(0.35, 0.65) * size;
  const double radius = rng.next_range(0.12, 0.25) * size;

  FrameDiskScene scene;
  scene.image = flora::RgbImage(size, size);
  scene.truth = flora::PixelMask(size, size, false);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const bool on_disk = dx * dx + dy * dy <= radius * radius;
      const double base = on_disk ? disk_hue : frame_hue;
      const double jitter = rng.next_range(-4.0, 4.0);
      const double sat = rng.next_range(0.8, 1.0);
      const double val = rng.next_range(0.7, 1.0);
      scene.image.at(x, y) = flora::hsv_to_rgb(base + jitter, sat, val);
      scene.truth.set(x, y, on_disk);
    }
  }
  return scene;
}

inline double mask_iou(const flora::PixelMask& a, const flora::PixelMask& b) {
  std::int64_t inter = 0, uni = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      const bool va = a.get(x, y), vb = b.get(x, y);
      inter += (va && vb) ? 1 : 0;
      uni += (va || vb) ? 1 : 0;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Compresses an image with libjpeg so decoder tests have a lossy fixture
// without shipping binary files.
inline std::vector<std::uint8_t> encode_jpeg(const flora::RgbImage& image, int quality = 95) {
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);

  unsigned char* buffer = nullptr;
  unsigned long buffer_size = 0;
  jpeg_mem_dest(&cinfo, &buffer, &buffer_size);

  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);

  std::vector<JSAMPLE> row(static_cast<std::size_t>(image.width) * 3);
  while (cinfo.next_scanline < cinfo.image_height) {
    const int y = static_cast<int>(cinfo.next_scanline);
    for (int x = 0; x < image.width; ++x) {
      const flora::Rgb& p = image.at(x, y);
      row[static_cast<std::size_t>(x) * 3 + 0] = p.r;
      row[static_cast<std::size_t>(x) * 3 + 1] = p.g;
      row[static_cast<std::size_t>(x) * 3 + 2] = p.b;
    }
    JSAMPROW rows[1] = {row.data()};
    jpeg_write_scanlines(&cinfo, rows, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<std::uint8_t> out(buffer, buffer + buffer_size);
  jpeg_destroy_compress(&cinfo);
  free(buffer);
  return out;
}

// ---- running the installed command-line binary ----

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

inline std::filesystem::path flora_binary() {
  const char* env = std::getenv("FLORA_BIN");
  if (env && *env) return env;
  return std::filesystem::current_path() / "flora";
}

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'')
      q += "'\\''";
    else
      q += c;
  }
  q += "'";
  return q;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::string text;
  if (FILE* f = std::fopen(p.c_str(), "rb")) {
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
    std::fclose(f);
  }
  return text;
}

inline CliResult run_cli(const std::vector<std::string>& args) {
  TempDir scratch;
  const auto out_path = scratch.path / "stdout.txt";
  const auto err_path = scratch.path / "stderr.txt";
  std::string cmd = shell_quote(flora_binary().string());
  for (const auto& a : args) cmd += " " + shell_quote(a);
  cmd += " > " + shell_quote(out_path.string()) + " 2> " + shell_quote(err_path.string());

  const int raw = std::system(cmd.c_str());
  CliResult result;
  if (raw == -1)
    result.exit_code = -1;
  else if (WIFEXITED(raw))
    result.exit_code = WEXITSTATUS(raw);
  else
    result.exit_code = 128;
  result.out = slurp(out_path);
  result.err = slurp(err_path);
  return result;
}

}  // namespace testutil
