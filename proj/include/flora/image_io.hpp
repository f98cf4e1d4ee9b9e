#pragma once

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "flora/error.hpp"
#include "flora/image.hpp"

namespace flora {

static_assert(sizeof(Rgb) == 3, "Rgb must be tightly packed for row I/O");

namespace detail {

struct ByteCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

inline void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* cur = static_cast<ByteCursor*>(png_get_io_ptr(png));
  if (cur->pos + len > cur->size) {
    png_error(png, "read past end of stream");
    return;
  }
  std::memcpy(out, cur->data + cur->pos, len);
  cur->pos += len;
}

inline void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + len);
}

inline void png_flush_cb(png_structp) {}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

inline void jpeg_error_exit_cb(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

inline void jpeg_silent_output_cb(j_common_ptr) {}

inline bool looks_like_png(const std::uint8_t* p, std::size_t n) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return n >= 8 && std::memcmp(p, sig, 8) == 0;
}

inline bool looks_like_jpeg(const std::uint8_t* p, std::size_t n) {
  return n >= 3 && p[0] == 0xff && p[1] == 0xd8 && p[2] == 0xff;
}

inline RgbImage decode_png_bytes(const std::uint8_t* data, std::size_t size) {
  ByteCursor cur{data, size, 0};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw MalformedImage("libpng: read struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw MalformedImage("libpng: info struct allocation failed");
  }

  RgbImage img;
  std::vector<png_bytep> rows;
  volatile bool ok = false;
  if (setjmp(png_jmpbuf(png)) == 0) {
    png_set_read_fn(png, &cur, png_read_cb);
    png_read_info(png, info);

    // Normalize every PNG variant to packed 8-bit RGB.
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const png_uint_32 w = png_get_image_width(png, info);
    const png_uint_32 h = png_get_image_height(png, info);
    if (w >= 1 && h >= 1 && png_get_rowbytes(png, info) == 3 * w) {
      img = RgbImage(static_cast<int>(w), static_cast<int>(h));
      rows.resize(h);
      for (png_uint_32 y = 0; y < h; ++y)
        rows[y] = reinterpret_cast<png_bytep>(&img.at(0, static_cast<int>(y)));
      png_read_image(png, rows.data());
      png_read_end(png, nullptr);
      ok = true;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw MalformedImage("invalid PNG stream");
  return img;
}

inline RgbImage decode_jpeg_bytes(const std::uint8_t* data, std::size_t size) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = jpeg_error_exit_cb;
  err.pub.output_message = jpeg_silent_output_cb;

  RgbImage img;
  volatile bool ok = false;
  jpeg_create_decompress(&cinfo);
  if (setjmp(err.jump) == 0) {
    jpeg_mem_src(&cinfo, data, static_cast<unsigned long>(size));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    const int w = static_cast<int>(cinfo.output_width);
    const int h = static_cast<int>(cinfo.output_height);
    if (w >= 1 && h >= 1 && cinfo.output_components == 3) {
      img = RgbImage(w, h);
      while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = reinterpret_cast<JSAMPROW>(
            &img.at(0, static_cast<int>(cinfo.output_scanline)));
        jpeg_read_scanlines(&cinfo, &row, 1);
      }
      jpeg_finish_decompress(&cinfo);
      ok = true;
    }
  }
  jpeg_destroy_decompress(&cinfo);
  if (!ok) throw MalformedImage("invalid JPEG stream");
  return img;
}

}  // namespace detail

// Decodes a PNG or JPEG byte stream. Anything else is MalformedImage.
inline RgbImage decode_image(const std::vector<std::uint8_t>& file_bytes) {
  if (detail::looks_like_png(file_bytes.data(), file_bytes.size()))
    return detail::decode_png_bytes(file_bytes.data(), file_bytes.size());
  if (detail::looks_like_jpeg(file_bytes.data(), file_bytes.size()))
    return detail::decode_jpeg_bytes(file_bytes.data(), file_bytes.size());
  throw MalformedImage("byte stream is neither PNG nor JPEG");
}

// Lossless 8-bit RGB PNG; decode_image(encode_png(x)) == x.
inline std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  if (image.width < 1 || image.height < 1 || image.pixel_count() !=
      static_cast<std::size_t>(image.width) * image.height)
    throw MalformedImage("cannot encode an invalid image");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw MalformedImage("libpng: write struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw MalformedImage("libpng: info struct allocation failed");
  }

  std::vector<std::uint8_t> out;
  std::vector<png_bytep> rows(image.height);
  volatile bool ok = false;
  if (setjmp(png_jmpbuf(png)) == 0) {
    png_set_write_fn(png, &out, detail::png_write_cb, detail::png_flush_cb);
    png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y)
      rows[y] = const_cast<png_bytep>(
          reinterpret_cast<const std::uint8_t*>(&image.at(0, y)));
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    ok = true;
  }
  png_destroy_write_struct(&png, &info);
  if (!ok) throw MalformedImage("PNG encoding failed");
  return out;
}

// 1-bit black/white PNG of a mask (true = white).
inline std::vector<std::uint8_t> encode_mask_png(const PixelMask& mask) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw MalformedImage("libpng: write struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw MalformedImage("libpng: info struct allocation failed");
  }

  std::vector<std::uint8_t> out;
  std::vector<png_bytep> rows(mask.height);
  volatile bool ok = false;
  if (setjmp(png_jmpbuf(png)) == 0) {
    png_set_write_fn(png, &out, detail::png_write_cb, detail::png_flush_cb);
    png_set_IHDR(png, info, mask.width, mask.height, 1, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_set_packing(png);  // rows arrive one byte per pixel
    for (int y = 0; y < mask.height; ++y)
      rows[y] = const_cast<png_bytep>(&mask.bits[static_cast<std::size_t>(y) * mask.width]);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    ok = true;
  }
  png_destroy_write_struct(&png, &info);
  if (!ok) throw MalformedImage("mask PNG encoding failed");
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoFailure("read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path,
                       const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoFailure("write failed: " + path.string());
}

inline std::string read_file_text(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open for writing: " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoFailure("write failed: " + path.string());
}

inline RgbImage load_image(const std::filesystem::path& path) {
  return decode_image(read_file(path));
}

inline void save_png(const std::filesystem::path& path, const RgbImage& image) {
  write_file(path, encode_png(image));
}

}  // namespace flora
