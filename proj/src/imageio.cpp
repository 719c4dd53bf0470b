// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsir/imageio.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace lsir {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw ValidationError("cannot open file: " + path);
  return f;
}

}  // namespace

void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw ValidationError("PFM supports 1 or 3 channels: " + path);
  FilePtr f = open_or_throw(path, "wb");
  std::fprintf(f.get(), "%s\n%d %d\n-1.0\n",
               img.channels == 3 ? "PF" : "Pf", img.width, img.height);
  std::vector<float> row(static_cast<size_t>(img.width) * img.channels);
  for (int y = img.height - 1; y >= 0; --y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        row[static_cast<size_t>(x) * img.channels + c] =
            static_cast<float>(img.at(x, y, c));
    if (std::fwrite(row.data(), sizeof(float), row.size(), f.get()) !=
        row.size())
      throw ValidationError("short write: " + path);
  }
}

Image read_pfm(const std::string& path) {
  FilePtr f = open_or_throw(path, "rb");
  char tag[3] = {};
  if (std::fscanf(f.get(), "%2s", tag) != 1)
    throw ValidationError("truncated PFM header: " + path);
  int channels;
  if (std::strcmp(tag, "PF") == 0)
    channels = 3;
  else if (std::strcmp(tag, "Pf") == 0)
    channels = 1;
  else
    throw ValidationError("not a PFM file: " + path);
  int w, h;
  double scale;
  if (std::fscanf(f.get(), "%d %d %lf", &w, &h, &scale) != 3 || w <= 0 ||
      h <= 0 || scale == 0.0)
    throw ValidationError("malformed PFM header: " + path);
  std::fgetc(f.get());  // single whitespace after the scale
  Image img(w, h, channels);
  std::vector<float> row(static_cast<size_t>(w) * channels);
  bool little_endian = scale < 0.0;
  for (int i = 0; i < h; ++i) {
    int y = img.height - 1 - i;  // PFM rows run bottom to top
    if (std::fread(row.data(), sizeof(float), row.size(), f.get()) !=
        row.size())
      throw ValidationError("truncated PFM data: " + path);
    if (!little_endian) {
      for (float& v : row) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        bits = __builtin_bswap32(bits);
        std::memcpy(&v, &bits, 4);
      }
    }
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.at(x, y, c) = row[static_cast<size_t>(x) * channels + c];
  }
  return img;
}

void write_png16(const std::string& path, const Image& img,
                 bool gamma_encode) {
  if (img.channels != 1 && img.channels != 3)
    throw ValidationError("PNG writer supports 1 or 3 channels: " + path);
  FilePtr f = open_or_throw(path, "wb");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("libpng write failure: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 16,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<uint16_t> row(static_cast<size_t>(img.width) * img.channels);
  std::vector<png_byte> raw(row.size() * 2);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        double v = img.at(x, y, c);
        if (gamma_encode) v = std::pow(clamp01(v), 1.0 / 2.2);
        v = clamp01(v);
        row[static_cast<size_t>(x) * img.channels + c] =
            static_cast<uint16_t>(std::lround(v * 65535.0));
      }
    }
    for (size_t i = 0; i < row.size(); ++i) {  // PNG samples are big-endian
      raw[2 * i] = static_cast<png_byte>(row[i] >> 8);
      raw[2 * i + 1] = static_cast<png_byte>(row[i] & 0xff);
    }
    png_write_row(png, raw.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png16(const std::string& path, bool gamma_decode) {
  FilePtr f = open_or_throw(path, "rb");
  png_byte header[8];
  if (std::fread(header, 1, 8, f.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw ValidationError("not a PNG file: " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("libpng read failure (truncated?): " + path);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_set_expand(png);          // palette/low-bit -> full bytes
  png_set_expand_16(png);       // 8 -> 16 bit, value*257
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int w = static_cast<int>(png_get_image_width(png, info));
  int h = static_cast<int>(png_get_image_height(png, info));
  int color = png_get_color_type(png, info);
  int channels = (color == PNG_COLOR_TYPE_GRAY) ? 1 : 3;
  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("unsupported PNG color type: " + path);
  }

  Image img(w, h, channels);
  std::vector<png_byte> raw(static_cast<size_t>(w) * channels * 2);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, raw.data(), nullptr);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        size_t i = (static_cast<size_t>(x) * channels + c) * 2;
        uint16_t v16 = static_cast<uint16_t>((raw[i] << 8) | raw[i + 1]);
        double v = v16 / 65535.0;
        if (gamma_decode) v = std::pow(v, 2.2);
        img.at(x, y, c) = v;
      }
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image load_image(const std::string& path) {
  auto ends_with = [&](const char* suf) {
    size_t n = std::strlen(suf);
    return path.size() >= n &&
           path.compare(path.size() - n, n, suf) == 0;
  };
  if (ends_with(".pfm") || ends_with(".PFM")) return read_pfm(path);
  if (ends_with(".png") || ends_with(".PNG")) return read_png16(path, true);
  throw ValidationError("unsupported image format (want .png or .pfm): " +
                        path);
}

}  // namespace lsir
