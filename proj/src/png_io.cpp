// PNG codecs for KITTI depth maps (16-bit gray) and 8-bit RGB images.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "multidepth/data.hpp"
#include "multidepth/errors.hpp"

namespace multidepth {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

struct Decoded {
  std::size_t height = 0, width = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<png_byte> data;  // rows after transforms
  std::size_t rowbytes = 0;
};

enum class ReadMode { raw16gray, rgb8 };

Decoded decode_png(const std::string& path, ReadMode mode) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("cannot open '" + path + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError("'" + path + "' is not a PNG file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw FormatError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  Decoded out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("failed to decode '" + path + "': " + err);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  out.color_type = png_get_color_type(png, info);

  if (mode == ReadMode::raw16gray) {
    if (out.bit_depth != 16 || out.color_type != PNG_COLOR_TYPE_GRAY) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw FormatError("'" + path + "' is not a 16-bit single-channel PNG");
    }
  } else {
    if (out.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (out.color_type == PNG_COLOR_TYPE_GRAY || out.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      if (out.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
      png_set_gray_to_rgb(png);
    }
    if (out.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (out.bit_depth == 16) png_set_strip_16(png);
  }
  png_read_update_info(png, info);
  out.rowbytes = png_get_rowbytes(png, info);
  out.data.resize(out.rowbytes * out.height);
  rows.resize(out.height);
  for (std::size_t r = 0; r < out.height; ++r) rows[r] = out.data.data() + r * out.rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void encode_png(const std::string& path, std::size_t height, std::size_t width, int bit_depth, int color_type,
                const std::vector<png_byte>& data, std::size_t rowbytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw FormatError("cannot write '" + path + "'");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  if (!png) throw FormatError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("failed to encode '" + path + "': " + err);
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < height; ++r) rows[r] = const_cast<png_bytep>(data.data() + r * rowbytes);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

DepthMap read_kitti_png(const std::string& path) {
  Decoded d = decode_png(path, ReadMode::raw16gray);
  DepthMap m = DepthMap::empty(d.height, d.width);
  for (std::size_t r = 0; r < d.height; ++r)
    for (std::size_t c = 0; c < d.width; ++c) {
      // PNG stores 16-bit samples big-endian.
      const png_byte* p = d.data.data() + r * d.rowbytes + 2 * c;
      const unsigned v = (static_cast<unsigned>(p[0]) << 8) | p[1];
      const std::size_t i = r * d.width + c;
      if (v != 0) {
        m.depth[i] = static_cast<double>(v) / 256.0;
        m.valid[i] = 1;
      }
    }
  return m;
}

void write_kitti_png(const DepthMap& map, const std::string& path) {
  if (map.depth.size() != map.size() || map.valid.size() != map.size() || map.size() == 0)
    throw ShapeError("depth map storage mismatch");
  const std::size_t rowbytes = 2 * map.width;
  std::vector<png_byte> data(rowbytes * map.height);
  for (std::size_t i = 0; i < map.size(); ++i) {
    unsigned v = 0;
    if (map.valid[i]) {
      if (!(map.depth[i] > 0.0) || !std::isfinite(map.depth[i]))
        throw DomainError("valid pixel with non-positive depth");
      // Valid pixels never encode as 0, which would read back as invalid.
      const double q = std::round(map.depth[i] * 256.0);
      v = static_cast<unsigned>(std::clamp(q, 1.0, 65535.0));
    }
    data[2 * i] = static_cast<png_byte>(v >> 8);
    data[2 * i + 1] = static_cast<png_byte>(v & 0xff);
  }
  encode_png(path, map.height, map.width, 16, PNG_COLOR_TYPE_GRAY, data, rowbytes);
}

RgbImage read_rgb_png(const std::string& path) {
  Decoded d = decode_png(path, ReadMode::rgb8);
  RgbImage img;
  img.height = d.height;
  img.width = d.width;
  img.planes.resize(3 * d.height * d.width);
  const std::size_t plane = d.height * d.width;
  for (std::size_t r = 0; r < d.height; ++r)
    for (std::size_t c = 0; c < d.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch)
        img.planes[ch * plane + r * d.width + c] =
            static_cast<double>(d.data[r * d.rowbytes + 3 * c + ch]) / 255.0;
  return img;
}

void write_rgb_png(const RgbImage& image, const std::string& path) {
  const std::size_t plane = image.height * image.width;
  if (image.planes.size() != 3 * plane || plane == 0) throw ShapeError("rgb image storage mismatch");
  const std::size_t rowbytes = 3 * image.width;
  std::vector<png_byte> data(rowbytes * image.height);
  for (std::size_t r = 0; r < image.height; ++r)
    for (std::size_t c = 0; c < image.width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(image.planes[ch * plane + r * image.width + c], 0.0, 1.0);
        data[r * rowbytes + 3 * c + ch] = static_cast<png_byte>(std::lround(v * 255.0));
      }
  encode_png(path, image.height, image.width, 8, PNG_COLOR_TYPE_RGB, data, rowbytes);
}

}  // namespace multidepth
