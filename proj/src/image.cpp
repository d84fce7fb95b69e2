#include "evoart/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace evoart {

std::uint8_t tonemap_channel(double radiance) {
  const double clamped = std::isnan(radiance) ? 0.0 : std::clamp(radiance, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * std::pow(clamped, 1.0 / kDisplayGamma)));
}

Image8 tonemap(const Film& film) {
  Image8 image{film.width, film.height, {}};
  image.rgb.reserve(film.pixels.size() * 3);
  for (const Rgb& p : film.pixels) {
    image.rgb.push_back(tonemap_channel(p.x));
    image.rgb.push_back(tonemap_channel(p.y));
    image.rgb.push_back(tonemap_channel(p.z));
  }
  return image;
}

Film film_from_image(const Image8& image) {
  Film film(image.width, image.height);
  auto lin = [](std::uint8_t b) { return std::pow(b / 255.0, kDisplayGamma); };
  for (std::size_t i = 0; i < film.pixels.size(); ++i) {
    film.pixels[i] = {lin(image.rgb[3 * i]), lin(image.rgb[3 * i + 1]), lin(image.rgb[3 * i + 2])};
  }
  return film;
}

namespace {

struct ReadCursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

void png_write_to_vector(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

void png_flush_noop(png_structp) {}

void png_read_from_buffer(png_structp png, png_bytep data, png_size_t length) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + length > cursor->size) png_error(png, "unexpected end of data");
  std::memcpy(data, cursor->data + cursor->offset, length);
  cursor->offset += length;
}

// libpng reports errors by longjmp to png_jmpbuf. Everything between the
// setjmp and the last libpng call is kept free of non-trivial locals.
bool write_png_rows(png_structp png, png_infop info, const Image8& image, std::vector<std::uint8_t>* out) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_write_fn(png, out, png_write_to_vector, png_flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
  for (int y = 0; y < image.height; ++y) png_write_row(png, image.rgb.data() + y * stride);
  png_write_end(png, nullptr);
  return true;
}

bool read_png_header(png_structp png, png_infop info, ReadCursor* cursor, int* width, int* height,
                     std::size_t* stride) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_set_read_fn(png, cursor, png_read_from_buffer);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (png_get_bit_depth(png, info) < 8) png_set_expand(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  *width = static_cast<int>(png_get_image_width(png, info));
  *height = static_cast<int>(png_get_image_height(png, info));
  *stride = png_get_rowbytes(png, info);
  return true;
}

bool read_png_pixels(png_structp png, png_bytepp rows) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_read_image(png, rows);
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image) {
  if (image.width <= 0 || image.height <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.width) * image.height * 3)
    throw ImageError("encode_png: inconsistent image dimensions");

  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageError("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  const bool ok = info && write_png_rows(png, info, image, &out);
  png_destroy_write_struct(&png, &info);
  if (!ok) throw ImageError("png: encoding failed");
  return out;
}

Image8 decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ImageError("not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageError("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  ReadCursor cursor{bytes.data(), bytes.size(), 0};
  Image8 image;
  std::size_t stride = 0;
  bool ok = info && read_png_header(png, info, &cursor, &image.width, &image.height, &stride);
  if (ok && stride != static_cast<std::size_t>(image.width) * 3) ok = false;
  if (ok) {
    image.rgb.resize(stride * image.height);
    std::vector<png_bytep> rows(image.height);
    for (int y = 0; y < image.height; ++y) rows[y] = image.rgb.data() + y * stride;
    ok = read_png_pixels(png, rows.data());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw ImageError("png: decoding failed");
  return image;
}

void write_png(const Image8& image, const std::string& path) {
  const auto bytes = encode_png(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError("failed writing " + path);
}

Image8 read_png(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open " + path);
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_png(bytes);
}

}  // namespace evoart
