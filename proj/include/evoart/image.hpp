#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "evoart/render.hpp"

namespace evoart {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit RGB, row-major, interleaved.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  bool operator==(const Image8&) const = default;
};

inline constexpr double kDisplayGamma = 2.2;

// Clamp to [0,1], encode with exponent 1/2.2, round to the nearest of 256 levels.
std::uint8_t tonemap_channel(double radiance);
Image8 tonemap(const Film& film);

// Inverse of tonemap up to quantization; used to load reference images.
Film film_from_image(const Image8& image);

std::vector<std::uint8_t> encode_png(const Image8& image);
Image8 decode_png(std::span<const std::uint8_t> bytes);

void write_png(const Image8& image, const std::string& path);
Image8 read_png(const std::string& path);

}  // namespace evoart
