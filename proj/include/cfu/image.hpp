#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cfu/geometry.hpp"

namespace cfu {

// 8-bit grayscale raster, row-major.
struct GrayImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::uint32_t w, std::uint32_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(std::size_t{w} * h, fill) {}

  std::uint8_t& at(std::uint32_t x, std::uint32_t y) { return pixels[std::size_t{y} * width + x]; }
  std::uint8_t at(std::uint32_t x, std::uint32_t y) const { return pixels[std::size_t{y} * width + x]; }
};

// Binary PGM (P5, maxval 255).
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& img, const std::filesystem::path& path);

struct DishEstimate {
  EllipseModel ellipse;
  bool from_fallback = false;
};

// Sobel gradient magnitude thresholded at its 99th percentile, largest
// 8-connected edge set, then fit_ellipse. Falls back when the fit fails or
// its major diameter is under half the image diagonal.
DishEstimate estimate_dish_ellipse(const GrayImage& img,
                                   const std::optional<EllipseModel>& fallback = std::nullopt);

// Centered ellipse inscribed at 95% of the image half-extents.
EllipseModel default_dish_ellipse(std::uint32_t width, std::uint32_t height);

}  // namespace cfu
