#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace cfu {

// Axis-aligned box in continuous pixel coordinates. Pixel (i, j) covers
// [i, i+1) x [j, j+1), so its center is (i + 0.5, j + 0.5).
struct BBox {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max; }

  // Interchange form is [x, y, w, h].
  static BBox from_xywh(double x, double y, double w, double h) {
    return {x, y, x + w, y + h};
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Binary mask in uncompressed run-length form. Runs alternate
// background/foreground, starting with background (possibly a zero-length
// run), scanning column-major: pixel (x, y) is at position x * height + y.
struct RleMask {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint32_t> counts;

  friend bool operator==(const RleMask&, const RleMask&) = default;
};

// Dense binary mask, row-major (index y * width + x). Only used at the
// edges: rasterization, rendering and tests.
struct DenseMask {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> pixels;

  DenseMask() = default;
  DenseMask(std::uint32_t w, std::uint32_t h) : width(w), height(h), pixels(std::size_t{w} * h, 0) {}

  std::uint8_t& at(std::uint32_t x, std::uint32_t y) { return pixels[std::size_t{y} * width + x]; }
  std::uint8_t at(std::uint32_t x, std::uint32_t y) const { return pixels[std::size_t{y} * width + x]; }

  friend bool operator==(const DenseMask&, const DenseMask&) = default;
};

struct Point2 {
  double x = 0;
  double y = 0;
};

// Petri-dish boundary. Normalized form has a >= b > 0 and theta in [0, pi).
struct EllipseModel {
  double cx = 0;
  double cy = 0;
  double a = 1;
  double b = 1;
  double theta = 0;

  // ((x'/a)^2 + (y'/b)^2) in the ellipse frame; <= 1 is inside.
  double level(double x, double y) const;
  bool contains(double x, double y) const { return level(x, y) <= 1.0; }
  double area() const;
  bool valid() const;

  friend bool operator==(const EllipseModel&, const EllipseModel&) = default;
};

// Returns the same ellipse with a >= b and theta folded into [0, pi).
// Throws InvalidArgument for non-positive or non-finite axes.
EllipseModel normalized(EllipseModel e);

// --- RLE -------------------------------------------------------------------

RleMask encode(const DenseMask& dense);
// From strictly increasing column-major positions (x * height + y).
RleMask encode_positions(std::span<const std::uint64_t> sorted_positions, std::uint32_t width,
                         std::uint32_t height);
DenseMask decode(const RleMask& rle);
// Runs sum to width * height and only the first run may be zero.
bool well_formed(const RleMask& rle);

std::uint64_t mask_area(const RleMask& m);
// Tight box of the foreground; nullopt for an empty mask.
std::optional<BBox> tight_bbox(const RleMask& m);

// Calls f(x, y) for every foreground pixel, in scan order.
template <typename F>
void for_each_foreground(const RleMask& m, F&& f) {
  std::uint64_t pos = 0;
  const std::uint64_t h = m.height;
  for (std::size_t i = 0; i < m.counts.size(); ++i) {
    const std::uint64_t run = m.counts[i];
    if (i % 2 == 1) {
      for (std::uint64_t p = pos; p < pos + run; ++p) {
        f(static_cast<std::uint32_t>(p / h), static_cast<std::uint32_t>(p % h));
      }
    }
    pos += run;
  }
}

double iou_bbox(const BBox& p, const BBox& q);
// Throws InvalidArgument on dimension mismatch. Two empty masks give 0.
double iou_mask(const RleMask& p, const RleMask& q);
std::uint64_t intersection_area(const RleMask& p, const RleMask& q);

// Pixel-center rasterization of polygons (x0, y0, x1, y1, ...) with the
// even-odd rule; the union of all polygons.
RleMask rasterize_polygons(const std::vector<std::vector<double>>& polygons, std::uint32_t width,
                           std::uint32_t height);

// --- Ellipse ---------------------------------------------------------------

// Direct least-squares ellipse-specific conic fit (Halir-Flusser numerics).
// Throws GeometryError for < 6 points or degenerate configurations.
EllipseModel fit_ellipse(std::span<const Point2> points);

EllipseModel shrink_ellipse(const EllipseModel& e, double factor);

// True iff some foreground pixel center (or, without a mask, a bbox corner or
// the bbox center) lies inside or on the ellipse.
bool region_touches_ellipse(const std::optional<RleMask>& mask, const BBox& box,
                            const EllipseModel& e);

}  // namespace cfu
