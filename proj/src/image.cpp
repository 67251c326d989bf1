#include "cfu/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include <fmt/format.h>

#include "cfu/error.hpp"

namespace cfu {

namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound(fmt::format("cannot open image '{}'", path.string()));
  if (pgm_token(in) != "P5") throw InvalidArgument(fmt::format("'{}' is not a binary PGM", path.string()));
  const long w = std::stol(pgm_token(in));
  const long h = std::stol(pgm_token(in));
  const long maxval = std::stol(pgm_token(in));
  if (w <= 0 || h <= 0 || maxval != 255) {
    throw InvalidArgument(fmt::format("unsupported PGM header in '{}'", path.string()));
  }
  GrayImage img(static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw InvalidArgument(fmt::format("truncated PGM '{}'", path.string()));
  }
  return img;
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

EllipseModel default_dish_ellipse(std::uint32_t width, std::uint32_t height) {
  EllipseModel e{width / 2.0, height / 2.0, 0.95 * width / 2.0, 0.95 * height / 2.0, 0.0};
  return normalized(e);
}

DishEstimate estimate_dish_ellipse(const GrayImage& img, const std::optional<EllipseModel>& fallback) {
  const DishEstimate fall{fallback ? *fallback : default_dish_ellipse(img.width, img.height), true};
  const std::uint32_t w = img.width, h = img.height;
  if (w < 3 || h < 3) return fall;

  std::vector<float> mag(std::size_t{w} * h, 0.0f);
  for (std::uint32_t y = 1; y + 1 < h; ++y) {
    for (std::uint32_t x = 1; x + 1 < w; ++x) {
      auto p = [&](std::uint32_t xx, std::uint32_t yy) { return static_cast<float>(img.at(xx, yy)); };
      const float gx = (p(x + 1, y - 1) + 2 * p(x + 1, y) + p(x + 1, y + 1)) -
                       (p(x - 1, y - 1) + 2 * p(x - 1, y) + p(x - 1, y + 1));
      const float gy = (p(x - 1, y + 1) + 2 * p(x, y + 1) + p(x + 1, y + 1)) -
                       (p(x - 1, y - 1) + 2 * p(x, y - 1) + p(x + 1, y - 1));
      mag[std::size_t{y} * w + x] = std::sqrt(gx * gx + gy * gy);
    }
  }

  std::vector<float> sorted = mag;
  const std::size_t k = static_cast<std::size_t>(0.99 * static_cast<double>(sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
  const float threshold = sorted[k];
  if (!(threshold > 0)) return fall;

  // Largest 8-connected set of edge pixels.
  std::vector<std::int32_t> label(mag.size(), -1);
  std::vector<std::size_t> stack;
  std::vector<std::size_t> best, current;
  for (std::size_t start = 0; start < mag.size(); ++start) {
    if (mag[start] < threshold || label[start] >= 0) continue;
    current.clear();
    stack.push_back(start);
    label[start] = 1;
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      current.push_back(idx);
      const long x = static_cast<long>(idx % w), y = static_cast<long>(idx / w);
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          const long nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= long{w} || ny >= long{h}) continue;
          const std::size_t n = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
          if (mag[n] >= threshold && label[n] < 0) {
            label[n] = 1;
            stack.push_back(n);
          }
        }
      }
    }
    if (current.size() > best.size()) best.swap(current);
  }

  std::vector<Point2> pts;
  pts.reserve(best.size());
  for (auto idx : best) pts.push_back({static_cast<double>(idx % w) + 0.5, static_cast<double>(idx / w) + 0.5});
  try {
    const EllipseModel e = fit_ellipse(pts);
    const double diagonal = std::hypot(static_cast<double>(w), static_cast<double>(h));
    if (2 * e.a < 0.5 * diagonal) return fall;
    return {e, false};
  } catch (const GeometryError&) {
    return fall;
  }
}

}  // namespace cfu
