#include "cfu/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "cfu/error.hpp"

namespace cfu {

double EllipseModel::level(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double u = (c * dx + s * dy) / a;
  const double v = (-s * dx + c * dy) / b;
  return u * u + v * v;
}

double EllipseModel::area() const { return std::numbers::pi * a * b; }

bool EllipseModel::valid() const {
  return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(a) && std::isfinite(b) &&
         std::isfinite(theta) && b > 0 && a >= b && theta >= 0 && theta < std::numbers::pi;
}

EllipseModel normalized(EllipseModel e) {
  if (!(std::isfinite(e.a) && std::isfinite(e.b) && e.a > 0 && e.b > 0) || !std::isfinite(e.theta) ||
      !std::isfinite(e.cx) || !std::isfinite(e.cy)) {
    throw InvalidArgument("ellipse axes must be finite and positive");
  }
  if (e.a < e.b) {
    std::swap(e.a, e.b);
    e.theta += std::numbers::pi / 2;
  }
  e.theta = std::fmod(e.theta, std::numbers::pi);
  if (e.theta < 0) e.theta += std::numbers::pi;
  if (e.theta >= std::numbers::pi) e.theta = 0;
  return e;
}

// --- RLE -------------------------------------------------------------------

RleMask encode(const DenseMask& dense) {
  RleMask r{dense.width, dense.height, {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (std::uint32_t x = 0; x < dense.width; ++x) {
    for (std::uint32_t y = 0; y < dense.height; ++y) {
      const std::uint8_t v = dense.at(x, y) ? 1 : 0;
      if (v != current) {
        r.counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  r.counts.push_back(run);
  return r;
}

RleMask encode_positions(std::span<const std::uint64_t> sorted_positions, std::uint32_t width,
                         std::uint32_t height) {
  RleMask r{width, height, {}};
  const std::uint64_t total = std::uint64_t{width} * height;
  std::uint64_t cursor = 0;
  std::size_t i = 0;
  while (i < sorted_positions.size()) {
    const std::uint64_t start = sorted_positions[i];
    if (start < cursor || start >= total) throw InvalidArgument("positions must be increasing and inside the mask");
    std::size_t j = i + 1;
    while (j < sorted_positions.size() && sorted_positions[j] == sorted_positions[j - 1] + 1) ++j;
    r.counts.push_back(static_cast<std::uint32_t>(start - cursor));
    r.counts.push_back(static_cast<std::uint32_t>(j - i));
    cursor = start + (j - i);
    i = j;
  }
  if (cursor < total || r.counts.empty()) r.counts.push_back(static_cast<std::uint32_t>(total - cursor));
  return r;
}

DenseMask decode(const RleMask& rle) {
  DenseMask d(rle.width, rle.height);
  for_each_foreground(rle, [&](std::uint32_t x, std::uint32_t y) { d.at(x, y) = 1; });
  return d;
}

bool well_formed(const RleMask& rle) {
  if (rle.counts.empty()) return false;
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < rle.counts.size(); ++i) {
    // Only the leading background run may be empty.
    if (i > 0 && rle.counts[i] == 0) return false;
    total += rle.counts[i];
  }
  return total == std::uint64_t{rle.width} * rle.height;
}

std::uint64_t mask_area(const RleMask& m) {
  std::uint64_t area = 0;
  for (std::size_t i = 1; i < m.counts.size(); i += 2) area += m.counts[i];
  return area;
}

std::optional<BBox> tight_bbox(const RleMask& m) {
  if (m.height == 0) return std::nullopt;
  const std::uint64_t h = m.height;
  std::uint64_t pos = 0;
  std::uint64_t x_lo = UINT64_MAX, x_hi = 0, y_lo = UINT64_MAX, y_hi = 0;
  bool any = false;
  for (std::size_t i = 0; i < m.counts.size(); ++i) {
    const std::uint64_t run = m.counts[i];
    if (i % 2 == 1 && run > 0) {
      const std::uint64_t first = pos;
      const std::uint64_t last = pos + run - 1;
      const std::uint64_t x0 = first / h, x1 = last / h;
      x_lo = std::min(x_lo, x0);
      x_hi = std::max(x_hi, x1);
      if (x0 == x1) {
        y_lo = std::min(y_lo, first % h);
        y_hi = std::max(y_hi, last % h);
      } else {
        y_lo = 0;
        y_hi = h - 1;
      }
      any = true;
    }
    pos += run;
  }
  if (!any) return std::nullopt;
  return BBox{static_cast<double>(x_lo), static_cast<double>(y_lo), static_cast<double>(x_hi + 1),
              static_cast<double>(y_hi + 1)};
}

double iou_bbox(const BBox& p, const BBox& q) {
  const double iw = std::min(p.x_max, q.x_max) - std::max(p.x_min, q.x_min);
  const double ih = std::min(p.y_max, q.y_max) - std::max(p.y_min, q.y_min);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = p.area() + q.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::uint64_t intersection_area(const RleMask& p, const RleMask& q) {
  if (p.width != q.width || p.height != q.height) {
    throw InvalidArgument(fmt::format("mask dimension mismatch: {}x{} vs {}x{}", p.width, p.height,
                                      q.width, q.height));
  }
  std::size_t i = 0, j = 0;
  const std::size_t np = p.counts.size(), nq = q.counts.size();
  if (np == 0 || nq == 0) return 0;
  std::uint64_t ri = p.counts[0], rj = q.counts[0];
  bool fi = false, fj = false;
  std::uint64_t inter = 0;
  while (i < np && j < nq) {
    const std::uint64_t step = std::min(ri, rj);
    if (fi && fj) inter += step;
    ri -= step;
    rj -= step;
    if (ri == 0) {
      if (++i < np) ri = p.counts[i];
      fi = !fi;
    }
    if (rj == 0) {
      if (++j < nq) rj = q.counts[j];
      fj = !fj;
    }
  }
  return inter;
}

double iou_mask(const RleMask& p, const RleMask& q) {
  const std::uint64_t inter = intersection_area(p, q);
  const std::uint64_t uni = mask_area(p) + mask_area(q) - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

RleMask rasterize_polygons(const std::vector<std::vector<double>>& polygons, std::uint32_t width,
                           std::uint32_t height) {
  DenseMask dense(width, height);
  std::vector<double> crossings;
  for (const auto& poly : polygons) {
    if (poly.size() < 6 || poly.size() % 2 != 0) {
      throw InvalidArgument("polygon needs at least 3 (x, y) vertices");
    }
    const std::size_t n = poly.size() / 2;
    for (std::uint32_t y = 0; y < height; ++y) {
      const double yc = y + 0.5;
      crossings.clear();
      for (std::size_t k = 0; k < n; ++k) {
        const double x0 = poly[2 * k], y0 = poly[2 * k + 1];
        const double x1 = poly[2 * ((k + 1) % n)], y1 = poly[2 * ((k + 1) % n) + 1];
        if ((y0 <= yc) != (y1 <= yc)) {
          crossings.push_back(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
        }
      }
      std::sort(crossings.begin(), crossings.end());
      for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
        // pixel centers in [left, right)
        const double left = crossings[k], right = crossings[k + 1];
        const long first = static_cast<long>(std::ceil(left - 0.5));
        const long last = static_cast<long>(std::ceil(right - 0.5)) - 1;
        for (long x = std::max(0L, first); x <= std::min<long>(last, long{width} - 1); ++x) {
          dense.at(static_cast<std::uint32_t>(x), y) = 1;
        }
      }
    }
  }
  return encode(dense);
}

// --- Ellipse ---------------------------------------------------------------

namespace {

struct Conic {
  double A, B, C, D, E, F;
};

EllipseModel conic_to_ellipse(Conic q) {
  if (q.A < 0) {
    q = {-q.A, -q.B, -q.C, -q.D, -q.E, -q.F};
  }
  const double den = 4 * q.A * q.C - q.B * q.B;
  if (!(den > 0)) throw GeometryError("conic is not an ellipse");
  const double cx = (q.B * q.E - 2 * q.C * q.D) / den;
  const double cy = (q.B * q.D - 2 * q.A * q.E) / den;
  const double f0 = q.A * cx * cx + q.B * cx * cy + q.C * cy * cy + q.D * cx + q.E * cy + q.F;
  if (!(f0 < 0)) throw GeometryError("conic has no real points");

  Eigen::Matrix2d quad;
  quad << q.A, q.B / 2, q.B / 2, q.C;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(quad);
  const auto lambda = es.eigenvalues();  // ascending
  if (!(lambda(0) > 0)) throw GeometryError("conic is not an ellipse");
  EllipseModel e;
  e.cx = cx;
  e.cy = cy;
  e.a = std::sqrt(-f0 / lambda(0));
  e.b = std::sqrt(-f0 / lambda(1));
  const Eigen::Vector2d major = es.eigenvectors().col(0);
  e.theta = std::atan2(major(1), major(0));
  return e;
}

}  // namespace

EllipseModel fit_ellipse(std::span<const Point2> points) {
  const std::size_t n = points.size();
  if (n < 6) throw GeometryError(fmt::format("ellipse fit needs at least 6 points, got {}", n));

  double mx = 0, my = 0;
  for (const auto& p : points) {
    mx += p.x;
    my += p.y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double spread = 0;
  for (const auto& p : points) spread += (p.x - mx) * (p.x - mx) + (p.y - my) * (p.y - my);
  const double scale = std::sqrt(spread / static_cast<double>(n));
  if (!(scale > 0) || !std::isfinite(scale)) throw GeometryError("degenerate point set");

  // Quadratic part D1 = [x^2, xy, y^2], linear part D2 = [x, y, 1].
  Eigen::Matrix3d s1 = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d s2 = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d s3 = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const double x = (p.x - mx) / scale;
    const double y = (p.y - my) / scale;
    const Eigen::Vector3d d1(x * x, x * y, y * y);
    const Eigen::Vector3d d2(x, y, 1.0);
    s1 += d1 * d1.transpose();
    s2 += d1 * d2.transpose();
    s3 += d2 * d2.transpose();
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(s3);
  const auto sv = svd.singularValues();
  if (!(sv(2) > 1e-12 * sv(0))) throw GeometryError("degenerate point set (collinear)");

  const Eigen::Matrix3d t = -s3.inverse() * s2.transpose();
  const Eigen::Matrix3d m = s1 + s2 * t;
  // Premultiply by the inverse of the 3x3 constraint block 4ac - b^2.
  Eigen::Matrix3d reduced;
  reduced.row(0) = m.row(2) / 2;
  reduced.row(1) = -m.row(1);
  reduced.row(2) = m.row(0) / 2;

  Eigen::EigenSolver<Eigen::Matrix3d> es(reduced);
  const auto vecs = es.eigenvectors();
  const auto vals = es.eigenvalues();
  int best = -1;
  double best_abs = 0;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d v = vecs.col(k).real();
    if (std::abs(vals(k).imag()) > 1e-12 * (1 + std::abs(vals(k).real()))) continue;
    const double cond = 4 * v(0) * v(2) - v(1) * v(1);
    if (cond > 0 && (best < 0 || std::abs(vals(k).real()) < best_abs)) {
      best = k;
      best_abs = std::abs(vals(k).real());
    }
  }
  if (best < 0) throw GeometryError("no ellipse-specific solution");

  const Eigen::Vector3d quad = vecs.col(best).real();
  const Eigen::Vector3d lin = t * quad;
  EllipseModel e = conic_to_ellipse({quad(0), quad(1), quad(2), lin(0), lin(1), lin(2)});
  e.cx = e.cx * scale + mx;
  e.cy = e.cy * scale + my;
  e.a *= scale;
  e.b *= scale;
  e = normalized(e);
  if (e.a - e.b <= 1e-9 * e.a) e.theta = 0;  // circle: orientation is arbitrary
  return e;
}

EllipseModel shrink_ellipse(const EllipseModel& e, double factor) {
  if (!(factor > 0 && factor <= 1)) {
    throw InvalidArgument(fmt::format("shrink factor must be in (0, 1], got {}", factor));
  }
  EllipseModel out = e;
  out.a *= factor;
  out.b *= factor;
  return out;
}

bool region_touches_ellipse(const std::optional<RleMask>& mask, const BBox& box,
                            const EllipseModel& e) {
  if (mask) {
    const std::uint64_t h = mask->height;
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < mask->counts.size(); ++i) {
      const std::uint64_t run = mask->counts[i];
      if (i % 2 == 1) {
        for (std::uint64_t p = pos; p < pos + run; ++p) {
          if (e.contains(static_cast<double>(p / h) + 0.5, static_cast<double>(p % h) + 0.5)) return true;
        }
      }
      pos += run;
    }
    return false;
  }
  const Point2 probes[] = {{box.x_min, box.y_min},
                           {box.x_max, box.y_min},
                           {box.x_min, box.y_max},
                           {box.x_max, box.y_max},
                           {(box.x_min + box.x_max) / 2, (box.y_min + box.y_max) / 2}};
  return std::any_of(std::begin(probes), std::end(probes), [&](const Point2& p) { return e.contains(p.x, p.y); });
}

}  // namespace cfu
