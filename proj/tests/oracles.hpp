#pragma once

// Slow, direct reference implementations used to check the library. Nothing
// here calls into the code under test except for plain data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "annoseg/fcn/network.hpp"
#include "annoseg/imaging.hpp"
#include "annoseg/page_gt.hpp"

namespace oracle {

using annoseg::LabelMap;
using annoseg::Point;
using annoseg::Polygon;
using annoseg::RasterImage;
using annoseg::Tensor;

inline int gray(const RasterImage& img, int y, int x) {
  if (img.channels() == 1) return img.at(y, x);
  return static_cast<int>(std::lround(0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2)));
}

// Per-pixel neighborhood mean with replicated edges, compared in doubles.
inline bool is_black(const RasterImage& img, int y, int x, int window, int offset) {
  const int r = window / 2;
  double sum = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      sum += gray(img, std::clamp(y + dy, 0, img.height() - 1), std::clamp(x + dx, 0, img.width() - 1));
  const double mean = sum / (static_cast<double>(window) * window);
  return gray(img, y, x) < mean - offset;
}

// Whole-image version of is_black: pad by replication, then a summed-area
// table gives each window sum in O(1).
inline std::vector<std::uint8_t> black_mask(const RasterImage& img, int window, int offset) {
  const int r = window / 2;
  const int h = img.height();
  const int w = img.width();
  const int ph = h + 2 * r;
  const int pw = w + 2 * r;
  std::vector<std::int64_t> sat(static_cast<std::size_t>(ph + 1) * (pw + 1), 0);
  auto at = [&](int y, int x) -> std::int64_t& { return sat[static_cast<std::size_t>(y) * (pw + 1) + x]; };
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x)
      at(y + 1, x + 1) = gray(img, std::clamp(y - r, 0, h - 1), std::clamp(x - r, 0, w - 1)) + at(y, x + 1) +
                         at(y + 1, x) - at(y, x);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w);
  const double n = static_cast<double>(window) * window;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::int64_t sum = at(y + window, x + window) - at(y, x + window) - at(y + window, x) + at(y, x);
      out[static_cast<std::size_t>(y) * w + x] = gray(img, y, x) < sum / n - offset;
    }
  return out;
}

// Bilinear sample under s = (d + 0.5) * in / out - 0.5, clamped.
inline double bilinear_at(const std::function<double(int, int)>& src, int in_h, int in_w, int out_h, int out_w, int y,
                          int x) {
  auto coord = [](int d, int in, int out) {
    return std::clamp((d + 0.5) * in / out - 0.5, 0.0, static_cast<double>(in - 1));
  };
  const double sy = coord(y, in_h, out_h);
  const double sx = coord(x, in_w, out_w);
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, in_h - 1);
  const int x1 = std::min(x0 + 1, in_w - 1);
  const double fy = sy - y0;
  const double fx = sx - x0;
  return (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) + fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
}

// Winding number of `poly` around (px, py); nonzero means inside for the
// simple polygons used in tests.
inline int winding_number(double px, double py, const Polygon& poly) {
  int wn = 0;
  const auto& v = poly.points;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point a = v[i];
    const Point b = v[(i + 1) % v.size()];
    const double cross = (b.x - a.x) * (py - a.y) - (px - a.x) * (b.y - a.y);
    if (a.y <= py) {
      if (b.y > py && cross > 0) ++wn;
    } else if (b.y <= py && cross < 0) {
      --wn;
    }
  }
  return wn;
}

// True when (px, py) lies on some edge of the polygon.
inline bool on_boundary(double px, double py, const Polygon& poly) {
  const auto& v = poly.points;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point a = v[i];
    const Point b = v[(i + 1) % v.size()];
    const double cross = (b.x - a.x) * (py - a.y) - (px - a.x) * (b.y - a.y);
    if (std::abs(cross) < 1e-12 && px >= std::min(a.x, b.x) && px <= std::max(a.x, b.x) &&
        py >= std::min(a.y, b.y) && py <= std::max(a.y, b.y))
      return true;
  }
  return false;
}

// The three labeling rules applied one pixel at a time.
inline LabelMap rasterize(const RasterImage& img, const std::vector<Polygon>& polys, int window, int offset) {
  LabelMap lm(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      bool inside = false;
      for (const auto& p : polys) inside = inside || on_boundary(x, y, p) || winding_number(x, y, p) != 0;
      if (!inside) lm.at(y, x) = annoseg::kBackground;
      else lm.at(y, x) = is_black(img, y, x, window, offset) ? annoseg::kAnnotation : annoseg::kAmbiguous;
    }
  return lm;
}

// Stride-1 "same" convolution as a plain loop nest.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& b) {
  const int pad = k.h() / 2;
  Tensor<T> y(x.n(), k.n(), x.h(), x.w());
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < k.n(); ++o)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j) {
          T acc = b(0, o, 0, 0);
          for (int c = 0; c < x.c(); ++c)
            for (int u = 0; u < k.h(); ++u)
              for (int v = 0; v < k.w(); ++v) {
                const int yy = i + u - pad;
                const int xx = j + v - pad;
                if (yy >= 0 && yy < x.h() && xx >= 0 && xx < x.w()) acc += k(o, c, u, v) * x(n, c, yy, xx);
              }
          y(n, o, i, j) = acc;
        }
  return y;
}

template <typename T>
Tensor<T> random_tensor(annoseg::Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(d(rng));
  return t;
}

// Central difference of f at every entry of `x`.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

// max_i |a_i - n_i| / max(|a_i| + |n_i|, floor): per-entry relative error with
// an absolute floor so that entries that are zero up to rounding do not
// dominate.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(std::abs(analytic[i]) + std::abs(numeric[i]), floor);
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

// Confusion counts by direct enumeration: counts[truth][pred].
inline std::array<std::array<std::uint64_t, 2>, 2> confusion(const LabelMap& pred, const LabelMap& gt) {
  std::array<std::array<std::uint64_t, 2>, 2> c{};
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x)
      if (gt.at(y, x) != annoseg::kAmbiguous) ++c[gt.at(y, x)][pred.at(y, x)];
  return c;
}

inline std::array<double, 2> iou(const std::array<std::array<std::uint64_t, 2>, 2>& c) {
  std::array<double, 2> r{};
  for (int i = 0; i < 2; ++i) {
    const std::uint64_t tp = c[i][i];
    const std::uint64_t fn = c[i][1 - i];
    const std::uint64_t fp = c[1 - i][i];
    r[i] = tp + fn + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn + fp);
  }
  return r;
}

}  // namespace oracle
