#pragma once

// Training-patch samplers. Both crop image and label map with one rect so
// the pair stays aligned.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "annoseg/error.hpp"
#include "annoseg/imaging.hpp"
#include "annoseg/page_gt.hpp"

namespace annoseg {

using Rng = std::mt19937_64;

struct Sample {
  RasterImage patch;
  LabelMap labels;
  Rect source_rect;
};

struct InceptionSamplerConfig {
  double min_area_frac = 0.08;
  double max_area_frac = 1.0;
  double min_aspect = 3.0 / 4.0;
  double max_aspect = 4.0 / 3.0;
  int out_size = 512;
  int max_attempts = 10;

  void validate() const {
    require(min_area_frac > 0 && min_area_frac <= max_area_frac && max_area_frac <= 1.0,
            "inception area fractions must satisfy 0 < min <= max <= 1");
    require(min_aspect > 0 && min_aspect <= max_aspect, "inception aspect bounds must satisfy 0 < min <= max");
    require(out_size >= 1, "inception out_size must be >= 1");
    require(max_attempts >= 1, "inception max_attempts must be >= 1");
  }
};

/// Nearest-neighbor resize for class maps: output (y, x) takes the label at
/// source (floor((y + 0.5) * in / out), floor((x + 0.5) * in / out)).
inline LabelMap resize_nearest(const LabelMap& lm, int out_h, int out_w) {
  if (out_h == lm.height() && out_w == lm.width()) return lm;
  auto src = [](int d, int in, int out) {
    return std::min(static_cast<int>(std::floor((d + 0.5) * in / out)), in - 1);
  };
  LabelMap out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const int sy = src(y, lm.height(), out_h);
    for (int x = 0; x < out_w; ++x) out.at(y, x) = lm.at(sy, src(x, lm.width(), out_w));
  }
  return out;
}

inline void require_aligned(const RasterImage& img, const LabelMap& lm) {
  require(img.height() == lm.height() && img.width() == lm.width(), "image ", img.height(), "x", img.width(),
          " and label map ", lm.height(), "x", lm.width(), " differ");
}

inline Sample sample_random_crop(const RasterImage& img, const LabelMap& lm, int size, Rng& rng) {
  require_aligned(img, lm);
  require(size >= 1 && img.height() >= size && img.width() >= size, "image ", img.height(), "x", img.width(),
          " smaller than crop size ", size);
  std::uniform_int_distribution<int> top_dist(0, img.height() - size);
  std::uniform_int_distribution<int> left_dist(0, img.width() - size);
  const int top = top_dist(rng);
  const int left = left_dist(rng);
  const Rect r{top, left, size, size};
  return {crop(img, r), crop(lm, r), r};
}

namespace detail {

inline int round_half_up(double v) { return std::max(1, static_cast<int>(std::floor(v + 0.5))); }

}  // namespace detail

/// Inception-style sampler: area fraction and aspect ratio (width / height)
/// drawn uniformly, crop placed uniformly, then rescaled to out_size square.
/// Falls back to the centered min-side square after max_attempts misses.
inline Sample sample_inception(const RasterImage& img, const LabelMap& lm, const InceptionSamplerConfig& cfg,
                               Rng& rng) {
  require_aligned(img, lm);
  cfg.validate();
  const int h = img.height();
  const int w = img.width();
  const double page_area = static_cast<double>(h) * w;
  std::uniform_real_distribution<double> area_dist(cfg.min_area_frac, cfg.max_area_frac);
  std::uniform_real_distribution<double> aspect_dist(cfg.min_aspect, cfg.max_aspect);

  Rect r{};
  bool found = false;
  for (int attempt = 0; attempt < cfg.max_attempts && !found; ++attempt) {
    const double area = area_dist(rng) * page_area;
    const double aspect = aspect_dist(rng);
    const int cw = detail::round_half_up(std::sqrt(area * aspect));
    const int ch = detail::round_half_up(std::sqrt(area / aspect));
    if (cw > w || ch > h) continue;
    std::uniform_int_distribution<int> top_dist(0, h - ch);
    std::uniform_int_distribution<int> left_dist(0, w - cw);
    const int top = top_dist(rng);
    const int left = left_dist(rng);
    r = {top, left, ch, cw};
    found = true;
  }
  if (!found) {
    const int side = std::min(h, w);
    r = {(h - side) / 2, (w - side) / 2, side, side};
  }
  return {resize_bilinear(crop(img, r), cfg.out_size, cfg.out_size),
          resize_nearest(crop(lm, r), cfg.out_size, cfg.out_size), r};
}

}  // namespace annoseg
