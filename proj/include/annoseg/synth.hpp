#pragma once

// Synthetic annotated pages: printed-looking text blocks and horizontal
// rules in near-black ink, plus handwriting-like scribbles, marginal notes,
// interlinear notes and underlines in colored ink or pencil. Ground truth is
// produced by running the regular PAGE rasterization on the generated image
// and the hull polygons of the annotation strokes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "annoseg/augment.hpp"
#include "annoseg/error.hpp"
#include "annoseg/imaging.hpp"
#include "annoseg/page_gt.hpp"

namespace annoseg {

struct SynthConfig {
  int height = 1000;
  int width = 1187;

  // Printed text block.
  int line_pitch = 34;       // baseline to baseline
  int glyph_height = 11;     // x-height plus ascenders
  double rule_prob = 0.12;   // chance that a text line is replaced by a printed rule
  double script_prob = 0.2;  // chance that a text line is set in a cursive script face
  int print_ink_min = 10;
  int print_ink_max = 60;

  // Handwritten annotations.
  int annotations = 10;           // notes and underlines per page
  double underline_prob = 0.35;   // share of annotations that are underlines
  double stroke_min = 1.2;        // pen diameter range, pixels
  double stroke_max = 2.6;
  double jitter = 0.6;            // random-walk step of the pen, pixels
  int hull_margin = 3;            // polygon dilation beyond the pen radius

  int paper_min = 200;  // paper brightness range
  int paper_max = 245;
  double noise_sigma = 4.0;

  BinarizeParams binarize{};

  // Accepted share of annotation-labeled pixels; pages outside are redrawn.
  double min_annotation_frac = 0.005;
  double max_annotation_frac = 0.15;

  void validate() const {
    require(height >= 512 && width >= 512, "synthetic pages must be at least 512x512, got ", height, "x", width);
    require(line_pitch > glyph_height && glyph_height >= 4, "line_pitch must exceed glyph_height >= 4");
    require(rule_prob >= 0 && rule_prob <= 1 && script_prob >= 0 && script_prob <= 1 && underline_prob >= 0 &&
                underline_prob <= 1,
            "probabilities must be in [0, 1]");
    require(annotations >= 0, "annotation count must be >= 0");
    require(stroke_min > 0 && stroke_min <= stroke_max, "stroke width range invalid");
    require(0 <= print_ink_min && print_ink_min <= print_ink_max && print_ink_max <= 255, "print ink range invalid");
    require(0 <= paper_min && paper_min <= paper_max && paper_max <= 255, "paper range invalid");
    require(print_ink_max < paper_min, "print ink must be darker than paper");
    require(min_annotation_frac >= 0 && min_annotation_frac <= max_annotation_frac && max_annotation_frac <= 1,
            "annotation fraction band invalid");
    require(binarize.window >= 3 && binarize.window % 2 == 1, "binarization window must be odd and >= 3");
  }
};

struct SynthPage {
  RasterImage image;
  PageGroundTruth gt;
  LabelMap labels;
};

inline double annotation_fraction(const LabelMap& lm) {
  const auto d = lm.data();
  return static_cast<double>(std::count(d.begin(), d.end(), kAnnotation)) / static_cast<double>(d.size());
}

namespace synth_detail {

struct Vec2 {
  double x;
  double y;
};

struct Color {
  double r, g, b;
};

class Canvas {
 public:
  Canvas(RasterImage& img, Rng& rng, double noise) : img_(img), rng_(rng), noise_(0.0, noise) {}

  void put(int y, int x, const Color& c) {
    if (y < 0 || x < 0 || y >= img_.height() || x >= img_.width()) return;
    const double n = noise_(rng_);
    img_.at(y, x, 0) = clamp8(c.r + n);
    img_.at(y, x, 1) = clamp8(c.g + n);
    img_.at(y, x, 2) = clamp8(c.b + n);
  }

  void fill_rect(int top, int left, int h, int w, const Color& c) {
    for (int y = top; y < top + h; ++y)
      for (int x = left; x < left + w; ++x) put(y, x, c);
  }

  // Round pen of the given diameter dragged along the polyline.
  void stroke(const std::vector<Vec2>& pts, double diameter, const Color& c) {
    const double r = diameter / 2.0;
    const int ri = static_cast<int>(std::ceil(r));
    auto dab = [&](Vec2 p) {
      for (int dy = -ri; dy <= ri; ++dy)
        for (int dx = -ri; dx <= ri; ++dx) {
          const int px = static_cast<int>(std::lround(p.x)) + dx;
          const int py = static_cast<int>(std::lround(p.y)) + dy;
          const double ex = px - p.x;
          const double ey = py - p.y;
          if (ex * ex + ey * ey <= r * r + 0.25) put(py, px, c);
        }
    };
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      const double len = std::hypot(pts[i + 1].x - pts[i].x, pts[i + 1].y - pts[i].y);
      const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.5)));
      for (int s = 0; s < steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        dab({pts[i].x + t * (pts[i + 1].x - pts[i].x), pts[i].y + t * (pts[i + 1].y - pts[i].y)});
      }
    }
    if (!pts.empty()) dab(pts.back());
  }

 private:
  static std::uint8_t clamp8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

  RasterImage& img_;
  Rng& rng_;
  std::normal_distribution<double> noise_;
};

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Andrew's monotone chain; returns a counter-clockwise hull without repeats.
inline std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](Point a, Point b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  auto cross = [](Point o, Point a, Point b) {
    return static_cast<std::int64_t>(a.x - o.x) * (b.y - o.y) - static_cast<std::int64_t>(a.y - o.y) * (b.x - o.x);
  };
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Hull of the stroke points pushed outward by `radius` in eight directions.
inline Polygon dilated_hull(const std::vector<Vec2>& pts, double radius, int page_w, int page_h) {
  std::vector<Point> cloud;
  cloud.reserve(pts.size() * 8);
  for (const auto& p : pts) {
    for (int k = 0; k < 8; ++k) {
      const double a = k * std::numbers::pi / 4.0;
      const double x = p.x + radius * std::cos(a);
      const double y = p.y + radius * std::sin(a);
      cloud.push_back({std::clamp(static_cast<int>(std::lround(x)), 0, page_w - 1),
                       std::clamp(static_cast<int>(std::lround(y)), 0, page_h - 1)});
    }
  }
  return {convex_hull(std::move(cloud))};
}

// Cursive-like trace: a trochoid whose loop size and speed change per letter,
// on a baseline that drifts by a small random walk.
inline std::vector<Vec2> scribble(Rng& rng, Vec2 start, double length, double x_height, double jitter) {
  std::vector<Vec2> pts;
  double x = start.x;
  double drift = 0.0;
  double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  while (x - start.x < length) {
    const double loop = uniform(rng, 0.25, 0.5) * x_height;
    const double advance = uniform(rng, 0.6, 1.4);
    const int samples = uniform_int(rng, 6, 14);
    const double lift = uniform(rng, 0.6, 1.3);
    for (int s = 0; s < samples; ++s) {
      phase += 2.0 * std::numbers::pi / samples;
      drift += uniform(rng, -jitter, jitter) * 0.3;
      drift = std::clamp(drift, -0.25 * x_height, 0.25 * x_height);
      x += advance;
      pts.push_back({x + loop * std::cos(phase), start.y + drift - lift * loop * (1.0 + std::sin(phase))});
    }
  }
  return pts;
}

inline std::vector<Vec2> underline(Rng& rng, double x0, double x1, double y, double jitter) {
  std::vector<Vec2> pts;
  const double slope = uniform(rng, -0.015, 0.015);
  double wobble = 0.0;
  for (double x = x0; x <= x1; x += 4.0) {
    wobble = std::clamp(wobble + uniform(rng, -jitter, jitter), -1.5, 1.5);
    pts.push_back({x, y + slope * (x - x0) + wobble});
  }
  return pts;
}

struct TextLine {
  int baseline;
  int left;
  int right;
  bool rule;
};

inline Color handwriting_ink(Rng& rng) {
  static constexpr Color palette[] = {
      {35, 50, 150},    // blue ink
      {125, 45, 35},    // iron-gall brown
      {105, 105, 112},  // pencil
      {80, 35, 110},    // violet
  };
  const Color base = palette[uniform_int(rng, 0, 3)];
  const double v = uniform(rng, -15, 15);
  return {base.r + v, base.g + v, base.b + v};
}

inline SynthPage draw_page(const SynthConfig& cfg, Rng& rng) {
  const int h = cfg.height;
  const int w = cfg.width;
  const double paper = uniform(rng, cfg.paper_min, cfg.paper_max);
  const Color paper_color{paper, paper - uniform(rng, 4, 14), paper - uniform(rng, 18, 40)};
  RasterImage img(h, w, 3);
  Canvas canvas(img, rng, cfg.noise_sigma);
  canvas.fill_rect(0, 0, h, w, paper_color);

  const int margin_l = static_cast<int>(w * uniform(rng, 0.14, 0.22));
  const int margin_r = static_cast<int>(w * uniform(rng, 0.14, 0.22));
  const int margin_t = static_cast<int>(h * uniform(rng, 0.05, 0.09));
  const int margin_b = static_cast<int>(h * uniform(rng, 0.05, 0.09));

  // Printed lines of block glyphs, occasionally a full-width rule.
  std::vector<TextLine> lines;
  for (int base = margin_t + cfg.glyph_height; base < h - margin_b; base += cfg.line_pitch) {
    const double ink = uniform(rng, cfg.print_ink_min, cfg.print_ink_max);
    const Color print{ink, ink, ink + 3};
    if (uniform(rng, 0, 1) < cfg.rule_prob) {
      const int thick = uniform_int(rng, 1, 2);
      canvas.fill_rect(base - cfg.glyph_height / 2, margin_l, thick, w - margin_l - margin_r, print);
      lines.push_back({base, margin_l, w - margin_r, true});
      continue;
    }
    if (uniform(rng, 0, 1) < cfg.script_prob) {
      // Printed cursive: same trace family as handwriting, but in print ink.
      const double len = uniform(rng, 0.4, 1.0) * (w - margin_l - margin_r);
      double x = margin_l;
      while (x < margin_l + len) {
        const double word = uniform(rng, 25, 70);
        canvas.stroke(scribble(rng, {x, static_cast<double>(base)}, word, cfg.glyph_height, cfg.jitter * 0.5),
                      uniform(rng, 1.2, 2.0), print);
        x += word + uniform(rng, 10, 16);
      }
      lines.push_back({base, margin_l, static_cast<int>(std::min<double>(x, w - margin_r)), false});
      continue;
    }
    int x = margin_l;
    const int right = w - margin_r - (uniform(rng, 0, 1) < 0.2 ? uniform_int(rng, 0, (w - margin_l - margin_r) / 2) : 0);
    while (x < right - 8) {
      const int word = uniform_int(rng, 2, 9);
      for (int g = 0; g < word && x < right - 8; ++g) {
        const int gw = uniform_int(rng, 4, 7);
        const bool tall = uniform(rng, 0, 1) < 0.3;
        const int gh = tall ? cfg.glyph_height : (cfg.glyph_height * 2) / 3;
        const int top = base - gh;
        const int stem = uniform_int(rng, 1, 2);
        const int shape = uniform_int(rng, 0, 3);
        canvas.fill_rect(top, x, gh, stem, print);  // left stem
        if (shape == 0 || shape == 3) canvas.fill_rect(top, x + gw - stem, gh, stem, print);
        if (shape == 1 || shape == 3) canvas.fill_rect(base - (cfg.glyph_height * 2) / 3, x, stem, gw, print);
        if (shape != 3) canvas.fill_rect(base - stem, x, stem, gw, print);
        x += gw + uniform_int(rng, 1, 3);
      }
      x += uniform_int(rng, 6, 12);
    }
    lines.push_back({base, margin_l, std::min(x, right), false});
  }

  PageGroundTruth gt;
  gt.page_width = w;
  gt.page_height = h;
  std::vector<TextLine> text_lines;
  for (const auto& l : lines)
    if (!l.rule) text_lines.push_back(l);

  for (int a = 0; a < cfg.annotations; ++a) {
    const Color ink = handwriting_ink(rng);
    const double pen = uniform(rng, cfg.stroke_min, cfg.stroke_max);
    const double radius = pen / 2.0 + cfg.hull_margin;
    std::vector<Vec2> pts;
    const double kind = uniform(rng, 0, 1);
    if (kind < cfg.underline_prob && !text_lines.empty()) {
      const auto& l = text_lines[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(text_lines.size()) - 1))];
      const double x0 = uniform(rng, l.left, std::max<double>(l.left, l.right - 60));
      const double x1 = std::min<double>(l.right, x0 + uniform(rng, 50, 220));
      pts = underline(rng, x0, x1, l.baseline + uniform(rng, 4.0, 6.0), cfg.jitter);
    } else {
      double x_height = uniform(rng, 8, 14);
      const bool marginal = kind < cfg.underline_prob + (1.0 - cfg.underline_prob) * 0.6 || text_lines.empty();
      Vec2 start{};
      double length = 0;
      if (marginal) {
        const bool left = uniform(rng, 0, 1) < 0.5;
        const int band_l = left ? 6 : w - margin_r + 6;
        const int band_r = left ? margin_l - 10 : w - 6;
        length = std::max(20.0, uniform(rng, 0.5, 1.0) * (band_r - band_l - 10));
        start = {static_cast<double>(band_l) + 4.0, uniform(rng, margin_t + 2.0 * x_height, h - margin_b)};
      } else {
        // Between two printed lines, clear of ascenders and underlines.
        const auto& l = text_lines[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(text_lines.size()) - 1))];
        length = uniform(rng, 60, 200);
        start = {uniform(rng, l.left, std::max<double>(l.left, w - margin_r - length)),
                 l.baseline + cfg.line_pitch - cfg.glyph_height - 4.0};
        x_height = std::min(x_height, (cfg.line_pitch - cfg.glyph_height - 10) / 1.6);
      }
      pts = scribble(rng, start, length, x_height, cfg.jitter);
    }
    if (pts.size() < 2) continue;
    canvas.stroke(pts, pen, ink);
    Polygon poly = dilated_hull(pts, radius, w, h);
    if (poly.points.size() >= 3) gt.regions.push_back(std::move(poly));
  }

  LabelMap labels = rasterize_gt(img, gt, cfg.binarize);
  return {std::move(img), std::move(gt), std::move(labels)};
}

}  // namespace synth_detail

/// Draws pages until the annotation share falls inside the configured band
/// (pages without annotations are always accepted).
inline SynthPage generate_page(const SynthConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr int kMaxTries = 50;
  for (int attempt = 0; attempt < kMaxTries; ++attempt) {
    SynthPage page = synth_detail::draw_page(cfg, rng);
    if (cfg.annotations == 0) return page;
    const double frac = annotation_fraction(page.labels);
    if (frac >= cfg.min_annotation_frac && frac <= cfg.max_annotation_frac) return page;
  }
  throw RuntimeFailure(detail::concat("could not draw a page with annotation share in [", cfg.min_annotation_frac,
                                      ", ", cfg.max_annotation_frac, "] after ", kMaxTries, " tries"));
}

}  // namespace annoseg
