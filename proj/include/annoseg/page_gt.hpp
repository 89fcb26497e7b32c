#pragma once

// PAGE-XML ground truth: parsing the region polygons, rasterizing them into
// three-class label maps, and the color-coded label PNG codec.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "annoseg/error.hpp"
#include "annoseg/imaging.hpp"

namespace annoseg {

struct Point {
  int x = 0;
  int y = 0;
  bool operator==(const Point&) const = default;
};

struct Polygon {
  std::vector<Point> points;
  bool operator==(const Polygon&) const = default;
};

struct PageGroundTruth {
  int page_width = 0;
  int page_height = 0;
  std::vector<Polygon> regions;
  // Diagnostics from parsing; they do not affect rasterization.
  int skipped_regions = 0;
  int clamped_vertices = 0;
};

enum Label : std::uint8_t { kBackground = 0, kAnnotation = 1, kAmbiguous = 2 };
inline constexpr int kNumLabels = 3;

class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int height, int width, Label fill = kBackground) : height_(height), width_(width) {
    require(height >= 1 && width >= 1, "label map dims must be >= 1");
    labels_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::uint8_t& at(int y, int x) { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<std::uint8_t> data() { return labels_; }
  std::span<const std::uint8_t> data() const { return labels_; }

  bool operator==(const LabelMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> labels_;
};

inline LabelMap crop(const LabelMap& lm, const Rect& r) {
  require(r.top >= 0 && r.left >= 0 && r.height >= 1 && r.width >= 1 && r.bottom() <= lm.height() &&
              r.right() <= lm.width(),
          "label crop rect outside map");
  LabelMap out(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) out.at(y, x) = lm.at(r.top + y, r.left + x);
  return out;
}

namespace detail {

inline std::string_view local_name(std::string_view name) {
  const auto colon = name.find(':');
  return colon == std::string_view::npos ? name : name.substr(colon + 1);
}

inline bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// Accepts the "x,y x,y ..." attribute form. Returns false on any bad token.
inline bool parse_points_attr(const std::string& text, std::vector<Point>& out) {
  std::istringstream iss(text);
  std::string token;
  while (iss >> token) {
    const auto comma = token.find(',');
    if (comma == std::string::npos) return false;
    try {
      std::size_t used_x = 0;
      std::size_t used_y = 0;
      const std::string xs = token.substr(0, comma);
      const std::string ys = token.substr(comma + 1);
      const int x = std::stoi(xs, &used_x);
      const int y = std::stoi(ys, &used_y);
      if (used_x != xs.size() || used_y != ys.size()) return false;
      out.push_back({x, y});
    } catch (const std::exception&) {
      return false;
    }
  }
  return true;
}

using boost::property_tree::ptree;

inline const ptree* find_child(const ptree& node, std::string_view name) {
  for (const auto& [key, child] : node)
    if (local_name(key) == name) return &child;
  return nullptr;
}

// Older PAGE versions spell vertices as <Point x=".." y=".."/> children.
inline bool read_coords(const ptree& coords, std::vector<Point>& out) {
  if (const auto attrs = coords.get_child_optional("<xmlattr>")) {
    if (const auto pts = attrs->get_optional<std::string>("points")) return parse_points_attr(*pts, out);
  }
  for (const auto& [key, child] : coords) {
    if (local_name(key) != "Point") continue;
    const auto x = child.get_optional<int>("<xmlattr>.x");
    const auto y = child.get_optional<int>("<xmlattr>.y");
    if (!x || !y) return false;
    out.push_back({*x, *y});
  }
  return true;
}

inline void collect_regions(const ptree& node, PageGroundTruth& gt) {
  for (const auto& [key, child] : node) {
    if (key == "<xmlattr>" || key == "<xmlcomment>") continue;
    const auto name = local_name(key);
    if (ends_with(name, "Region")) {
      std::vector<Point> pts;
      const ptree* coords = find_child(child, "Coords");
      if (coords && read_coords(*coords, pts) && pts.size() >= 3) {
        gt.regions.push_back({std::move(pts)});
      } else {
        ++gt.skipped_regions;
      }
    }
    collect_regions(child, gt);
  }
}

}  // namespace detail

/// Parses the PAGE subset this toolkit needs: the Page element's image
/// dimensions and every *Region element's Coords polygon, in document order.
/// Element names are matched without their namespace prefix. Vertices outside
/// the page are clamped to it and counted in `clamped_vertices`.
inline PageGroundTruth parse_page_xml(std::string_view xml) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream iss{std::string(xml)};
    pt::read_xml(iss, tree);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(std::string("malformed PAGE XML: ") + e.what());
  }

  const pt::ptree* page = nullptr;
  for (const auto& [key, root] : tree) {
    if (detail::local_name(key) == "Page") page = &root;
    else if (!page) page = detail::find_child(root, "Page");
  }
  if (!page) throw ParseError("PAGE XML has no Page element");

  PageGroundTruth gt;
  const auto w = page->get_optional<int>("<xmlattr>.imageWidth");
  const auto h = page->get_optional<int>("<xmlattr>.imageHeight");
  if (!w || !h) throw ParseError("Page element lacks imageWidth/imageHeight");
  if (*w < 1 || *h < 1) throw ParseError(detail::concat("invalid page size ", *w, "x", *h));
  gt.page_width = *w;
  gt.page_height = *h;

  detail::collect_regions(*page, gt);
  for (auto& poly : gt.regions) {
    for (auto& p : poly.points) {
      const Point c{std::clamp(p.x, 0, gt.page_width - 1), std::clamp(p.y, 0, gt.page_height - 1)};
      if (c != p) ++gt.clamped_vertices;
      p = c;
    }
  }
  return gt;
}

/// Serializes ground truth in the same PAGE subset the parser reads.
inline std::string write_page_xml(const PageGroundTruth& gt, std::string_view image_filename) {
  std::ostringstream oss;
  oss << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<PcGts xmlns=\"http://schema.primaresearch.org/PAGE/gts/pagecontent/2017-07-15\">\n"
      << "  <Page imageFilename=\"" << image_filename << "\" imageWidth=\"" << gt.page_width
      << "\" imageHeight=\"" << gt.page_height << "\">\n";
  for (std::size_t i = 0; i < gt.regions.size(); ++i) {
    oss << "    <TextRegion id=\"r" << i << "\" custom=\"structure {type:annotation;}\">\n"
        << "      <Coords points=\"";
    const auto& pts = gt.regions[i].points;
    for (std::size_t k = 0; k < pts.size(); ++k) oss << (k ? " " : "") << pts[k].x << ',' << pts[k].y;
    oss << "\"/>\n    </TextRegion>\n";
  }
  oss << "  </Page>\n</PcGts>\n";
  return oss.str();
}

namespace detail {

inline bool on_segment(Point p, Point a, Point b) {
  const std::int64_t cross = static_cast<std::int64_t>(b.x - a.x) * (p.y - a.y) -
                             static_cast<std::int64_t>(b.y - a.y) * (p.x - a.x);
  return cross == 0 && p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) &&
         p.y >= std::min(a.y, b.y) && p.y <= std::max(a.y, b.y);
}

// Smallest integer >= num/den for den > 0.
inline std::int64_t ceil_div(std::int64_t num, std::int64_t den) {
  return num >= 0 ? (num + den - 1) / den : -((-num) / den);
}

}  // namespace detail

/// Even-odd rule; points exactly on an edge are inside.
inline bool point_in_polygon(Point p, const Polygon& poly) {
  const auto& v = poly.points;
  const std::size_t n = v.size();
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point a = v[j];
    const Point b = v[i];
    if (detail::on_segment(p, a, b)) return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      // p.x < a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y), cross-multiplied.
      std::int64_t lhs = static_cast<std::int64_t>(p.x - a.x) * (b.y - a.y);
      std::int64_t rhs = static_cast<std::int64_t>(p.y - a.y) * (b.x - a.x);
      if (b.y - a.y < 0) std::swap(lhs, rhs);
      if (lhs < rhs) inside = !inside;
    }
  }
  return inside;
}

/// Union of polygon interiors (edges included) as a height x width mask,
/// filled span by span. Agrees with point_in_polygon at every pixel.
inline std::vector<std::uint8_t> polygon_mask(const std::vector<Polygon>& polys, int height, int width) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(height) * width, 0);
  auto mark = [&](int y, int x) {
    if (y >= 0 && y < height && x >= 0 && x < width) mask[static_cast<std::size_t>(y) * width + x] = 1;
  };
  std::vector<std::int64_t> starts;
  for (const auto& poly : polys) {
    const auto& v = poly.points;
    const std::size_t n = v.size();
    if (n < 3) continue;
    int ymin = v[0].y;
    int ymax = v[0].y;
    for (const auto& p : v) {
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    for (int y = std::max(ymin, 0); y <= std::min(ymax, height - 1); ++y) {
      // For each crossing edge, ceil of its x-intercept: a pixel x lies left
      // of the intercept iff x < ceil(intercept).
      starts.clear();
      for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point a = v[j];
        const Point b = v[i];
        if ((a.y > y) == (b.y > y)) continue;
        std::int64_t num = static_cast<std::int64_t>(a.x) * (b.y - a.y) +
                           static_cast<std::int64_t>(y - a.y) * (b.x - a.x);
        std::int64_t den = b.y - a.y;
        if (den < 0) {
          num = -num;
          den = -den;
        }
        starts.push_back(detail::ceil_div(num, den));
      }
      std::sort(starts.begin(), starts.end());
      for (std::size_t k = 0; k + 1 < starts.size(); k += 2) {
        const auto x0 = std::max<std::int64_t>(starts[k], 0);
        const auto x1 = std::min<std::int64_t>(starts[k + 1], width);
        for (auto x = x0; x < x1; ++x) mask[static_cast<std::size_t>(y) * width + x] = 1;
      }
    }
    // Boundary pixels: every lattice point on every edge.
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point a = v[j];
      const Point b = v[i];
      const int dx = b.x - a.x;
      const int dy = b.y - a.y;
      const int g = std::gcd(std::abs(dx), std::abs(dy));
      if (g == 0) {
        mark(a.y, a.x);
        continue;
      }
      for (int k = 0; k <= g; ++k) mark(a.y + k * (dy / g), a.x + k * (dx / g));
    }
  }
  return mask;
}

/// Binarize, then label: black and inside any polygon is annotation, white
/// and inside is ambiguous, everything outside the polygons is background.
inline LabelMap rasterize_gt(const RasterImage& img, const PageGroundTruth& gt, int window, int offset) {
  require(img.height() == gt.page_height && img.width() == gt.page_width, "image is ", img.height(), "x",
          img.width(), " but PAGE declares ", gt.page_height, "x", gt.page_width);
  const BinaryImage bin = binarize_adaptive(img, window, offset);
  const auto inside = polygon_mask(gt.regions, img.height(), img.width());
  LabelMap lm(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      if (!inside[static_cast<std::size_t>(y) * img.width() + x]) continue;
      lm.at(y, x) = bin.is_black(y, x) ? kAnnotation : kAmbiguous;
    }
  }
  return lm;
}

inline LabelMap rasterize_gt(const RasterImage& img, const PageGroundTruth& gt, const BinarizeParams& p = {}) {
  return rasterize_gt(img, gt, p.window, p.offset);
}

struct Rgb {
  std::uint8_t r, g, b;
  bool operator==(const Rgb&) const = default;
};

inline constexpr Rgb kBackgroundColor{255, 255, 255};
inline constexpr Rgb kAnnotationColor{255, 0, 0};
inline constexpr Rgb kAmbiguousColor{0, 0, 255};

inline RasterImage encode_label_png(const LabelMap& lm) {
  RasterImage out(lm.height(), lm.width(), 3);
  for (int y = 0; y < lm.height(); ++y) {
    for (int x = 0; x < lm.width(); ++x) {
      const std::uint8_t l = lm.at(y, x);
      require(l < kNumLabels, "invalid label ", int(l), " at (", x, ",", y, ")");
      const Rgb c = l == kAnnotation ? kAnnotationColor : l == kAmbiguous ? kAmbiguousColor : kBackgroundColor;
      out.at(y, x, 0) = c.r;
      out.at(y, x, 1) = c.g;
      out.at(y, x, 2) = c.b;
    }
  }
  return out;
}

inline LabelMap decode_label_png(const RasterImage& img) {
  if (img.channels() != 3) throw ParseError("label image must be RGB");
  LabelMap lm(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const Rgb c{img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
      if (c == kBackgroundColor) lm.at(y, x) = kBackground;
      else if (c == kAnnotationColor) lm.at(y, x) = kAnnotation;
      else if (c == kAmbiguousColor) lm.at(y, x) = kAmbiguous;
      else
        throw ParseError(detail::concat("illegal label color (", int(c.r), ",", int(c.g), ",", int(c.b),
                                        ") at pixel x=", x, " y=", y));
    }
  }
  return lm;
}

}  // namespace annoseg
