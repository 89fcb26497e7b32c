#pragma once

// Raster primitives shared by every stage of the pipeline: 8-bit images,
// grayscale conversion, local-mean binarization, cropping and bilinear
// resampling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "annoseg/error.hpp"

namespace annoseg {

struct Rect {
  int top = 0;
  int left = 0;
  int height = 1;
  int width = 1;

  int bottom() const { return top + height; }
  int right() const { return left + width; }
  bool operator==(const Rect&) const = default;
};

/// Row-major, channel-interleaved 8-bit image with 1 or 3 channels.
class RasterImage {
 public:
  RasterImage() = default;
  RasterImage(int height, int width, int channels, std::uint8_t fill = 0)
      : height_(height), width_(width), channels_(channels) {
    require(height >= 1 && width >= 1, "image dims must be >= 1, got ", height, "x", width);
    require(channels == 1 || channels == 3, "image must have 1 or 3 channels, got ", channels);
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }
  RasterImage(int height, int width, int channels, std::vector<std::uint8_t> data)
      : RasterImage(height, width, channels) {
    require(data.size() == data_.size(), "image data length ", data.size(), " != ", data_.size());
    data_ = std::move(data);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  std::uint8_t& at(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
  std::uint8_t at(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

  std::span<std::uint8_t> data() { return data_; }
  std::span<const std::uint8_t> data() const { return data_; }

  bool contains(const Rect& r) const {
    return r.height >= 1 && r.width >= 1 && r.top >= 0 && r.left >= 0 && r.bottom() <= height_ &&
           r.right() <= width_;
  }

  bool operator==(const RasterImage&) const = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Black/white mask. A set entry means the pixel is black (ink).
class BinaryImage {
 public:
  BinaryImage() = default;
  BinaryImage(int height, int width) : height_(height), width_(width) {
    require(height >= 1 && width >= 1, "binary image dims must be >= 1");
    black_.assign(static_cast<std::size_t>(height) * width, 0);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool is_black(int y, int x) const { return black_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set_black(int y, int x, bool black) {
    black_[static_cast<std::size_t>(y) * width_ + x] = black ? 1 : 0;
  }
  std::span<const std::uint8_t> data() const { return black_; }

  bool operator==(const BinaryImage&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> black_;
};

// BT.601 luma.
inline RasterImage to_grayscale(const RasterImage& img) {
  if (img.channels() == 1) return img;
  RasterImage out(img.height(), img.width(), 1);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double v = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      out.at(y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

struct BinarizeParams {
  int window = 31;
  int offset = 15;
};

/// Local-mean adaptive threshold. A pixel is black iff its gray value is
/// below the mean of its window x window neighborhood (edges replicated)
/// minus `offset`. Sums are kept in integers so the comparison is exact.
inline BinaryImage binarize_adaptive(const RasterImage& img, int window, int offset) {
  require(window >= 3 && window % 2 == 1, "binarization window must be odd and >= 3, got ", window);
  const RasterImage gray = to_grayscale(img);
  const int h = gray.height();
  const int w = gray.width();
  const int r = window / 2;

  // Horizontal box sums, then vertical, both with clamped indices.
  std::vector<std::int64_t> row_sums(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    std::int64_t acc = 0;
    for (int k = -r; k <= r; ++k) acc += gray.at(y, std::clamp(k, 0, w - 1));
    for (int x = 0; x < w; ++x) {
      row_sums[static_cast<std::size_t>(y) * w + x] = acc;
      acc -= gray.at(y, std::clamp(x - r, 0, w - 1));
      acc += gray.at(y, std::clamp(x + r + 1, 0, w - 1));
    }
  }

  BinaryImage out(h, w);
  const std::int64_t n = static_cast<std::int64_t>(window) * window;
  std::vector<std::int64_t> col_acc(w, 0);
  for (int k = -r; k <= r; ++k) {
    const std::size_t base = static_cast<std::size_t>(std::clamp(k, 0, h - 1)) * w;
    for (int x = 0; x < w; ++x) col_acc[x] += row_sums[base + x];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.set_black(y, x, gray.at(y, x) * n < col_acc[x] - static_cast<std::int64_t>(offset) * n);
    }
    const std::size_t drop = static_cast<std::size_t>(std::clamp(y - r, 0, h - 1)) * w;
    const std::size_t add = static_cast<std::size_t>(std::clamp(y + r + 1, 0, h - 1)) * w;
    for (int x = 0; x < w; ++x) col_acc[x] += row_sums[add + x] - row_sums[drop + x];
  }
  return out;
}

inline BinaryImage binarize_adaptive(const RasterImage& img, const BinarizeParams& p = {}) {
  return binarize_adaptive(img, p.window, p.offset);
}

/// Renders a mask as a 3-channel image (black ink on white), the input the
/// network sees when trained on binarized pages.
inline RasterImage binary_to_rgb(const BinaryImage& bin) {
  RasterImage out(bin.height(), bin.width(), 3, 255);
  for (int y = 0; y < bin.height(); ++y)
    for (int x = 0; x < bin.width(); ++x)
      if (bin.is_black(y, x))
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0;
  return out;
}

inline RasterImage crop(const RasterImage& img, const Rect& r) {
  require(img.contains(r), "crop rect (", r.top, ",", r.left, " ", r.height, "x", r.width,
          ") outside ", img.height(), "x", img.width(), " image");
  RasterImage out(r.height, r.width, img.channels());
  const std::size_t row_bytes = static_cast<std::size_t>(r.width) * img.channels();
  for (int y = 0; y < r.height; ++y) {
    const auto src = img.data().subspan(
        (static_cast<std::size_t>(r.top + y) * img.width() + r.left) * img.channels(), row_bytes);
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(y * row_bytes));
  }
  return out;
}

/// One output coordinate's two source taps under the half-pixel-center
/// convention s = (d + 0.5) * in / out - 0.5, clamped to the valid range.
struct BilinearTap {
  int i0 = 0;
  int i1 = 0;
  double w1 = 0.0;  // weight of i1; i0 gets 1 - w1
};

inline std::vector<BilinearTap> bilinear_taps(int in, int out) {
  require(in >= 1 && out >= 1, "bilinear sizes must be >= 1");
  std::vector<BilinearTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int d = 0; d < out; ++d) {
    const double s = std::clamp((d + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(s));
    taps[d] = {i0, std::min(i0 + 1, in - 1), s - i0};
  }
  return taps;
}

inline RasterImage resize_bilinear(const RasterImage& img, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, "resize target must be >= 1, got ", out_h, "x", out_w);
  if (out_h == img.height() && out_w == img.width()) return img;
  const auto ty = bilinear_taps(img.height(), out_h);
  const auto tx = bilinear_taps(img.width(), out_w);
  RasterImage out(out_h, out_w, img.channels());
  for (int y = 0; y < out_h; ++y) {
    const auto& a = ty[y];
    for (int x = 0; x < out_w; ++x) {
      const auto& b = tx[x];
      for (int c = 0; c < img.channels(); ++c) {
        const double top = (1.0 - b.w1) * img.at(a.i0, b.i0, c) + b.w1 * img.at(a.i0, b.i1, c);
        const double bot = (1.0 - b.w1) * img.at(a.i1, b.i0, c) + b.w1 * img.at(a.i1, b.i1, c);
        const double v = (1.0 - a.w1) * top + a.w1 * bot;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace annoseg
