#pragma once

// Sliding-window inference. Tiles overlap by a fixed margin; the last row
// and column of tiles are pushed flush against the page border, and every
// pixel's class probabilities are the mean over the tiles covering it.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "annoseg/error.hpp"
#include "annoseg/fcn/layers.hpp"
#include "annoseg/fcn/network.hpp"
#include "annoseg/imaging.hpp"
#include "annoseg/page_gt.hpp"
#include "annoseg/parallel.hpp"

namespace annoseg {

struct InferenceConfig {
  int patch = 512;
  int overlap = 128;

  int stride() const { return patch - overlap; }

  void validate() const {
    require(patch >= fcn::kInputMultiple && patch % fcn::kInputMultiple == 0, "inference patch must be a positive multiple of ",
            fcn::kInputMultiple, ", got ", patch);
    require(overlap >= 0 && overlap < patch, "overlap must be in [0, patch), got ", overlap);
  }
};

/// Class probabilities for every pixel, stored plane by plane.
class ProbabilityMap {
 public:
  ProbabilityMap() = default;
  ProbabilityMap(int classes, int height, int width)
      : classes_(classes), height_(height), width_(width),
        values_(static_cast<std::size_t>(classes) * height * width, 0.0) {}

  int classes() const { return classes_; }
  int height() const { return height_; }
  int width() const { return width_; }

  double& at(int c, int y, int x) { return values_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return values_[index(c, y, x)]; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int classes_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

namespace detail {

inline std::vector<int> tile_starts(int extent, int patch, int stride) {
  std::vector<int> starts;
  for (int s = 0; s + patch < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);
  return starts;
}

}  // namespace detail

/// Row-major tile rects covering an H x W page.
inline std::vector<Rect> tile_plan(int height, int width, const InferenceConfig& cfg) {
  cfg.validate();
  require(height >= cfg.patch && width >= cfg.patch, "image ", height, "x", width, " is smaller than the ",
          cfg.patch, " pixel inference patch");
  std::vector<Rect> tiles;
  for (int top : detail::tile_starts(height, cfg.patch, cfg.stride()))
    for (int left : detail::tile_starts(width, cfg.patch, cfg.stride()))
      tiles.push_back({top, left, cfg.patch, cfg.patch});
  return tiles;
}

inline std::vector<int> coverage_counts(int height, int width, const std::vector<Rect>& tiles) {
  std::vector<int> count(static_cast<std::size_t>(height) * width, 0);
  for (const auto& t : tiles)
    for (int y = t.top; y < t.bottom(); ++y)
      for (int x = t.left; x < t.right(); ++x) ++count[static_cast<std::size_t>(y) * width + x];
  return count;
}

/// Model callback: class probabilities for one tile (tile-sized map).
using PatchPredictor = std::function<ProbabilityMap(const RasterImage& patch, const Rect& tile)>;

/// Averages per-tile probabilities over the overlap. Tiles may be evaluated
/// concurrently; they are accumulated in plan order.
inline ProbabilityMap predict_tiled(const RasterImage& img, const InferenceConfig& cfg, const PatchPredictor& model,
                                    int threads = 1) {
  const auto tiles = tile_plan(img.height(), img.width(), cfg);
  std::vector<ProbabilityMap> outputs(tiles.size());
  parallel_for(tiles.size(), threads, [&](std::size_t i) {
    outputs[i] = model(crop(img, tiles[i]), tiles[i]);
    require<ShapeError>(outputs[i].height() == tiles[i].height && outputs[i].width() == tiles[i].width,
                        "model output does not match tile size");
  });

  const int classes = outputs.front().classes();
  ProbabilityMap acc(classes, img.height(), img.width());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& t = tiles[i];
    require<ShapeError>(outputs[i].classes() == classes, "tiles disagree on class count");
    for (int c = 0; c < classes; ++c)
      for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x) acc.at(c, t.top + y, t.left + x) += outputs[i].at(c, y, x);
  }
  const auto count = coverage_counts(img.height(), img.width(), tiles);
  for (int c = 0; c < classes; ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) acc.at(c, y, x) /= count[static_cast<std::size_t>(y) * img.width() + x];
  return acc;
}

/// Softmax output of the network for one patch, as a ProbabilityMap.
template <typename T>
ProbabilityMap network_probabilities(const fcn::Fcn8sParams<T>& params, const RasterImage& patch) {
  const auto logits = fcn::fcn8s_forward(params, fcn::image_to_tensor<T>(patch));
  const auto p = fcn::softmax(logits);
  ProbabilityMap out(p.c(), p.h(), p.w());
  for (int c = 0; c < p.c(); ++c) {
    const T* src = p.plane(0, c);
    std::copy(src, src + p.shape().plane(), out.values().begin() + static_cast<std::ptrdiff_t>(c * p.shape().plane()));
  }
  return out;
}

template <typename T>
ProbabilityMap predict_tiled(const fcn::Fcn8sParams<T>& params, const RasterImage& img, const InferenceConfig& cfg,
                             int threads = 1) {
  return predict_tiled(
      img, cfg, [&](const RasterImage& patch, const Rect&) { return network_probabilities(params, patch); }, threads);
}

/// Per-pixel argmax; ties resolve to the lower class index.
inline LabelMap argmax_labels(const ProbabilityMap& pm) {
  require(pm.classes() >= 1 && pm.classes() < kAmbiguous + 1, "argmax supports up to ", int(kAmbiguous), " classes");
  LabelMap lm(pm.height(), pm.width());
  for (int y = 0; y < pm.height(); ++y)
    for (int x = 0; x < pm.width(); ++x) {
      int best = 0;
      for (int c = 1; c < pm.classes(); ++c)
        if (pm.at(c, y, x) > pm.at(best, y, x)) best = c;
      lm.at(y, x) = static_cast<std::uint8_t>(best);
    }
  return lm;
}

}  // namespace annoseg
