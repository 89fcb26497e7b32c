#pragma once

// Pixel-level evaluation with ambiguous exclusion: confusion matrices,
// per-class IoU = n_ii / (t_i + sum_j n_ji - n_ii), mean IoU, and diff images.

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "annoseg/error.hpp"
#include "annoseg/imaging.hpp"
#include "annoseg/page_gt.hpp"

namespace annoseg {

inline constexpr int kEvalClasses = 2;

/// counts[i][j] = pixels of true class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int n_cl = kEvalClasses) : n_cl_(n_cl), counts_(static_cast<std::size_t>(n_cl) * n_cl, 0) {
    require(n_cl >= 1, "confusion matrix needs at least one class");
  }

  int classes() const { return n_cl_; }
  std::uint64_t& at(int truth, int pred) { return counts_[static_cast<std::size_t>(truth) * n_cl_ + pred]; }
  std::uint64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * n_cl_ + pred]; }

  std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }
  // t_i
  std::uint64_t truth_total(int i) const {
    std::uint64_t t = 0;
    for (int j = 0; j < n_cl_; ++j) t += at(i, j);
    return t;
  }
  std::uint64_t predicted_total(int j) const {
    std::uint64_t t = 0;
    for (int i = 0; i < n_cl_; ++i) t += at(i, j);
    return t;
  }

  // GT-ambiguous pixels seen and skipped.
  std::uint64_t ambiguous = 0;

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    require(o.n_cl_ == n_cl_, "cannot add confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
    ambiguous += o.ambiguous;
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int n_cl_;
  std::vector<std::uint64_t> counts_;
};

inline void accumulate_confusion(const LabelMap& pred, const LabelMap& gt, ConfusionMatrix& cm) {
  require(pred.height() == gt.height() && pred.width() == gt.width(), "prediction ", pred.height(), "x", pred.width(),
          " vs ground truth ", gt.height(), "x", gt.width());
  const auto p = pred.data();
  const auto g = gt.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    // Checked first so that a ground truth map can be scored against itself.
    if (g[i] == kAmbiguous) {
      ++cm.ambiguous;
      continue;
    }
    require(p[i] < cm.classes(), "prediction contains label ", int(p[i]), " at pixel x=", i % pred.width(),
            " y=", i / pred.width());
    require(g[i] < cm.classes(), "ground truth contains label ", int(g[i]));
    ++cm.at(g[i], p[i]);
  }
}

inline ConfusionMatrix accumulate_confusion(const LabelMap& pred, const LabelMap& gt) {
  ConfusionMatrix cm;
  accumulate_confusion(pred, gt, cm);
  return cm;
}

struct ClassIou {
  std::vector<double> iou;
  // Class absent from both truth and prediction; its IoU is reported as 1.
  std::vector<bool> absent;
};

inline ClassIou iou_per_class(const ConfusionMatrix& cm) {
  ClassIou r;
  for (int i = 0; i < cm.classes(); ++i) {
    const std::uint64_t denom = cm.truth_total(i) + cm.predicted_total(i) - cm.at(i, i);
    r.absent.push_back(denom == 0);
    r.iou.push_back(denom == 0 ? 1.0 : static_cast<double>(cm.at(i, i)) / static_cast<double>(denom));
  }
  return r;
}

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double mean_iou(const ConfusionMatrix& cm) { return mean_of(iou_per_class(cm).iou); }

enum class Averaging { kMicro, kMacro };

struct EvalReport {
  Averaging mode = Averaging::kMicro;
  std::vector<double> per_class_iou;
  std::vector<bool> absent;
  double mean_iou = 0.0;
  ConfusionMatrix confusion;  // summed over pages
  std::size_t pages = 0;
  std::uint64_t total_pixels = 0;
};

/// Micro: sum the page matrices and compute IoU once. Macro: average the
/// per-page IoUs class by class.
inline EvalReport evaluate(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                           Averaging mode = Averaging::kMicro) {
  require(preds.size() == gts.size(), "got ", preds.size(), " predictions for ", gts.size(), " ground truth pages");
  EvalReport rep;
  rep.mode = mode;
  rep.pages = preds.size();
  std::vector<double> macro_sum(kEvalClasses, 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ConfusionMatrix page = accumulate_confusion(preds[i], gts[i]);
    rep.total_pixels += static_cast<std::uint64_t>(gts[i].height()) * gts[i].width();
    const auto pi = iou_per_class(page);
    for (int c = 0; c < kEvalClasses; ++c) macro_sum[c] += pi.iou[c];
    rep.confusion += page;
  }
  const auto micro = iou_per_class(rep.confusion);
  rep.absent = micro.absent;
  if (mode == Averaging::kMicro || preds.empty()) {
    rep.per_class_iou = micro.iou;
  } else {
    for (int c = 0; c < kEvalClasses; ++c) rep.per_class_iou.push_back(macro_sum[c] / static_cast<double>(preds.size()));
  }
  rep.mean_iou = mean_of(rep.per_class_iou);
  return rep;
}

/// Annotation-class view: TP green, TN black, FP red, FN blue, GT-ambiguous gray.
inline RasterImage render_diff(const LabelMap& pred, const LabelMap& gt) {
  require(pred.height() == gt.height() && pred.width() == gt.width(), "diff needs equal dims");
  RasterImage out(gt.height(), gt.width(), 3);
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      Rgb c{0, 0, 0};
      const int g = gt.at(y, x);
      const bool p = pred.at(y, x) == kAnnotation;
      if (g == kAmbiguous) c = {128, 128, 128};
      else if (g == kAnnotation) c = p ? Rgb{0, 255, 0} : Rgb{0, 0, 255};
      else if (p) c = {255, 0, 0};
      out.at(y, x, 0) = c.r;
      out.at(y, x, 1) = c.g;
      out.at(y, x, 2) = c.b;
    }
  return out;
}

}  // namespace annoseg
