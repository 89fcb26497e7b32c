#pragma once

#include <string>

#include "annoseg/error.hpp"
#include "annoseg/imaging.hpp"

namespace annoseg {

/// What the network was trained on: the page itself, or its binarization.
enum class InputMode { kColor = 0, kBinarized = 1 };

inline std::string to_string(InputMode m) { return m == InputMode::kBinarized ? "binarized" : "color"; }

inline InputMode parse_input_mode(const std::string& s) {
  if (s == "color") return InputMode::kColor;
  if (s == "binarized") return InputMode::kBinarized;
  throw ValidationError("unknown input mode '" + s + "' (expected color or binarized)");
}

struct ModelMeta {
  InputMode input = InputMode::kColor;
  BinarizeParams binarize{};
};

inline RasterImage gray_to_rgb(const RasterImage& img) {
  if (img.channels() == 3) return img;
  RasterImage out(img.height(), img.width(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x);
  return out;
}

/// The 3-channel image the network consumes for a given page.
inline RasterImage prepare_input(const RasterImage& page, const ModelMeta& meta) {
  if (meta.input == InputMode::kBinarized) return binary_to_rgb(binarize_adaptive(page, meta.binarize));
  return gray_to_rgb(page);
}

}  // namespace annoseg
