#pragma once

// FCN-8s topology: five conv stacks each closed by a 2x max-pool, 1x1 score
// layers on the outputs of stacks 3, 4 and 5, and additive fusion of the
// bilinearly upsampled coarser scores into the finer ones.
//
//   score5 = score(pool5)                       H/32
//   fused4 = up2(score5) + score(pool4)         H/16
//   fused3 = up2(fused4) + score(pool3)         H/8
//   logits = up8(fused3)                        H

#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "annoseg/error.hpp"
#include "annoseg/fcn/layers.hpp"
#include "annoseg/imaging.hpp"
#include "annoseg/tensor.hpp"

namespace annoseg::fcn {

struct StackSpec {
  int convs = 2;
  int width = 16;
  bool operator==(const StackSpec&) const = default;
};

inline constexpr int kNumStacks = 5;
inline constexpr int kInputMultiple = 32;

struct NetworkConfig {
  std::array<StackSpec, kNumStacks> stacks{{{2, 16}, {2, 32}, {2, 64}, {2, 128}, {2, 128}}};
  int num_classes = 2;
  int in_channels = 3;

  static NetworkConfig with_widths(const std::array<int, kNumStacks>& widths, int convs_per_stack = 2) {
    NetworkConfig cfg;
    for (int s = 0; s < kNumStacks; ++s) cfg.stacks[s] = {convs_per_stack, widths[s]};
    return cfg;
  }

  void validate() const {
    require(num_classes >= 2, "num_classes must be >= 2");
    require(in_channels >= 1, "in_channels must be >= 1");
    for (int s = 0; s < kNumStacks; ++s) {
      require(stacks[s].convs >= 1, "stack ", s + 1, " needs at least one conv layer");
      require(stacks[s].width >= 1, "stack ", s + 1, " width must be >= 1");
    }
  }

  bool operator==(const NetworkConfig&) const = default;
};

template <typename T>
struct Fcn8sParams {
  NetworkConfig config;
  std::vector<ConvParams<T>> convs;  // all 3x3 conv layers, stack by stack
  ConvParams<T> score3;
  ConvParams<T> score4;
  ConvParams<T> score5;

  /// Every parameter tensor with a stable name, in a fixed order. Used by
  /// the optimizer, checkpointing and gradient checks.
  template <typename Self>
  static auto named_tensors_impl(Self& self) {
    using TensorRef = std::conditional_t<std::is_const_v<Self>, const Tensor<T>*, Tensor<T>*>;
    std::vector<std::pair<std::string, TensorRef>> out;
    int idx = 0;
    for (int s = 0; s < kNumStacks; ++s)
      for (int i = 0; i < self.config.stacks[s].convs; ++i, ++idx) {
        const std::string base = "conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1);
        out.emplace_back(base + ".kernel", &self.convs[idx].kernel);
        out.emplace_back(base + ".bias", &self.convs[idx].bias);
      }
    out.emplace_back("score3.kernel", &self.score3.kernel);
    out.emplace_back("score3.bias", &self.score3.bias);
    out.emplace_back("score4.kernel", &self.score4.kernel);
    out.emplace_back("score4.bias", &self.score4.bias);
    out.emplace_back("score5.kernel", &self.score5.kernel);
    out.emplace_back("score5.bias", &self.score5.bias);
    return out;
  }
  auto named_tensors() { return named_tensors_impl(*this); }
  auto named_tensors() const { return named_tensors_impl(*this); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_tensors()) n += t->size();
    return n;
  }

  template <typename U>
  Fcn8sParams<U> cast() const {
    Fcn8sParams<U> out;
    out.config = config;
    auto conv_cast = [](const ConvParams<T>& p) { return ConvParams<U>{p.kernel.template cast<U>(), p.bias.template cast<U>()}; };
    for (const auto& c : convs) out.convs.push_back(conv_cast(c));
    out.score3 = conv_cast(score3);
    out.score4 = conv_cast(score4);
    out.score5 = conv_cast(score5);
    return out;
  }
};

/// Zero-filled parameters with the right shapes for `cfg`.
template <typename T>
Fcn8sParams<T> make_params(const NetworkConfig& cfg) {
  cfg.validate();
  Fcn8sParams<T> p;
  p.config = cfg;
  int in = cfg.in_channels;
  for (int s = 0; s < kNumStacks; ++s) {
    for (int i = 0; i < cfg.stacks[s].convs; ++i) {
      const int out = cfg.stacks[s].width;
      p.convs.push_back({Tensor<T>(out, in, 3, 3), Tensor<T>(1, out, 1, 1)});
      in = out;
    }
  }
  auto score = [&](int s) {
    return ConvParams<T>{Tensor<T>(cfg.num_classes, cfg.stacks[s].width, 1, 1), Tensor<T>(1, cfg.num_classes, 1, 1)};
  };
  p.score3 = score(2);
  p.score4 = score(3);
  p.score5 = score(4);
  return p;
}

/// Kaiming fan-in normal init for the 3x3 kernels; biases and the score
/// layers start at zero, so a fresh network emits all-zero logits.
template <typename T>
Fcn8sParams<T> init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  auto p = make_params<T>(cfg);
  std::mt19937_64 rng(seed);
  for (auto& conv : p.convs) {
    const double fan_in = static_cast<double>(conv.in_channels()) * 9.0;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : conv.kernel.values()) v = static_cast<T>(dist(rng));
  }
  return p;
}

template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> conv_inputs;   // input to each 3x3 conv
  std::vector<Tensor<T>> conv_outputs;  // post-ReLU output of each 3x3 conv
  std::array<Shape, kNumStacks> pool_in_shapes{};
  std::array<std::vector<std::int32_t>, kNumStacks> pool_argmax;
  std::array<Tensor<T>, kNumStacks> pooled;  // output of each stack
  Shape fused3_shape{};
};

template <typename T>
void check_input(const Fcn8sParams<T>& params, const Tensor<T>& x) {
  require<ShapeError>(x.c() == params.config.in_channels, "network expects ", params.config.in_channels,
                      " input channels, got ", x.c());
  require<ShapeError>(x.h() > 0 && x.w() > 0 && x.h() % kInputMultiple == 0 && x.w() % kInputMultiple == 0,
                      "network input dims must be positive multiples of ", kInputMultiple, ", got ", x.h(), "x",
                      x.w());
}

/// Runs the five stacks; returns the output of each stack (after pooling).
template <typename T>
std::array<Tensor<T>, kNumStacks> forward_stacks(const Fcn8sParams<T>& params, const Tensor<T>& x,
                                                 ForwardCache<T>* cache = nullptr) {
  check_input(params, x);
  std::array<Tensor<T>, kNumStacks> pooled;
  Tensor<T> a = x;
  std::size_t idx = 0;
  for (int s = 0; s < kNumStacks; ++s) {
    for (int i = 0; i < params.config.stacks[s].convs; ++i, ++idx) {
      const auto& conv = params.convs[idx];
      Tensor<T> y = conv2d_forward(a, conv.kernel, conv.bias);
      relu_inplace(y);
      if (cache) {
        cache->conv_inputs.push_back(std::move(a));
        cache->conv_outputs.push_back(y);
      }
      a = std::move(y);
    }
    auto pr = maxpool2d(a);
    if (cache) {
      cache->pool_in_shapes[s] = a.shape();
      cache->pool_argmax[s] = std::move(pr.argmax);
    }
    a = pr.out;
    pooled[s] = std::move(pr.out);
  }
  if (cache) cache->pooled = pooled;
  return pooled;
}

template <typename T>
Tensor<T> fcn8s_forward(const Fcn8sParams<T>& params, const Tensor<T>& x, ForwardCache<T>* cache = nullptr) {
  if (cache) *cache = ForwardCache<T>{};
  const auto pooled = forward_stacks(params, x, cache);
  Tensor<T> fused4 = bilinear_upsample(conv2d_forward(pooled[4], params.score5.kernel, params.score5.bias), 2);
  fused4 += conv2d_forward(pooled[3], params.score4.kernel, params.score4.bias);
  Tensor<T> fused3 = bilinear_upsample(fused4, 2);
  fused3 += conv2d_forward(pooled[2], params.score3.kernel, params.score3.bias);
  if (cache) cache->fused3_shape = fused3.shape();
  return bilinear_upsample(fused3, 8);
}

template <typename T>
Fcn8sParams<T> fcn8s_backward(const Fcn8sParams<T>& params, const ForwardCache<T>& cache, const Tensor<T>& dlogits) {
  Fcn8sParams<T> grads = make_params<T>(params.config);
  const Tensor<T> dfused3 = bilinear_upsample_backward(dlogits, 8);
  const Tensor<T> dfused4 = bilinear_upsample_backward(dfused3, 2);
  const Tensor<T> dscore5 = bilinear_upsample_backward(dfused4, 2);

  auto score_back = [](const ConvParams<T>& p, const Tensor<T>& in, const Tensor<T>& dy, ConvParams<T>& g) {
    auto r = conv2d_backward(in, p.kernel, dy);
    g.kernel = std::move(r.dkernel);
    g.bias = std::move(r.dbias);
    return std::move(r.dx);
  };
  std::array<Tensor<T>, kNumStacks> dpooled;
  dpooled[2] = score_back(params.score3, cache.pooled[2], dfused3, grads.score3);
  dpooled[3] = score_back(params.score4, cache.pooled[3], dfused4, grads.score4);
  dpooled[4] = score_back(params.score5, cache.pooled[4], dscore5, grads.score5);

  Tensor<T> g;
  int idx = static_cast<int>(params.convs.size());
  for (int s = kNumStacks - 1; s >= 0; --s) {
    if (!dpooled[s].values().empty()) {
      if (g.values().empty()) g = dpooled[s];
      else g += dpooled[s];
    }
    g = maxpool2d_backward(cache.pool_in_shapes[s], cache.pool_argmax[s], g);
    for (int i = params.config.stacks[s].convs - 1; i >= 0; --i) {
      --idx;
      relu_backward_inplace(cache.conv_outputs[idx], g);
      auto r = conv2d_backward(cache.conv_inputs[idx], params.convs[idx].kernel, g, idx > 0);
      grads.convs[idx].kernel = std::move(r.dkernel);
      grads.convs[idx].bias = std::move(r.dbias);
      g = std::move(r.dx);
    }
  }
  return grads;
}

/// Maps an 8-bit image to the network's input range [-1, 1], as a 1 x C x H x W tensor.
template <typename T>
Tensor<T> image_to_tensor(const RasterImage& img) {
  Tensor<T> t(1, img.channels(), img.height(), img.width());
  for (int c = 0; c < img.channels(); ++c) {
    T* p = t.plane(0, c);
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        p[static_cast<std::size_t>(y) * img.width() + x] = static_cast<T>(img.at(y, x, c) / 127.5 - 1.0);
  }
  return t;
}

/// Stacks single-item tensors along N.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  require<ShapeError>(!items.empty(), "empty batch");
  const Shape s = items.front().shape();
  Tensor<T> out(static_cast<int>(items.size()), s.c, s.h, s.w);
  std::size_t off = 0;
  for (const auto& t : items) {
    require<ShapeError>(t.shape() == s, "batch items differ in shape");
    std::copy(t.values().begin(), t.values().end(), out.data() + off);
    off += t.size();
  }
  return out;
}

}  // namespace annoseg::fcn
