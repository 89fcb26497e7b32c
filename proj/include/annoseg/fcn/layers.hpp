#pragma once

// Differentiable building blocks of the segmentation network. Every forward
// op has a backward that returns exact analytic gradients; the finite
// difference tests in tests/fcn_layers_test.cpp hold them to that.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "annoseg/error.hpp"
#include "annoseg/imaging.hpp"
#include "annoseg/page_gt.hpp"
#include "annoseg/tensor.hpp"

namespace annoseg::fcn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Output rows processed per GEMM so the column buffer stays cache sized.
inline int rows_per_block(int cin, int k, int w, int h) {
  const std::size_t budget = std::size_t{1} << 18;
  const std::size_t per_row = static_cast<std::size_t>(cin) * k * k * w;
  return std::clamp(static_cast<int>(budget / std::max<std::size_t>(per_row, 1)), 1, h);
}

// cols[(c*k + ky)*k + kx][(oy - r0)*W + ox] = x[c][oy + ky - p][ox + kx - p], zero outside.
template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, int r0, int r1, T* cols) {
  const int p = k / 2;
  const int rows = r1 - r0;
  const std::size_t ld = static_cast<std::size_t>(rows) * w;
  for (int c = 0; c < cin; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ld;
        const int x0 = std::max(0, p - kx);
        const int x1 = std::min(w, w + p - kx);
        for (int oy = r0; oy < r1; ++oy) {
          T* drow = dst + static_cast<std::size_t>(oy - r0) * w;
          const int iy = oy + ky - p;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + w, T(0));
            continue;
          }
          const T* srow = xc + static_cast<std::size_t>(iy) * w + (kx - p);
          std::fill(drow, drow + x0, T(0));
          std::copy(srow + x0, srow + x1, drow + x0);
          std::fill(drow + x1, drow + w, T(0));
        }
      }
    }
  }
}

// Transpose of im2col: scatter-adds column gradients back into dx.
template <typename T>
void col2im(const T* cols, int cin, int h, int w, int k, int r0, int r1, T* dx) {
  const int p = k / 2;
  const int rows = r1 - r0;
  const std::size_t ld = static_cast<std::size_t>(rows) * w;
  for (int c = 0; c < cin; ++c) {
    T* xc = dx + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * ld;
        const int x0 = std::max(0, p - kx);
        const int x1 = std::min(w, w + p - kx);
        for (int oy = r0; oy < r1; ++oy) {
          const int iy = oy + ky - p;
          if (iy < 0 || iy >= h) continue;
          const T* srow = src + static_cast<std::size_t>(oy - r0) * w;
          T* drow = xc + static_cast<std::size_t>(iy) * w + (kx - p);
          for (int ox = x0; ox < x1; ++ox) drow[ox] += srow[ox];
        }
      }
    }
  }
}

}  // namespace detail

/// Kernel is (Cout, Cin, k, k) with odd k; bias is (1, Cout, 1, 1).
template <typename T>
struct ConvParams {
  Tensor<T> kernel;
  Tensor<T> bias;

  int out_channels() const { return kernel.n(); }
  int in_channels() const { return kernel.c(); }
  int ksize() const { return kernel.h(); }
};

template <typename T>
void check_conv_shapes(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  require<ShapeError>(kernel.h() == kernel.w() && kernel.h() % 2 == 1, "conv kernel must be square and odd, got ",
                      kernel.shape());
  require<ShapeError>(x.c() == kernel.c(), "conv input has ", x.c(), " channels, kernel expects ", kernel.c());
  require<ShapeError>(bias.size() == static_cast<std::size_t>(kernel.n()), "conv bias has ", bias.size(),
                      " entries for ", kernel.n(), " output channels");
}

/// Stride-1 cross-correlation with zero "same" padding.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  check_conv_shapes(x, kernel, bias);
  const int cin = x.c();
  const int cout = kernel.n();
  const int k = kernel.h();
  const int h = x.h();
  const int w = x.w();
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> y(x.n(), cout, h, w);
  const Eigen::Map<const detail::RowMat<T>> K(kernel.data(), cout, static_cast<Eigen::Index>(cin) * k * k);

  const int block = detail::rows_per_block(cin, k, w, h);
  std::vector<T> cols(k == 1 ? 0 : static_cast<std::size_t>(cin) * k * k * block * w);
  for (int n = 0; n < x.n(); ++n) {
    const T* xn = x.plane(n, 0);
    T* yn = y.plane(n, 0);
    for (int r0 = 0; r0 < h; r0 += block) {
      const int r1 = std::min(h, r0 + block);
      const Eigen::Index m = static_cast<Eigen::Index>(r1 - r0) * w;
      const T* src = xn + static_cast<std::size_t>(r0) * w;
      Eigen::Index src_stride = static_cast<Eigen::Index>(hw);
      if (k != 1) {
        detail::im2col(xn, cin, h, w, k, r0, r1, cols.data());
        src = cols.data();
        src_stride = m;
      }
      detail::ConstStridedMap<T> C(src, static_cast<Eigen::Index>(cin) * k * k, m, Eigen::OuterStride<>(src_stride));
      detail::StridedMap<T> Y(yn + static_cast<std::size_t>(r0) * w, cout, m,
                              Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
      Y.noalias() = K * C;
    }
    for (int c = 0; c < cout; ++c) {
      T* yc = yn + static_cast<std::size_t>(c) * hw;
      const T b = bias[c];
      for (std::size_t i = 0; i < hw; ++i) yc[i] += b;
    }
  }
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> dx;  // empty when not requested
  Tensor<T> dkernel;
  Tensor<T> dbias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& dy,
                             bool need_dx = true) {
  const int cin = x.c();
  const int cout = kernel.n();
  const int k = kernel.h();
  const int h = x.h();
  const int w = x.w();
  require<ShapeError>(dy.shape() == Shape{x.n(), cout, h, w}, "conv dy shape ", dy.shape(), " does not match output");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const Eigen::Index kk = static_cast<Eigen::Index>(cin) * k * k;

  ConvGrads<T> g{need_dx ? Tensor<T>(x.shape()) : Tensor<T>(), Tensor<T>(kernel.shape()), Tensor<T>(1, cout, 1, 1)};
  const Eigen::Map<const detail::RowMat<T>> K(kernel.data(), cout, kk);
  Eigen::Map<detail::RowMat<T>> dK(g.dkernel.data(), cout, kk);

  const int block = detail::rows_per_block(cin, k, w, h);
  std::vector<T> cols(k == 1 ? 0 : static_cast<std::size_t>(cin) * k * k * block * w);
  std::vector<T> dcols(need_dx && k != 1 ? cols.size() : 0);
  for (int n = 0; n < x.n(); ++n) {
    const T* xn = x.plane(n, 0);
    const T* dyn = dy.plane(n, 0);
    for (int c = 0; c < cout; ++c) {
      const T* dyc = dyn + static_cast<std::size_t>(c) * hw;
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) acc += dyc[i];
      g.dbias[c] += acc;
    }
    for (int r0 = 0; r0 < h; r0 += block) {
      const int r1 = std::min(h, r0 + block);
      const Eigen::Index m = static_cast<Eigen::Index>(r1 - r0) * w;
      detail::ConstStridedMap<T> dY(dyn + static_cast<std::size_t>(r0) * w, cout, m,
                                    Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
      if (k == 1) {
        detail::ConstStridedMap<T> X(xn + static_cast<std::size_t>(r0) * w, cin, m,
                                     Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
        dK.noalias() += dY * X.transpose();
        if (need_dx) {
          detail::StridedMap<T> dX(g.dx.plane(n, 0) + static_cast<std::size_t>(r0) * w, cin, m,
                                   Eigen::OuterStride<>(static_cast<Eigen::Index>(hw)));
          dX.noalias() += K.transpose() * dY;
        }
        continue;
      }
      detail::im2col(xn, cin, h, w, k, r0, r1, cols.data());
      const Eigen::Map<const detail::RowMat<T>> C(cols.data(), kk, m);
      dK.noalias() += dY * C.transpose();
      if (need_dx) {
        Eigen::Map<detail::RowMat<T>> dC(dcols.data(), kk, m);
        dC.noalias() = K.transpose() * dY;
        detail::col2im(dcols.data(), cin, h, w, k, r0, r1, g.dx.plane(n, 0));
      }
    }
  }
  return g;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (auto& v : x.values()) v = v > T(0) ? v : T(0);
}

/// dy masked by the positivity of the forward output.
template <typename T>
void relu_backward_inplace(const Tensor<T>& y, Tensor<T>& dy) {
  const auto yv = y.values();
  auto g = dy.values();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(yv[i] > T(0))) g[i] = T(0);
}

template <typename T>
struct PoolResult {
  Tensor<T> out;
  std::vector<std::int32_t> argmax;  // flat in-plane index of the winning input
};

/// 2x2 window, stride 2. Ties go to the first maximal element in row-major
/// window order.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x) {
  require<ShapeError>(x.h() % 2 == 0 && x.w() % 2 == 0, "maxpool needs even spatial dims, got ", x.shape());
  const int oh = x.h() / 2;
  const int ow = x.w() / 2;
  PoolResult<T> r{Tensor<T>(x.n(), x.c(), oh, ow), std::vector<std::int32_t>(static_cast<std::size_t>(x.n()) * x.c() * oh * ow)};
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* xp = x.plane(n, c);
      T* yp = r.out.plane(n, c);
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx, ++o) {
          const int base = 2 * y * x.w() + 2 * xx;
          const int cand[4] = {base, base + 1, base + x.w(), base + x.w() + 1};
          int best = cand[0];
          for (int i = 1; i < 4; ++i)
            if (xp[cand[i]] > xp[best]) best = cand[i];
          yp[y * ow + xx] = xp[best];
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& in_shape, const std::vector<std::int32_t>& argmax, const Tensor<T>& dy) {
  Tensor<T> dx(in_shape);
  std::size_t o = 0;
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) {
      T* dp = dx.plane(n, c);
      const T* gp = dy.plane(n, c);
      for (std::size_t i = 0; i < dy.shape().plane(); ++i, ++o) dp[argmax[o]] += gp[i];
    }
  return dx;
}

/// Fixed bilinear upsampling by an integer factor, same sampling convention
/// as resize_bilinear.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor) {
  require<ShapeError>(factor >= 1, "upsample factor must be >= 1");
  const int oh = x.h() * factor;
  const int ow = x.w() * factor;
  const auto ty = bilinear_taps(x.h(), oh);
  const auto tx = bilinear_taps(x.w(), ow);
  Tensor<T> y(x.n(), x.c(), oh, ow);
  std::vector<T> row(ow);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* xp = x.plane(n, c);
      T* yp = y.plane(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        const auto& a = ty[oy];
        const T* r0 = xp + static_cast<std::size_t>(a.i0) * x.w();
        const T* r1 = xp + static_cast<std::size_t>(a.i1) * x.w();
        const T wy = static_cast<T>(a.w1);
        for (int ox = 0; ox < ow; ++ox) {
          const auto& b = tx[ox];
          const T wx = static_cast<T>(b.w1);
          const T top = (T(1) - wx) * r0[b.i0] + wx * r0[b.i1];
          const T bot = (T(1) - wx) * r1[b.i0] + wx * r1[b.i1];
          yp[static_cast<std::size_t>(oy) * ow + ox] = (T(1) - wy) * top + wy * bot;
        }
      }
    }
  return y;
}

/// Transpose of bilinear_upsample.
template <typename T>
Tensor<T> bilinear_upsample_backward(const Tensor<T>& dy, int factor) {
  require<ShapeError>(dy.h() % factor == 0 && dy.w() % factor == 0, "upsample gradient dims not divisible by factor");
  const int ih = dy.h() / factor;
  const int iw = dy.w() / factor;
  const auto ty = bilinear_taps(ih, dy.h());
  const auto tx = bilinear_taps(iw, dy.w());
  Tensor<T> dx(dy.n(), dy.c(), ih, iw);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) {
      const T* gp = dy.plane(n, c);
      T* dp = dx.plane(n, c);
      for (int oy = 0; oy < dy.h(); ++oy) {
        const auto& a = ty[oy];
        T* r0 = dp + static_cast<std::size_t>(a.i0) * iw;
        T* r1 = dp + static_cast<std::size_t>(a.i1) * iw;
        const T wy = static_cast<T>(a.w1);
        for (int ox = 0; ox < dy.w(); ++ox) {
          const auto& b = tx[ox];
          const T wx = static_cast<T>(b.w1);
          const T g = gp[static_cast<std::size_t>(oy) * dy.w() + ox];
          const T gt = (T(1) - wy) * g;
          const T gb = wy * g;
          r0[b.i0] += (T(1) - wx) * gt;
          r0[b.i1] += wx * gt;
          r1[b.i0] += (T(1) - wx) * gb;
          r1[b.i1] += wx * gb;
        }
      }
    }
  return dx;
}

/// Per-pixel softmax over the channel axis, numerically stabilized.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  Tensor<T> p(logits.shape());
  const std::size_t hw = logits.shape().plane();
  const int nc = logits.c();
  for (int n = 0; n < logits.n(); ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < nc; ++c) mx = std::max(mx, logits.plane(n, c)[i]);
      T sum = 0;
      for (int c = 0; c < nc; ++c) {
        const T e = std::exp(logits.plane(n, c)[i] - mx);
        p.plane(n, c)[i] = e;
        sum += e;
      }
      for (int c = 0; c < nc; ++c) p.plane(n, c)[i] /= sum;
    }
  }
  return p;
}

template <typename T>
struct LossSum {
  double loss_sum = 0.0;
  std::size_t count = 0;  // pixels that contributed
  Tensor<T> grad;         // gradient of loss_sum w.r.t. logits
};

/// Summed cross-entropy over non-ambiguous pixels. labels[n] must match the
/// spatial dims of logits. Ambiguous pixels get zero loss and zero gradient.
template <typename T>
LossSum<T> softmax_ce_sum(const Tensor<T>& logits, std::span<const LabelMap> labels) {
  require<ShapeError>(labels.size() == static_cast<std::size_t>(logits.n()), "need one label map per batch item");
  LossSum<T> r{0.0, 0, Tensor<T>(logits.shape())};
  const Tensor<T> p = softmax(logits);
  const std::size_t hw = logits.shape().plane();
  for (int n = 0; n < logits.n(); ++n) {
    const auto& lm = labels[static_cast<std::size_t>(n)];
    require<ShapeError>(lm.height() == logits.h() && lm.width() == logits.w(), "label map ", lm.height(), "x",
                        lm.width(), " vs logits ", logits.shape());
    const auto lab = lm.data();
    for (std::size_t i = 0; i < hw; ++i) {
      const int l = lab[i];
      if (l == kAmbiguous) continue;
      require<ShapeError>(l < logits.c(), "label ", l, " outside ", logits.c(), " classes");
      // -log p_l from the logits, so the loss stays exact (and turns
      // non-finite) where the float probabilities would underflow.
      double zmax = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < logits.c(); ++c) zmax = std::max(zmax, static_cast<double>(logits.plane(n, c)[i]));
      double sum = 0.0;
      for (int c = 0; c < logits.c(); ++c) sum += std::exp(static_cast<double>(logits.plane(n, c)[i]) - zmax);
      r.loss_sum += zmax + std::log(sum) - static_cast<double>(logits.plane(n, l)[i]);
      ++r.count;
      for (int c = 0; c < logits.c(); ++c) r.grad.plane(n, c)[i] = p.plane(n, c)[i] - (c == l ? T(1) : T(0));
    }
  }
  return r;
}

template <typename T>
struct LossMean {
  double loss = 0.0;
  Tensor<T> grad;
};

/// Mean masked cross-entropy; an all-ambiguous batch yields zero loss and gradient.
template <typename T>
LossMean<T> softmax_ce_masked(const Tensor<T>& logits, std::span<const LabelMap> labels) {
  auto s = softmax_ce_sum(logits, labels);
  if (s.count == 0) return {0.0, std::move(s.grad)};
  s.grad *= static_cast<T>(1.0 / static_cast<double>(s.count));
  return {s.loss_sum / static_cast<double>(s.count), std::move(s.grad)};
}

template <typename T>
LossMean<T> softmax_ce_masked(const Tensor<T>& logits, const LabelMap& labels) {
  return softmax_ce_masked(logits, std::span<const LabelMap>(&labels, 1));
}

}  // namespace annoseg::fcn
