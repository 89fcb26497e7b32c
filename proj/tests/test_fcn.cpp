#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "annoseg/fcn/checkpoint.hpp"
#include "annoseg/fcn/layers.hpp"
#include "annoseg/fcn/network.hpp"
#include "annoseg/fcn/train.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace annoseg;
using namespace annoseg::fcn;

TEST(Conv, OneByOneIdentity) {
  std::mt19937_64 rng(1);
  const auto x = oracle::random_tensor<double>({2, 1, 5, 6}, rng);
  const Tensor<double> k(1, 1, 1, 1, 1.0);
  const Tensor<double> b(1, 1, 1, 1);
  const auto y = conv2d_forward(x, k, b);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv, ZeroKernelGivesBias) {
  std::mt19937_64 rng(2);
  const auto x = oracle::random_tensor<double>({1, 3, 4, 4}, rng);
  const Tensor<double> k(2, 3, 3, 3);
  Tensor<double> b(1, 2, 1, 1);
  b[0] = 0.5;
  b[1] = -2;
  const auto y = conv2d_forward(x, k, b);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 16; ++i) EXPECT_EQ(y.plane(0, c)[i], b[c]);
}

TEST(Conv, ForwardMatchesLoopNest) {
  std::mt19937_64 rng(3);
  const auto x = oracle::random_tensor<double>({1, 3, 6, 6}, rng);
  const auto k = oracle::random_tensor<double>({4, 3, 3, 3}, rng);
  const auto b = oracle::random_tensor<double>({1, 4, 1, 1}, rng);
  const auto y = conv2d_forward(x, k, b);
  const auto ref = oracle::conv2d(x, k, b);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv, ForwardMatchesLoopNestAcrossRowBlocks) {
  // Tall enough that im2col works in several row blocks.
  std::mt19937_64 rng(4);
  const auto x = oracle::random_tensor<double>({1, 8, 300, 40}, rng);
  const auto k = oracle::random_tensor<double>({3, 8, 3, 3}, rng);
  const auto b = oracle::random_tensor<double>({1, 3, 1, 1}, rng);
  const auto y = conv2d_forward(x, k, b);
  const auto ref = oracle::conv2d(x, k, b);
  double worst = 0;
  for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y[i] - ref[i]));
  EXPECT_LT(worst, 1e-12);
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) EXPECT_LT(gradcheck::conv(seed), 1e-4) << "seed " << seed;
}

TEST(Conv, ShapeMismatchThrows) {
  EXPECT_THROW(conv2d_forward(Tensor<double>(1, 2, 4, 4), Tensor<double>(1, 3, 3, 3), Tensor<double>(1, 1, 1, 1)),
               ShapeError);
}

TEST(MaxPool, ConstantInputRoutesToFirstElement) {
  const Tensor<double> x(1, 1, 4, 4, 3.0);
  const auto pr = maxpool2d(x);
  for (double v : pr.out.values()) EXPECT_EQ(v, 3.0);
  const Tensor<double> dy(1, 1, 2, 2, 1.0);
  const auto dx = maxpool2d_backward(x.shape(), pr.argmax, dy);
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 4; ++xx) EXPECT_EQ(dx(0, 0, y, xx), (y % 2 == 0 && xx % 2 == 0) ? 1.0 : 0.0);
}

TEST(MaxPool, WindowMaxima) {
  Tensor<double> x(1, 1, 4, 4);
  const double v[16] = {1, 9, 2, 3, 4, 5, 8, 6, 7, 0, 15, 14, 11, 10, 12, 13};
  for (int i = 0; i < 16; ++i) x[i] = v[i];
  const auto out = maxpool2d(x).out;
  EXPECT_EQ(out(0, 0, 0, 0), 9);
  EXPECT_EQ(out(0, 0, 0, 1), 8);
  EXPECT_EQ(out(0, 0, 1, 0), 11);
  EXPECT_EQ(out(0, 0, 1, 1), 15);
}

TEST(MaxPool, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) EXPECT_LT(gradcheck::maxpool(seed), 1e-4);
}

TEST(Relu, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) EXPECT_LT(gradcheck::relu(seed), 1e-4);
}

TEST(Upsample, ConstantMap) {
  const Tensor<double> x(1, 2, 3, 5, 0.25);
  for (int f : {2, 8}) {
    const auto y = bilinear_upsample(x, f);
    EXPECT_EQ(y.shape(), (Shape{1, 2, 3 * f, 5 * f}));
    for (double v : y.values()) EXPECT_NEAR(v, 0.25, 1e-15);
  }
}

TEST(Upsample, Linear) {
  std::mt19937_64 rng(5);
  const auto a = oracle::random_tensor<double>({1, 2, 3, 4}, rng);
  const auto b = oracle::random_tensor<double>({1, 2, 3, 4}, rng);
  Tensor<double> combo = a;
  combo *= 2.5;
  Tensor<double> bb = b;
  bb *= -0.75;
  combo += bb;
  const auto lhs = bilinear_upsample(combo, 8);
  const auto ua = bilinear_upsample(a, 8);
  const auto ub = bilinear_upsample(b, 8);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], 2.5 * ua[i] - 0.75 * ub[i], 1e-12);
}

TEST(Upsample, AgreesWithImageResize) {
  // Integer-valued input chosen so that every 2x output is exactly
  // representable; resize_bilinear rounds, upsample does not.
  std::mt19937_64 rng(6);
  Tensor<double> x(2, 3, 4, 4);
  for (auto& v : x.values()) v = static_cast<double>(16 * (rng() % 16));
  const auto y = bilinear_upsample(x, 2);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      RasterImage img(4, 4, 1);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) img.at(i, j) = static_cast<std::uint8_t>(x(n, c, i, j));
      const auto r = resize_bilinear(img, 8, 8);
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) ASSERT_EQ(y(n, c, i, j), r.at(i, j)) << n << c << i << j;
    }
}

TEST(Upsample, MatchesFormulaAtFactorEight) {
  std::mt19937_64 rng(7);
  const auto x = oracle::random_tensor<double>({1, 1, 3, 5}, rng);
  const auto y = bilinear_upsample(x, 8);
  auto src = [&](int i, int j) { return x(0, 0, i, j); };
  for (int i = 0; i < 24; ++i)
    for (int j = 0; j < 40; ++j) ASSERT_NEAR(y(0, 0, i, j), oracle::bilinear_at(src, 3, 5, 24, 40, i, j), 1e-12);
}

TEST(Upsample, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    EXPECT_LT(gradcheck::upsample(seed, 2), 1e-4);
    EXPECT_LT(gradcheck::upsample(seed, 8), 1e-4);
  }
}

TEST(Loss, UniformLogitsGiveLogTwo) {
  const Tensor<double> logits(1, 2, 3, 3);
  LabelMap lm(3, 3);
  lm.at(1, 1) = kAnnotation;
  const auto r = softmax_ce_masked(logits, lm);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
}

TEST(Loss, AllAmbiguousIsZero) {
  std::mt19937_64 rng(8);
  const auto logits = oracle::random_tensor<double>({1, 2, 4, 4}, rng);
  const LabelMap lm(4, 4, kAmbiguous);
  const auto r = softmax_ce_masked(logits, lm);
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Loss, AmbiguousPixelsDoNotContribute) {
  std::mt19937_64 rng(9);
  auto logits = oracle::random_tensor<double>({1, 2, 4, 4}, rng);
  LabelMap lm = gradcheck::random_labels(4, 4, rng);
  const auto base = softmax_ce_masked(logits, lm);
  for (int i = 0; i < 16; ++i) {
    if (lm.data()[i] != kAmbiguous) continue;
    EXPECT_EQ(base.grad.plane(0, 0)[i], 0.0);
    logits.plane(0, 0)[i] += 5;
  }
  EXPECT_EQ(softmax_ce_masked(logits, lm).loss, base.loss);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) EXPECT_LT(gradcheck::softmax_ce(seed), 1e-4);
}

TEST(Network, ShapeContract) {
  const auto params = init_params<float>(NetworkConfig::with_widths({2, 2, 2, 2, 2}), 1);
  for (auto [h, w] : {std::pair{32, 32}, {512, 512}, {64, 160}}) {
    const Tensor<float> x(1, 3, h, w);
    const auto pooled = forward_stacks(params, x);
    EXPECT_EQ(pooled[4].h(), h / 32);
    EXPECT_EQ(pooled[4].w(), w / 32);
    const auto logits = fcn8s_forward(params, x);
    EXPECT_EQ(logits.shape(), (Shape{1, 2, h, w}));
  }
  EXPECT_THROW(fcn8s_forward(params, Tensor<float>(1, 3, 48, 64)), ShapeError);
  EXPECT_THROW(fcn8s_forward(params, Tensor<float>(1, 1, 64, 64)), ShapeError);
}

TEST(Network, ZeroScoreLayersGiveZeroLogits) {
  auto params = init_params<double>(NetworkConfig::with_widths({2, 2, 2, 2, 2}), 3);
  std::mt19937_64 rng(3);
  for (auto& [name, t] : params.named_tensors())
    if (name.rfind("score", 0) != 0)
      for (auto& v : t->values()) v += 0.1;
  for (auto* s : {&params.score3, &params.score4, &params.score5}) {
    s->kernel.fill(0);
    s->bias.fill(0);
  }
  const auto logits = fcn8s_forward(params, oracle::random_tensor<double>({1, 3, 64, 64}, rng));
  for (double v : logits.values()) EXPECT_EQ(v, 0.0);
}

TEST(Network, EndToEndGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto r = gradcheck::network(seed);
    EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed;
    EXPECT_GT(r.checked, r.skipped * 4);
  }
}

TEST(Network, InitIsSeeded) {
  const auto cfg = NetworkConfig{};
  const auto a = init_params<float>(cfg, 5);
  const auto b = init_params<float>(cfg, 5);
  const auto c = init_params<float>(cfg, 6);
  EXPECT_TRUE(std::equal(a.convs[0].kernel.values().begin(), a.convs[0].kernel.values().end(),
                         b.convs[0].kernel.values().begin()));
  EXPECT_FALSE(std::equal(a.convs[0].kernel.values().begin(), a.convs[0].kernel.values().end(),
                          c.convs[0].kernel.values().begin()));
}

TEST(Sgd, MomentumZeroIsPlainStep) {
  std::vector<double> p{1, 2, 3}, g{0.5, -1, 2}, v(3, 0.0);
  sgd_update<double>(p, g, v, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
  EXPECT_DOUBLE_EQ(p[1], 2.1);
  EXPECT_DOUBLE_EQ(p[2], 2.8);
}

TEST(Sgd, ZeroLearningRateLeavesParameters) {
  std::vector<double> p{1, 2}, g{4, 5}, v(2, 0.0);
  sgd_update<double>(p, g, v, 0.0, 0.9);
  EXPECT_EQ(p, (std::vector<double>{1, 2}));
}

TEST(Sgd, QuadraticMatchesHandLoop) {
  // f(p) = 0.5 * sum a_i p_i^2, gradient a_i p_i.
  const std::vector<double> a{1.0, 3.0, 0.2};
  std::vector<double> p{2, -1, 5}, v(3, 0.0);
  std::vector<double> rp = p, rv(3, 0.0);
  for (int it = 0; it < 50; ++it) {
    std::vector<double> g(3);
    for (int i = 0; i < 3; ++i) g[i] = a[i] * p[i];
    sgd_update<double>(p, g, v, 0.05, 0.9);
    for (int i = 0; i < 3; ++i) {
      rv[i] = 0.9 * rv[i] + a[i] * rp[i];
      rp[i] -= 0.05 * rv[i];
    }
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], rp[i], 1e-12);
}

namespace {

std::vector<TrainingPage> tiny_pages() {
  std::vector<TrainingPage> pages;
  for (int k = 0; k < 2; ++k) {
    RasterImage img(96, 96, 3, 230);
    LabelMap lm(96, 96);
    for (int y = 20 + k * 10; y < 40 + k * 10; ++y)
      for (int x = 10; x < 70; ++x) {
        img.at(y, x, 0) = 20;
        lm.at(y, x) = kAnnotation;
      }
    pages.push_back({img, lm});
  }
  return pages;
}

PatchSampler crop64() {
  return [](const RasterImage& img, const LabelMap& lm, Rng& rng) { return sample_random_crop(img, lm, 64, rng); };
}

}  // namespace

TEST(Train, DeterministicAndThreadIndependent) {
  const auto cfg = NetworkConfig::with_widths({4, 4, 4, 4, 4});
  TrainConfig tc;
  tc.steps = 6;
  tc.batch = 2;
  tc.lr = 0.05;
  auto a = init_params<float>(cfg, 1);
  auto b = init_params<float>(cfg, 1);
  auto c = init_params<float>(cfg, 1);
  const auto ra = train(a, tiny_pages(), crop64(), tc);
  const auto rb = train(b, tiny_pages(), crop64(), tc);
  tc.threads = 2;
  const auto rc = train(c, tiny_pages(), crop64(), tc);
  EXPECT_EQ(ra.loss_history, rb.loss_history);
  EXPECT_EQ(ra.loss_history, rc.loss_history);
  EXPECT_EQ(encode_checkpoint(a, {}), encode_checkpoint(b, {}));
  EXPECT_EQ(encode_checkpoint(a, {}), encode_checkpoint(c, {}));
}

TEST(Train, LossDecreasesOnEasyTask) {
  auto params = init_params<float>(NetworkConfig::with_widths({8, 8, 8, 8, 8}), 2);
  TrainConfig tc;
  tc.steps = 60;
  tc.lr = 0.05;
  const auto r = train(params, tiny_pages(), crop64(), tc);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += r.loss_history[i];
    last += r.loss_history[r.loss_history.size() - 1 - i];
  }
  EXPECT_LT(last, first * 0.7);
}

TEST(Train, DivergenceKeepsLastFiniteParameters) {
  auto params = init_params<double>(NetworkConfig::with_widths({2, 2, 2, 2, 2}), 3);
  TrainConfig tc;
  tc.steps = 5;
  std::vector<char> snapshot;
  int calls = 0;
  // A sampler that poisons the third patch.
  PatchSampler poisoned = [&](const RasterImage& img, const LabelMap& lm, Rng& rng) {
    auto s = sample_random_crop(img, lm, 64, rng);
    if (++calls == 3) params.score5.bias[0] = std::numeric_limits<double>::quiet_NaN();
    return s;
  };
  try {
    train<double>(params, tiny_pages(), poisoned, tc, [&](int, double, const Fcn8sParams<double>& p) {
      snapshot = encode_checkpoint(p, {});
    });
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.step(), 2);
  }
  EXPECT_FALSE(snapshot.empty());
}

TEST(Checkpoint, RoundTrip) {
  const auto params = init_params<float>(NetworkConfig::with_widths({3, 4, 5, 6, 7}, 1), 9);
  ModelMeta meta{InputMode::kBinarized, {21, 7}};
  const auto bytes = encode_checkpoint(params, meta);
  const auto ck = decode_checkpoint<float>(bytes);
  EXPECT_EQ(ck.meta.input, InputMode::kBinarized);
  EXPECT_EQ(ck.meta.binarize.window, 21);
  EXPECT_EQ(ck.meta.binarize.offset, 7);
  EXPECT_EQ(encode_checkpoint(ck.params, ck.meta), bytes);
  // A float checkpoint loads into a double network exactly.
  const auto wide = decode_checkpoint<double>(bytes);
  EXPECT_EQ(wide.params.convs[2].kernel[5], static_cast<double>(params.convs[2].kernel[5]));
}

TEST(Checkpoint, CorruptInputRejected) {
  const auto bytes = encode_checkpoint(init_params<float>(NetworkConfig::with_widths({2, 2, 2, 2, 2}), 1), {});
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint<float>(bad), ParseError);
  EXPECT_THROW(decode_checkpoint<float>(std::vector<char>(bytes.begin(), bytes.end() - 3)), ParseError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_checkpoint<float>(extra), ParseError);
}
