#include <random>

#include <gtest/gtest.h>

#include "annoseg/imaging.hpp"
#include "annoseg/png.hpp"
#include "oracles.hpp"

using namespace annoseg;

namespace {

RasterImage uniform(int h, int w, int channels, std::uint8_t v) { return RasterImage(h, w, channels, v); }

RasterImage random_image(int h, int w, int channels, std::mt19937_64& rng) {
  RasterImage img(h, w, channels);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

}  // namespace

TEST(Grayscale, PrimaryColors) {
  RasterImage img(1, 3, 3);
  for (int c = 0; c < 3; ++c) {
    img.at(0, 0, c) = 255;
    img.at(0, 1, c) = 0;
  }
  img.at(0, 2, 0) = 255;
  const auto g = to_grayscale(img);
  EXPECT_EQ(g.at(0, 0), 255);
  EXPECT_EQ(g.at(0, 1), 0);
  EXPECT_EQ(g.at(0, 2), static_cast<int>(std::lround(0.299 * 255)));
  EXPECT_EQ(g.at(0, 2), 76);
}

TEST(Binarize, UniformImageFollowsOffsetSign) {
  const auto img = uniform(9, 7, 1, 128);
  const auto white = binarize_adaptive(img, 5, 10);
  const auto black = binarize_adaptive(img, 5, -10);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 7; ++x) {
      EXPECT_FALSE(white.is_black(y, x));
      EXPECT_TRUE(black.is_black(y, x));
    }
}

TEST(Binarize, DarkBlobOnLightBackground) {
  RasterImage img = uniform(8, 8, 1, 200);
  for (int y = 3; y < 5; ++y)
    for (int x = 2; x < 4; ++x) img.at(y, x) = 10;
  const auto bin = binarize_adaptive(img, 7, 10);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      EXPECT_EQ(bin.is_black(y, x), oracle::is_black(img, y, x, 7, 10)) << y << "," << x;
      EXPECT_EQ(bin.is_black(y, x), y >= 3 && y < 5 && x >= 2 && x < 4) << y << "," << x;
    }
}

TEST(Binarize, MatchesNeighborhoodMeanOracleOnRandomImages) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 5 + static_cast<int>(rng() % 30);
    const int w = 5 + static_cast<int>(rng() % 30);
    const int window = 3 + 2 * static_cast<int>(rng() % 8);
    const int offset = static_cast<int>(rng() % 41) - 20;
    const auto img = random_image(h, w, trial % 2 ? 3 : 1, rng);
    const auto bin = binarize_adaptive(img, window, offset);
    const auto sat = oracle::black_mask(img, window, offset);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        ASSERT_EQ(bin.is_black(y, x), oracle::is_black(img, y, x, window, offset));
        ASSERT_EQ(bin.is_black(y, x), sat[static_cast<std::size_t>(y) * w + x] != 0);
      }
  }
}

TEST(Binarize, RejectsEvenWindow) { EXPECT_THROW(binarize_adaptive(uniform(4, 4, 1, 0), 4, 0), ValidationError); }

TEST(Crop, IdentityAndCorner) {
  std::mt19937_64 rng(1);
  const auto img = random_image(6, 9, 3, rng);
  const auto full = crop(img, {0, 0, 6, 9});
  EXPECT_TRUE(std::equal(full.data().begin(), full.data().end(), img.data().begin()));
  const auto one = crop(img, {0, 0, 1, 1});
  for (int c = 0; c < 3; ++c) EXPECT_EQ(one.at(0, 0, c), img.at(0, 0, c));
}

TEST(Crop, PatchFromMinimumSizePage) {
  RasterImage img(1000, 1187, 1);
  for (int y = 0; y < 1000; ++y)
    for (int x = 0; x < 1187; ++x) img.at(y, x) = static_cast<std::uint8_t>((y * 7 + x * 13) % 251);
  const auto p = crop(img, {100, 200, 512, 512});
  ASSERT_EQ(p.height(), 512);
  ASSERT_EQ(p.width(), 512);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 512; ++x) ASSERT_EQ(p.at(y, x), ((100 + y) * 7 + (200 + x) * 13) % 251);
}

TEST(Crop, OutOfBoundsThrows) {
  const auto img = uniform(10, 10, 1, 0);
  EXPECT_THROW(crop(img, {5, 5, 6, 1}), ValidationError);
  EXPECT_THROW(crop(img, {-1, 0, 2, 2}), ValidationError);
}

TEST(ResizeBilinear, ConstantStaysConstant) {
  const auto img = uniform(7, 5, 3, 77);
  for (auto [h, w] : {std::pair{1, 1}, {3, 11}, {14, 10}, {40, 2}}) {
    const auto out = resize_bilinear(img, h, w);
    for (auto v : out.data()) ASSERT_EQ(v, 77);
  }
}

TEST(ResizeBilinear, IdentityIsExact) {
  std::mt19937_64 rng(2);
  const auto img = random_image(13, 17, 3, rng);
  const auto out = resize_bilinear(img, 13, 17);
  EXPECT_TRUE(std::equal(out.data().begin(), out.data().end(), img.data().begin()));
}

TEST(ResizeBilinear, TwoByTwoToFourByFourMatchesFormula) {
  RasterImage img(2, 2, 1);
  img.at(0, 0) = 0;
  img.at(0, 1) = 100;
  img.at(1, 0) = 100;
  img.at(1, 1) = 200;
  const auto out = resize_bilinear(img, 4, 4);
  auto src = [&](int y, int x) { return static_cast<double>(img.at(y, x)); };
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      EXPECT_EQ(out.at(y, x), std::lround(oracle::bilinear_at(src, 2, 2, 4, 4, y, x))) << y << "," << x;
  // Corners are clamped to the source corners; the center of a 2x upscale
  // sits a quarter pixel in.
  EXPECT_EQ(out.at(0, 0), 0);
  EXPECT_EQ(out.at(3, 3), 200);
  EXPECT_EQ(out.at(1, 1), 50);
}

TEST(ResizeBilinear, DownscaleMatchesFormula) {
  std::mt19937_64 rng(3);
  const auto img = random_image(23, 31, 3, rng);
  const auto out = resize_bilinear(img, 9, 12);
  for (int c = 0; c < 3; ++c) {
    auto src = [&](int y, int x) { return static_cast<double>(img.at(y, x, c)); };
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 12; ++x)
        // Rounded from an independently computed sample, so ties may round either way.
        ASSERT_LE(std::abs(out.at(y, x, c) - oracle::bilinear_at(src, 23, 31, 9, 12, y, x)), 0.5 + 1e-9);
  }
}

TEST(Png, RoundTrip) {
  std::mt19937_64 rng(4);
  const auto dir = std::filesystem::temp_directory_path() / "annoseg_png_test";
  std::filesystem::create_directories(dir);
  for (int ch : {1, 3}) {
    const auto img = random_image(11, 7, ch, rng);
    write_png(dir / "a.png", img);
    const auto back = read_png(dir / "a.png");
    ASSERT_EQ(back.channels(), ch);
    EXPECT_TRUE(std::equal(back.data().begin(), back.data().end(), img.data().begin()));
  }
  std::vector<std::uint16_t> plane(5 * 3);
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = static_cast<std::uint16_t>(i * 4000 + 17);
  write_png16(dir / "b.png", 5, 3, plane);
  int h = 0, w = 0;
  EXPECT_EQ(read_png16(dir / "b.png", h, w), plane);
  EXPECT_EQ(h, 5);
  EXPECT_EQ(w, 3);
  std::filesystem::remove_all(dir);
}
