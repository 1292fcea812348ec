#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "tiledet/error.hpp"
#include "tiledet/tiling.hpp"

using namespace tiledet;

namespace {

// Marks covered pixels along one axis and checks count and boundary rules.
void check_axis(int L, int P) {
  const auto s = axis_starts(L, P);
  ASSERT_EQ(static_cast<int>(s.size()), (L + P - 1) / P) << L;
  ASSERT_EQ(s.front(), 0);
  ASSERT_EQ(s.back(), L - P);
  std::vector<char> covered(L, 0);
  for (int x : s) {
    ASSERT_GE(x, 0);
    ASSERT_LE(x + P, L);
    std::fill(covered.begin() + x, covered.begin() + x + P, 1);
  }
  ASSERT_TRUE(std::all_of(covered.begin(), covered.end(), [](char c) { return c; })) << L;
  ASSERT_TRUE(std::is_sorted(s.begin(), s.end()));
}

}  // namespace

TEST(AxisStarts, HandValues) {
  EXPECT_EQ(axis_starts(448, 224), (std::vector<int>{0, 224}));
  EXPECT_EQ(axis_starts(224, 224), (std::vector<int>{0}));
  EXPECT_EQ(axis_starts(500, 224), (std::vector<int>{0, 166, 276}));
  EXPECT_EQ(axis_starts(65, 64), (std::vector<int>{0, 1}));
}

TEST(AxisStarts, CoverageSweep) {
  for (int L = 224; L <= 1024; ++L) check_axis(L, 224);
  for (int L = 64; L <= 700; ++L) check_axis(L, 64);
  EXPECT_THROW(axis_starts(100, 224), Error);
}

TEST(FullCoverage, Plans) {
  const TilePlan a = full_coverage_plan(448, 448, 224);
  EXPECT_EQ(a.origins, (std::vector<TileOrigin>{{0, 0}, {0, 224}, {224, 0}, {224, 224}}));
  const TilePlan b = full_coverage_plan(224, 500, 224);
  EXPECT_EQ(b.origins, (std::vector<TileOrigin>{{0, 0}, {0, 166}, {0, 276}}));
  EXPECT_EQ(full_coverage_plan(224, 224, 224).origins.size(), 1u);
  try {
    full_coverage_plan(223, 500, 224);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ImageSmallerThanTile);
  }
}

TEST(FullCoverage, PixelCoverageRandomSizes) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> L(64, 600);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = L(rng), w = L(rng);
    const TilePlan p = full_coverage_plan(h, w, 64);
    std::vector<char> hit(static_cast<std::size_t>(h) * w, 0);
    for (auto o : p.origins)
      for (int y = o.top; y < o.top + 64; ++y)
        for (int x = o.left; x < o.left + 64; ++x) hit[static_cast<std::size_t>(y) * w + x] = 1;
    EXPECT_TRUE(std::all_of(hit.begin(), hit.end(), [](char c) { return c; })) << h << "x" << w;
  }
}

TEST(FullCoverage, CountMonotone) {
  std::size_t prev = 0;
  for (int w = 224; w < 1200; ++w) {
    const std::size_t n = full_coverage_plan(300, w, 224).origins.size();
    EXPECT_GE(n, prev);
    prev = n;
  }
}

TEST(NormalizeSmall, Rule) {
  EXPECT_EQ(normalized_dims(512, 512, 224), (std::pair{512, 512}));
  EXPECT_EQ(normalized_dims(112, 448, 224), (std::pair{224, 896}));
  EXPECT_EQ(normalized_dims(100, 100, 224), (std::pair{224, 224}));
  EXPECT_EQ(normalized_dims(300, 150, 224), (std::pair{448, 224}));
  const Image big = oracle::random_image(70, 80, 3, 1);
  EXPECT_EQ(normalize_small(big, 64), big);
  const Image small = normalize_small(oracle::random_image(32, 48, 3, 1), 64);
  EXPECT_EQ(small.height(), 64);
  EXPECT_EQ(small.width(), 96);
}

TEST(TrainingTiles, SingleOriginWhenTileFits) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const TilePlan p = sample_training_tiles(224, 224, 224, {1, 16, s});
    EXPECT_EQ(p.origins, (std::vector<TileOrigin>{{0, 0}}));
  }
}

TEST(TrainingTiles, DeterministicAndBounded) {
  const SamplingConfig cfg{1, 16, 99};
  EXPECT_EQ(sample_training_tiles(300, 700, 64, cfg), sample_training_tiles(300, 700, 64, cfg));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const int h = 64 + static_cast<int>(rng() % 300), w = 64 + static_cast<int>(rng() % 300);
    const TilePlan p = sample_training_tiles(h, w, 64, {1, 16, rng()});
    const int cap = std::min<int>(16, ((h + 63) / 64) * ((w + 63) / 64));
    EXPECT_GE(p.origins.size(), 1u);
    EXPECT_LE(static_cast<int>(p.origins.size()), cap);
    for (auto o : p.origins) {
      EXPECT_LE(o.top + 64, h);
      EXPECT_LE(o.left + 64, w);
    }
  }
}

TEST(TrainingTiles, KIsUniformOverRange) {
  // 448x448 at 224 allows K in [1, 4].
  std::vector<int> hist(5, 0);
  for (std::uint64_t s = 0; s < 4000; ++s) ++hist[sample_training_tiles(448, 448, 224, {1, 16, s}).origins.size()];
  for (int k = 1; k <= 4; ++k) EXPECT_NEAR(hist[k] / 4000.0, 0.25, 0.03) << k;
}

TEST(TrainingTiles, OriginsRoughlyUniform) {
  // Quadrant chi-square, 3 dof; 11.34 is the p = 0.01 critical value.
  std::array<int, 4> q{};
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto o = sample_training_tiles(448, 448, 224, {1, 1, s}).origins.at(0);
    ++q[(o.top > 112 ? 2 : 0) + (o.left > 112 ? 1 : 0)];
  }
  // 0..112 holds 113 of the 225 offsets per axis.
  const double pa = 113.0 / 225, pb = 112.0 / 225;
  const std::array<double, 4> expect{pa * pa, pa * pb, pb * pa, pb * pb};
  double chi = 0;
  for (int i = 0; i < 4; ++i) chi += std::pow(q[i] - 1000 * expect[i], 2) / (1000 * expect[i]);
  EXPECT_LT(chi, 11.34);
}

TEST(ExtractTiles, ExactCopies) {
  const Image img = oracle::random_image(100, 90, 3, 2);
  const TilePlan p = full_coverage_plan(100, 90, 64);
  const auto tiles = extract_tiles(img, p);
  ASSERT_EQ(tiles.size(), 4u);
  EXPECT_EQ(tiles[3].at(0, 0, 1), img.at(36, 26, 1));
  EXPECT_EQ(tiles[1].at(63, 63, 2), img.at(63, 89, 2));
}
