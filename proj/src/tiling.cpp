#include "tiledet/tiling.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "tiledet/error.hpp"

namespace tiledet {

std::vector<int> axis_starts(int L, int P) {
  if (P < 1) throw Error(Errc::InvalidArgument, "tile size must be positive");
  if (L < P)
    throw Error(Errc::ImageSmallerThanTile, "length " + std::to_string(L) + " is below tile size " + std::to_string(P));
  const int n = (L + P - 1) / P;
  std::vector<int> starts(n);
  for (int i = 1; i < n; ++i) starts[i - 1] = static_cast<int>(static_cast<long>(L) * (i - 1) / n);
  starts[n - 1] = L - P;
  return starts;
}

TilePlan full_coverage_plan(int h, int w, int P) {
  TilePlan plan{P, h, w, {}};
  const auto rows = axis_starts(h, P);
  const auto cols = axis_starts(w, P);
  plan.origins.reserve(rows.size() * cols.size());
  for (int top : rows)
    for (int left : cols) plan.origins.push_back({top, left});
  return plan;
}

TilePlan center_crop_plan(int h, int w, int P) {
  if (h < P || w < P) throw Error(Errc::ImageSmallerThanTile, "image smaller than tile");
  return TilePlan{P, h, w, {{(h - P) / 2, (w - P) / 2}}};
}

TilePlan sample_training_tiles(int h, int w, int P, const SamplingConfig& cfg) {
  if (cfg.k_min < 1 || cfg.k_max < cfg.k_min) throw Error(Errc::InvalidArgument, "need 1 <= k_min <= k_max");
  if (h < P || w < P) throw Error(Errc::ImageSmallerThanTile, "image smaller than tile");
  std::mt19937_64 rng(cfg.seed);
  TilePlan plan{P, h, w, {}};
  if (h == P && w == P) {
    plan.origins.push_back({0, 0});
    return plan;
  }
  const int grid = ((h + P - 1) / P) * ((w + P - 1) / P);
  const int hi = std::min(cfg.k_max, grid);
  const int lo = std::min(cfg.k_min, hi);
  const int k = std::uniform_int_distribution<int>(lo, hi)(rng);
  std::uniform_int_distribution<int> top_d(0, h - P), left_d(0, w - P);
  plan.origins.reserve(k);
  for (int i = 0; i < k; ++i) {
    TileOrigin o{top_d(rng), left_d(rng)};
    for (int retry = 0; retry < 10 && std::find(plan.origins.begin(), plan.origins.end(), o) != plan.origins.end(); ++retry)
      o = {top_d(rng), left_d(rng)};
    plan.origins.push_back(o);
  }
  return plan;
}

std::pair<int, int> normalized_dims(int h, int w, int P) {
  if (std::min(h, w) >= P) return {h, w};
  const double ratio = static_cast<double>(P) / std::min(h, w);
  if (h <= w) return {P, std::max(P, static_cast<int>(std::lround(w * ratio)))};
  return {std::max(P, static_cast<int>(std::lround(h * ratio))), P};
}

Image normalize_small(const Image& img, int P) {
  const auto [h, w] = normalized_dims(img.height(), img.width(), P);
  if (h == img.height() && w == img.width()) return img;
  return resize(img, h, w, ResizeFilter::Bilinear);
}

std::vector<Image> extract_tiles(const Image& img, const TilePlan& plan) {
  std::vector<Image> tiles;
  tiles.reserve(plan.origins.size());
  for (const auto& o : plan.origins) tiles.push_back(crop(img, o.top, o.left, plan.tile_size, plan.tile_size));
  return tiles;
}

}  // namespace tiledet
