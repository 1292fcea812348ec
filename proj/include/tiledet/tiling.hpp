#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tiledet/image.hpp"

namespace tiledet {

struct TileOrigin {
  int top = 0;
  int left = 0;
  friend bool operator==(const TileOrigin&, const TileOrigin&) = default;
};

struct TilePlan {
  int tile_size = 0;
  int source_h = 0;
  int source_w = 0;
  std::vector<TileOrigin> origins;
  friend bool operator==(const TilePlan&, const TilePlan&) = default;
};

struct SamplingConfig {
  int k_min = 1;
  int k_max = 16;
  std::uint64_t seed = 0;
};

// Tile starts along one axis of length L: N = ceil(L/P) tiles,
// x_i = floor(L*(i-1)/N) for i < N and x_N = L - P.
std::vector<int> axis_starts(int L, int P);

// Row-major Cartesian product of the per-axis starts.
TilePlan full_coverage_plan(int h, int w, int P);

// Single tile at the centre, used for the one-tile baseline.
TilePlan center_crop_plan(int h, int w, int P);

// Random training crops: K ~ U[k_min, min(k_max, ceil(h/P)*ceil(w/P))],
// origins uniform over every valid offset. An exact duplicate origin is
// redrawn up to 10 times and then kept.
TilePlan sample_training_tiles(int h, int w, int P, const SamplingConfig& cfg);

// Dimensions after the short-side rule: unchanged when min(h, w) >= P,
// otherwise the short side becomes P and the long side scales by the same
// ratio (rounded, at least P).
std::pair<int, int> normalized_dims(int h, int w, int P);
Image normalize_small(const Image& img, int P);

std::vector<Image> extract_tiles(const Image& img, const TilePlan& plan);

}  // namespace tiledet
