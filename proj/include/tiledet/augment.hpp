#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "tiledet/image.hpp"

namespace tiledet {

struct QualityFactor {
  int qf = 100;  // 1..100
  friend bool operator==(const QualityFactor&, const QualityFactor&) = default;
};

// Binary provenance mask, 1 = pixel taken from the fake source.
struct PixelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  PixelMask() = default;
  PixelMask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
  std::uint8_t& at(int r, int c) noexcept { return values[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const noexcept { return values[static_cast<std::size_t>(r) * width + c]; }
  long count() const noexcept;
  double mean() const noexcept { return values.empty() ? 0.0 : static_cast<double>(count()) / values.size(); }
};

// Per-patch soft forgery labels in [0, 1], row-major.
struct TokenLabelGrid {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  double at(int r, int c) const noexcept { return values[static_cast<std::size_t>(r) * cols + c]; }
};

struct AugmentationPolicy {
  double p_each = 0.10;
  // Per-operation overrides; unset ones fall back to p_each.
  std::optional<double> p_scale, p_blur, p_rps, p_jpeg;
  int qf_min = 60;
  int qf_max = 100;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.5;
  double scale_min = 0.25;
  double scale_max = 2.0;
  double rps_ratio_min = 0.2;
  double rps_ratio_max = 0.98;
  int rps_grid = 14;
  std::uint64_t seed = 0;

  void validate() const;
};

// ---- JPEG-style quantisation round trip --------------------------------

// IJG scaling: 5000/qf below 50, 200 - 2*qf otherwise.
int jpeg_scale_factor(int qf);
// Standard luminance table scaled for `qf`, row-major 8x8.
std::array<int, 64> jpeg_quant_table(int qf);
// Blockwise 8x8 DCT-II, quantise/dequantise with the luma table on every
// channel, inverse DCT, clamp. Edge blocks are padded by replication.
Image jpeg_degrade(const Image& img, QualityFactor qf);

// ---- Blur / scale ------------------------------------------------------

// Normalised sampled Gaussian with radius ceil(3*sigma).
std::vector<double> gaussian_kernel(double sigma);
// Separable blur with half-sample symmetric reflection at the borders, which
// keeps the image sum unchanged.
Image gaussian_blur(const Image& img, double sigma);
// Bilinear resize to (round(h*f), round(w*f)).
Image random_scale(const Image& img, double factor);

// ---- Random Patch Swap -------------------------------------------------

struct PatchSwapResult {
  Image composite;
  PixelMask mask;
  int cells_swapped = 0;
};

// Cells are ceil(h/grid) x ceil(w/grid) (the last row/column of cells may be
// smaller or empty); floor(ratio * grid^2) distinct cells come from `fake_img`.
PatchSwapResult random_patch_swap(const Image& real_img, const Image& fake_img, double ratio, int grid,
                                  std::uint64_t rng_seed);

// Mean of the mask over each patch_size x patch_size patch.
TokenLabelGrid token_labels(const PixelMask& mask, int patch_size);
// Area-weighted mask mean over each cell of a grid_rows x grid_cols division
// of the whole mask (fractional pixel overlaps); used for the resized global view.
TokenLabelGrid area_token_labels(const PixelMask& mask, int grid_rows, int grid_cols);
TokenLabelGrid uniform_token_labels(int rows, int cols, double value);

PixelMask crop_mask(const PixelMask& mask, int top, int left, int h, int w);
// Nearest-neighbour resize (half-pixel centres); keeps the mask binary.
PixelMask resize_mask(const PixelMask& mask, int out_h, int out_w);

// ---- Policy ------------------------------------------------------------

struct AugmentationGates {
  bool scale = false;
  bool blur = false;
  bool rps = false;
  bool jpeg = false;
};

// The four gates in application order, each firing with probability p.
AugmentationGates draw_gates(std::mt19937_64& rng, double p);
AugmentationGates draw_gates(std::mt19937_64& rng, double p_scale, double p_blur, double p_rps, double p_jpeg);

struct AugmentedSample {
  Image image;
  std::optional<PixelMask> mask;  // present iff RPS was applied
  std::optional<QualityFactor> qf;  // present iff JPEG was applied
  int label = 0;                  // 1 = fake
  AugmentationGates applied;
};

// Applies scale -> blur -> RPS -> JPEG, each gated independently. `label`
// says whether `primary` is fake. `partner` is the image of the opposite class
// used by RPS (resized to match if needed); without one RPS is skipped. Any
// swapped content makes the composite fake.
AugmentedSample apply_policy(const Image& primary, const std::optional<Image>& partner, int label,
                             const AugmentationPolicy& policy);

}  // namespace tiledet
