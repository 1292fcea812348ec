#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tiledet/image.hpp"

namespace tiledet::spectral {

using Complex = std::complex<double>;

// 2D DFT of a real raster. Storage is in natural FFT order; at() takes
// centred frequencies with -rows/2 <= r1 < rows/2 (likewise for r2).
struct SpectrumGrid {
  int rows = 0;
  int cols = 0;
  std::vector<Complex> values;

  SpectrumGrid() = default;
  SpectrumGrid(int r, int c) : rows(r), cols(c), values(static_cast<std::size_t>(r) * c) {}

  static int wrap(int k, int n) noexcept { return ((k % n) + n) % n; }

  Complex& at(int r1, int r2) noexcept {
    return values[static_cast<std::size_t>(wrap(r1, rows)) * cols + wrap(r2, cols)];
  }
  Complex at(int r1, int r2) const noexcept {
    return values[static_cast<std::size_t>(wrap(r1, rows)) * cols + wrap(r2, cols)];
  }
};

// Angular frequency pair in radians/sample; omega1 pairs with rows.
struct FrequencySample {
  double omega1 = 0.0;
  double omega2 = 0.0;
};

// Exact, non-overlapping partition of an image into n0 x n1 tiles.
struct TilePartition {
  std::vector<int> row_sizes;
  std::vector<int> col_sizes;

  int n0() const noexcept { return static_cast<int>(row_sizes.size()); }
  int n1() const noexcept { return static_cast<int>(col_sizes.size()); }
  std::vector<int> row_offsets() const;
  std::vector<int> col_offsets() const;
  // Throws PartitionMismatch unless the sizes are positive and tile h x w.
  void validate(int h, int w) const;
};

using TileGrid = std::vector<std::vector<Image>>;

// Forward transform of a 1-channel image (FFTW backed).
SpectrumGrid dft2(const Image& img);
// Inverse transform, real part, 1/(rows*cols) normalisation.
Image idft2_real(const SpectrumGrid& spec);

// Keeps bins with |r1| < out_rows/2 and |r2| < out_cols/2, scaled by
// (out_rows*out_cols)/(rows*cols). Same-size truncation is the identity.
SpectrumGrid truncate_spectrum(const SpectrumGrid& spec, int out_rows, int out_cols);

// D_M(w) = sin(M w / 2) / sin(w / 2), with the removable singularities at
// w = 2 pi k evaluated analytically.
double dirichlet(double omega, int M);

// DTFT of an M1 x M2 rectangular window anchored at the origin.
Complex window_spectrum(FrequencySample sample, int M1, int M2);

// DTFT of a 1-channel tile in tile-local coordinates.
Complex tile_dtft(const Image& tile, FrequencySample sample);

// Cuts `img` along the partition.
TileGrid split(const Image& img, const TilePartition& partition);

// Full-image DTFT assembled from per-tile DTFTs with phase shifts.
Complex reconstruct_spectrum(const TilePartition& partition, const TileGrid& tiles,
                             FrequencySample sample);

// DFT of img * W, where W is the M1 x M2 rectangle at (top, left), computed as
// the circular convolution of dft2(img) with the sampled window spectrum.
// O((rows*cols)^2); meant for small grids.
SpectrumGrid windowed_dft_by_convolution(const Image& img, int top, int left, int M1, int M2);

enum class DownsampleMode { Resize, Crop };

struct EnergyRatioOptions {
  DownsampleMode mode = DownsampleMode::Crop;
  int out_size = 64;
  std::uint64_t seed = 0;
  ResizeFilter filter = ResizeFilter::IdealLowPass;
};

// Per-bin ratio of mean real power to mean fake power, out_size x out_size,
// DC at (out_size/2, out_size/2). Resize mode centre-crops each image to
// 2*out_size square and halves it; Crop mode takes one seeded random crop.
struct RatioMap {
  int size = 0;
  std::vector<double> ratio;

  double at(int row, int col) const noexcept { return ratio[static_cast<std::size_t>(row) * size + col]; }
};

RatioMap energy_ratio_map(const std::vector<Image>& real_set, const std::vector<Image>& fake_set,
                          const EnergyRatioOptions& options);

// Mean of the ratio over bins whose centred Chebyshev radius exceeds
// fraction * size/2 (fraction 0.5 gives |r| > size/4).
double outer_band_mean(const RatioMap& map, double fraction = 0.5);

// Mean power over bins with max(|r1|/(rows/2), |r2|/(cols/2)) > fraction.
double band_energy(const SpectrumGrid& spec, double fraction);

void write_ratio_csv(const RatioMap& map, const std::filesystem::path& path, const std::string& header);
// 8-bit heatmap: log10 ratio clamped to [-2, 2] mapped linearly to [0, 255].
void write_ratio_pgm(const RatioMap& map, const std::filesystem::path& path, const std::string& header);
unsigned char ratio_to_gray(double ratio) noexcept;

}  // namespace tiledet::spectral
