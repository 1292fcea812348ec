#include "tiledet/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <limits>
#include <numbers>
#include <random>

#include "tiledet/error.hpp"

namespace tiledet::spectral {

namespace {

// FFTW planning is not thread-safe; execution of distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

void fft2_inplace(std::vector<Complex>& buf, int rows, int cols, int sign) {
  auto* data = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(rows, cols, data, data, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
}

const Image& require_mono(const Image& img, Image& scratch) {
  if (img.channels() == 1) return img;
  scratch = to_luma(img);
  return scratch;
}

}  // namespace

std::vector<int> TilePartition::row_offsets() const {
  std::vector<int> off(row_sizes.size());
  int acc = 0;
  for (std::size_t i = 0; i < row_sizes.size(); ++i) {
    off[i] = acc;
    acc += row_sizes[i];
  }
  return off;
}

std::vector<int> TilePartition::col_offsets() const {
  std::vector<int> off(col_sizes.size());
  int acc = 0;
  for (std::size_t i = 0; i < col_sizes.size(); ++i) {
    off[i] = acc;
    acc += col_sizes[i];
  }
  return off;
}

void TilePartition::validate(int h, int w) const {
  auto ok = [](const std::vector<int>& sizes, int total) {
    if (sizes.empty()) return false;
    long sum = 0;
    for (int s : sizes) {
      if (s <= 0) return false;
      sum += s;
    }
    return sum == total;
  };
  if (!ok(row_sizes, h) || !ok(col_sizes, w))
    throw Error(Errc::PartitionMismatch, "partition does not tile a " + std::to_string(h) + "x" + std::to_string(w) + " image");
}

SpectrumGrid dft2(const Image& img) {
  Image scratch;
  const Image& mono = require_mono(img, scratch);
  SpectrumGrid spec(mono.height(), mono.width());
  for (std::size_t i = 0; i < spec.values.size(); ++i) spec.values[i] = mono.data()[i];
  fft2_inplace(spec.values, spec.rows, spec.cols, FFTW_FORWARD);
  return spec;
}

Image idft2_real(const SpectrumGrid& spec) {
  std::vector<Complex> buf = spec.values;
  fft2_inplace(buf, spec.rows, spec.cols, FFTW_BACKWARD);
  Image out(spec.rows, spec.cols, 1);
  const double norm = 1.0 / (static_cast<double>(spec.rows) * spec.cols);
  for (std::size_t i = 0; i < buf.size(); ++i) out.data()[i] = buf[i].real() * norm;
  return out;
}

SpectrumGrid truncate_spectrum(const SpectrumGrid& spec, int out_rows, int out_cols) {
  if (out_rows < 1 || out_cols < 1 || out_rows > spec.rows || out_cols > spec.cols)
    throw Error(Errc::InvalidDimensions, "truncation must not enlarge the grid");
  const bool keep_rows = out_rows == spec.rows;
  const bool keep_cols = out_cols == spec.cols;
  if ((!keep_rows && (out_rows % 2 || spec.rows % 2)) || (!keep_cols && (out_cols % 2 || spec.cols % 2)))
    throw Error(Errc::InvalidDimensions, "truncated axes must be even");

  const double scale = (static_cast<double>(out_rows) * out_cols) / (static_cast<double>(spec.rows) * spec.cols);
  SpectrumGrid out(out_rows, out_cols);
  for (int r1 = -out_rows / 2; r1 < out_rows - out_rows / 2; ++r1) {
    if (!keep_rows && std::abs(r1) >= out_rows / 2) continue;
    for (int r2 = -out_cols / 2; r2 < out_cols - out_cols / 2; ++r2) {
      if (!keep_cols && std::abs(r2) >= out_cols / 2) continue;
      out.at(r1, r2) = scale * spec.at(r1, r2);
    }
  }
  return out;
}

double dirichlet(double omega, int M) {
  const double half = omega / 2.0;
  const double s = std::sin(half);
  // Nearest multiple of pi for omega/2; at half = k*pi the limit is M*(-1)^{k(M-1)}.
  const double k = std::nearbyint(half / std::numbers::pi);
  if (std::abs(half - k * std::numbers::pi) < 1e-12) {
    const long ki = static_cast<long>(k);
    return ((ki * (M - 1)) % 2 == 0) ? M : -M;
  }
  return std::sin(M * half) / s;
}

Complex window_spectrum(FrequencySample sample, int M1, int M2) {
  const double phase = -sample.omega1 * (M1 - 1) / 2.0 - sample.omega2 * (M2 - 1) / 2.0;
  return std::polar(1.0, phase) * dirichlet(sample.omega1, M1) * dirichlet(sample.omega2, M2);
}

Complex tile_dtft(const Image& tile, FrequencySample sample) {
  Image scratch;
  const Image& mono = require_mono(tile, scratch);
  // Separable: precompute the per-row and per-column phasors.
  std::vector<Complex> er(mono.height()), ec(mono.width());
  for (int x = 0; x < mono.height(); ++x) er[x] = std::polar(1.0, -sample.omega1 * x);
  for (int y = 0; y < mono.width(); ++y) ec[y] = std::polar(1.0, -sample.omega2 * y);
  Complex total = 0.0;
  for (int x = 0; x < mono.height(); ++x) {
    Complex row = 0.0;
    for (int y = 0; y < mono.width(); ++y) row += mono.at(x, y) * ec[y];
    total += er[x] * row;
  }
  return total;
}

TileGrid split(const Image& img, const TilePartition& partition) {
  partition.validate(img.height(), img.width());
  const auto ro = partition.row_offsets();
  const auto co = partition.col_offsets();
  TileGrid tiles(partition.n0());
  for (int a = 0; a < partition.n0(); ++a)
    for (int b = 0; b < partition.n1(); ++b)
      tiles[a].push_back(crop(img, ro[a], co[b], partition.row_sizes[a], partition.col_sizes[b]));
  return tiles;
}

Complex reconstruct_spectrum(const TilePartition& partition, const TileGrid& tiles, FrequencySample sample) {
  if (static_cast<int>(tiles.size()) != partition.n0())
    throw Error(Errc::PartitionMismatch, "tile grid row count differs from partition");
  const auto ro = partition.row_offsets();
  const auto co = partition.col_offsets();
  Complex total = 0.0;
  for (int a = 0; a < partition.n0(); ++a) {
    if (static_cast<int>(tiles[a].size()) != partition.n1())
      throw Error(Errc::PartitionMismatch, "tile grid column count differs from partition");
    for (int b = 0; b < partition.n1(); ++b) {
      const Image& t = tiles[a][b];
      if (t.height() != partition.row_sizes[a] || t.width() != partition.col_sizes[b])
        throw Error(Errc::PartitionMismatch, "tile size differs from partition");
      const double phase = -(sample.omega1 * ro[a] + sample.omega2 * co[b]);
      total += std::polar(1.0, phase) * tile_dtft(t, sample);
    }
  }
  return total;
}

SpectrumGrid windowed_dft_by_convolution(const Image& img, int top, int left, int M1, int M2) {
  const SpectrumGrid X = dft2(img);
  const int N1 = X.rows, N2 = X.cols;
  if (top < 0 || left < 0 || M1 < 1 || M2 < 1 || top + M1 > N1 || left + M2 > N2)
    throw Error(Errc::OutOfBounds, "window exceeds the image");

  // Sampled spectrum of the shifted window on the DFT grid.
  SpectrumGrid W(N1, N2);
  for (int k1 = 0; k1 < N1; ++k1)
    for (int k2 = 0; k2 < N2; ++k2) {
      const FrequencySample s{2.0 * std::numbers::pi * k1 / N1, 2.0 * std::numbers::pi * k2 / N2};
      W.values[static_cast<std::size_t>(k1) * N2 + k2] =
          std::polar(1.0, -(s.omega1 * top + s.omega2 * left)) * window_spectrum(s, M1, M2);
    }

  SpectrumGrid out(N1, N2);
  const double norm = 1.0 / (static_cast<double>(N1) * N2);
  for (int k1 = 0; k1 < N1; ++k1)
    for (int k2 = 0; k2 < N2; ++k2) {
      Complex acc = 0.0;
      for (int m1 = 0; m1 < N1; ++m1)
        for (int m2 = 0; m2 < N2; ++m2) acc += X.at(m1, m2) * W.at(k1 - m1, k2 - m2);
      out.at(k1, k2) = acc * norm;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Energy ratio experiment

namespace {

struct CropSpec {
  int top = 0;
  int left = 0;
};

Image prepare(const Image& img, const EnergyRatioOptions& opt, CropSpec where) {
  Image scratch;
  const Image& mono = require_mono(img, scratch);
  const int n = opt.out_size;
  if (opt.mode == DownsampleMode::Crop) return crop(mono, where.top, where.left, n, n);
  const int big = 2 * n;
  const Image centre = crop(mono, (mono.height() - big) / 2, (mono.width() - big) / 2, big, big);
  return resize(centre, n, n, opt.filter);
}

// Mean power spectrum over a set; images are transformed in parallel and the
// per-image spectra are summed in index order.
std::vector<double> mean_power(const std::vector<Image>& set, const EnergyRatioOptions& opt,
                               const std::vector<CropSpec>& crops) {
  const int n = opt.out_size;
  const std::size_t bins = static_cast<std::size_t>(n) * n;
  std::vector<std::vector<double>> per_image(set.size());
  const long count = static_cast<long>(set.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < count; ++i) {
    const SpectrumGrid s = dft2(prepare(set[i], opt, crops[i]));
    std::vector<double> p(bins);
    // Store with DC at (n/2, n/2).
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) p[static_cast<std::size_t>(r) * n + c] = std::norm(s.at(r - n / 2, c - n / 2));
    per_image[i] = std::move(p);
  }
  std::vector<double> mean(bins, 0.0);
  for (const auto& p : per_image)
    for (std::size_t k = 0; k < bins; ++k) mean[k] += p[k];
  for (double& m : mean) m /= static_cast<double>(set.size());
  return mean;
}

std::vector<CropSpec> draw_crops(const std::vector<Image>& set, const EnergyRatioOptions& opt, std::mt19937_64& rng) {
  std::vector<CropSpec> crops(set.size());
  const int n = opt.out_size;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Image& img = set[i];
    const int need = opt.mode == DownsampleMode::Resize ? 2 * n : n;
    if (img.height() < need || img.width() < need)
      throw Error(Errc::ImageTooSmall, "image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                                           " is smaller than " + std::to_string(need));
    if (opt.mode == DownsampleMode::Crop) {
      std::uniform_int_distribution<int> ty(0, img.height() - n), tx(0, img.width() - n);
      crops[i].top = ty(rng);
      crops[i].left = tx(rng);
    }
  }
  return crops;
}

}  // namespace

RatioMap energy_ratio_map(const std::vector<Image>& real_set, const std::vector<Image>& fake_set,
                          const EnergyRatioOptions& options) {
  if (real_set.empty() || fake_set.empty()) throw Error(Errc::EmptySet, "energy ratio needs both sets");
  if (options.out_size < 2) throw Error(Errc::InvalidDimensions, "out_size must be at least 2");
  // Same stream for both sets, so paired images of equal size share crop windows.
  std::mt19937_64 rng_real(options.seed), rng_fake(options.seed);
  const auto real_crops = draw_crops(real_set, options, rng_real);
  const auto fake_crops = draw_crops(fake_set, options, rng_fake);
  const auto pr = mean_power(real_set, options, real_crops);
  const auto pf = mean_power(fake_set, options, fake_crops);

  RatioMap map;
  map.size = options.out_size;
  map.ratio.resize(pr.size());
  for (std::size_t k = 0; k < pr.size(); ++k) {
    if (pf[k] == 0.0) map.ratio[k] = pr[k] == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    else map.ratio[k] = pr[k] / pf[k];
  }
  return map;
}

double outer_band_mean(const RatioMap& map, double fraction) {
  const int n = map.size;
  const double cut = fraction * (n / 2.0);
  double sum = 0.0;
  long count = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const int rr = std::abs(r - n / 2), cc = std::abs(c - n / 2);
      if (std::max(rr, cc) > cut) {
        sum += map.at(r, c);
        ++count;
      }
    }
  return count ? sum / count : 0.0;
}

double band_energy(const SpectrumGrid& spec, double fraction) {
  double sum = 0.0;
  long count = 0;
  for (int r1 = -spec.rows / 2; r1 < spec.rows - spec.rows / 2; ++r1)
    for (int r2 = -spec.cols / 2; r2 < spec.cols - spec.cols / 2; ++r2) {
      const double rad = std::max(std::abs(r1) / (spec.rows / 2.0), std::abs(r2) / (spec.cols / 2.0));
      if (rad > fraction) {
        sum += std::norm(spec.at(r1, r2));
        ++count;
      }
    }
  return count ? sum / count : 0.0;
}

unsigned char ratio_to_gray(double ratio) noexcept {
  double l = ratio > 0.0 ? std::log10(ratio) : -2.0;
  if (std::isnan(l)) l = 0.0;
  l = std::clamp(l, -2.0, 2.0);
  return static_cast<unsigned char>(std::floor((l + 2.0) / 4.0 * 255.0 + 0.5));
}

void write_ratio_csv(const RatioMap& map, const std::filesystem::path& path, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  if (!header.empty()) out << "# " << header << "\n";
  out << "row,col,ratio\n";
  out.precision(10);
  for (int r = 0; r < map.size; ++r)
    for (int c = 0; c < map.size; ++c) out << r << "," << c << "," << map.at(r, c) << "\n";
  if (!out) throw Error(Errc::IoFailure, "short write to " + path.string());
}

void write_ratio_pgm(const RatioMap& map, const std::filesystem::path& path, const std::string& header) {
  Image gray(map.size, map.size, 1);
  for (int r = 0; r < map.size; ++r)
    for (int c = 0; c < map.size; ++c) gray.at(r, c) = ratio_to_gray(map.at(r, c)) / 255.0;
  save_image(gray, path, header);
}

}  // namespace tiledet::spectral
