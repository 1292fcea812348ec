#include "tiledet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "tiledet/error.hpp"

namespace tiledet {

long PixelMask::count() const noexcept {
  long n = 0;
  for (auto v : values) n += v;
  return n;
}

void AugmentationPolicy::validate() const {
  if (!(p_each >= 0.0 && p_each <= 1.0)) throw Error(Errc::InvalidArgument, "p_each must lie in [0, 1]");
  for (const auto& q : {p_scale, p_blur, p_rps, p_jpeg})
    if (q && !(*q >= 0.0 && *q <= 1.0)) throw Error(Errc::InvalidArgument, "augmentation probabilities must lie in [0, 1]");
  if (qf_min < 1 || qf_max > 100 || qf_min > qf_max) throw Error(Errc::InvalidArgument, "bad JPEG QF range");
  if (!(blur_sigma_min > 0 && blur_sigma_min <= blur_sigma_max)) throw Error(Errc::InvalidArgument, "bad blur range");
  if (!(scale_min > 0 && scale_min <= scale_max)) throw Error(Errc::InvalidArgument, "bad scale range");
  if (!(rps_ratio_min >= 0 && rps_ratio_min <= rps_ratio_max && rps_ratio_max <= 1))
    throw Error(Errc::InvalidArgument, "bad RPS ratio range");
  if (rps_grid < 1) throw Error(Errc::InvalidArgument, "RPS grid must be positive");
}

// ---------------------------------------------------------------------------
// JPEG

namespace {

constexpr std::array<int, 64> kLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

// Orthonormal DCT-II basis, basis[u][x].
const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int u = 0; u < 8; ++u) {
      const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) b[u][x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return basis;
}

}  // namespace

int jpeg_scale_factor(int qf) {
  if (qf < 1 || qf > 100) throw Error(Errc::InvalidArgument, "QF must lie in [1, 100]");
  return qf < 50 ? 5000 / qf : 200 - 2 * qf;
}

std::array<int, 64> jpeg_quant_table(int qf) {
  const int scale = jpeg_scale_factor(qf);
  std::array<int, 64> t{};
  for (int i = 0; i < 64; ++i) t[i] = std::clamp((kLumaTable[i] * scale + 50) / 100, 1, 255);
  return t;
}

Image jpeg_degrade(const Image& img, QualityFactor qf) {
  const auto table = jpeg_quant_table(qf.qf);
  const auto& B = dct_basis();
  const int h = img.height(), w = img.width(), ch = img.channels();
  Image out(h, w, ch);
  double block[8][8], tmp[8][8], coef[8][8];
  for (int c = 0; c < ch; ++c)
    for (int by = 0; by < h; by += 8)
      for (int bx = 0; bx < w; bx += 8) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            block[y][x] = img.at(std::min(by + y, h - 1), std::min(bx + x, w - 1), c) * 255.0 - 128.0;
        // coef = B * block * B^T
        for (int u = 0; u < 8; ++u)
          for (int x = 0; x < 8; ++x) {
            double s = 0;
            for (int y = 0; y < 8; ++y) s += B[u][y] * block[y][x];
            tmp[u][x] = s;
          }
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v) {
            double s = 0;
            for (int x = 0; x < 8; ++x) s += tmp[u][x] * B[v][x];
            const double q = table[u * 8 + v];
            coef[u][v] = std::nearbyint(s / q) * q;
          }
        // block = B^T * coef * B
        for (int y = 0; y < 8; ++y)
          for (int v = 0; v < 8; ++v) {
            double s = 0;
            for (int u = 0; u < 8; ++u) s += B[u][y] * coef[u][v];
            tmp[y][v] = s;
          }
        for (int y = 0; y < 8 && by + y < h; ++y)
          for (int x = 0; x < 8 && bx + x < w; ++x) {
            double s = 0;
            for (int v = 0; v < 8; ++v) s += tmp[y][v] * B[v][x];
            out.at(by + y, bx + x, c) = std::clamp((s + 128.0) / 255.0, 0.0, 1.0);
          }
      }
  return out;
}

// ---------------------------------------------------------------------------
// Blur and scale

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0)) throw Error(Errc::InvalidArgument, "sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (double& v : k) v /= sum;
  return k;
}

namespace {

// Half-sample symmetric extension, periodic with period 2n.
inline int reflect(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace

Image gaussian_blur(const Image& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int h = img.height(), w = img.width(), ch = img.channels();
  Image tmp(h, w, ch), out(h, w, ch);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int z = 0; z < ch; ++z) {
        double s = 0.0;
        for (int t = -radius; t <= radius; ++t) s += k[t + radius] * img.at(r, reflect(c + t, w), z);
        tmp.at(r, c, z) = s;
      }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int z = 0; z < ch; ++z) {
        double s = 0.0;
        for (int t = -radius; t <= radius; ++t) s += k[t + radius] * tmp.at(reflect(r + t, h), c, z);
        out.at(r, c, z) = s;
      }
  return out;
}

Image random_scale(const Image& img, double factor) {
  if (!(factor > 0)) throw Error(Errc::DegenerateOutput, "scale factor must be positive");
  const long h = std::lround(img.height() * factor);
  const long w = std::lround(img.width() * factor);
  if (h < 1 || w < 1) throw Error(Errc::DegenerateOutput, "scaled image would be empty");
  return resize(img, static_cast<int>(h), static_cast<int>(w), ResizeFilter::Bilinear);
}

// ---------------------------------------------------------------------------
// Random Patch Swap and token labels

PatchSwapResult random_patch_swap(const Image& real_img, const Image& fake_img, double ratio, int grid,
                                  std::uint64_t rng_seed) {
  if (real_img.height() != fake_img.height() || real_img.width() != fake_img.width() ||
      real_img.channels() != fake_img.channels())
    throw Error(Errc::DimensionMismatch, "patch swap needs equally sized images");
  if (grid < 1) throw Error(Errc::InvalidArgument, "grid must be positive");
  const int h = real_img.height(), w = real_img.width();
  const int cells = grid * grid;
  const int n_swap = std::clamp(static_cast<int>(std::floor(std::clamp(ratio, 0.0, 1.0) * cells + 1e-9)), 0, cells);

  std::vector<int> order(cells);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(rng_seed);
  // Partial Fisher-Yates: the first n_swap entries are a uniform subset.
  for (int i = 0; i < n_swap; ++i) {
    const int j = std::uniform_int_distribution<int>(i, cells - 1)(rng);
    std::swap(order[i], order[j]);
  }

  PatchSwapResult res{real_img, PixelMask(h, w, 0), n_swap};
  const int ch_h = (h + grid - 1) / grid, ch_w = (w + grid - 1) / grid;
  for (int s = 0; s < n_swap; ++s) {
    const int gi = order[s] / grid, gj = order[s] % grid;
    const int r0 = gi * ch_h, r1 = std::min(h, r0 + ch_h);
    const int c0 = gj * ch_w, c1 = std::min(w, c0 + ch_w);
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) {
        res.mask.at(r, c) = 1;
        for (int z = 0; z < real_img.channels(); ++z) res.composite.at(r, c, z) = fake_img.at(r, c, z);
      }
  }
  return res;
}

TokenLabelGrid token_labels(const PixelMask& mask, int patch_size) {
  if (patch_size < 1 || mask.height % patch_size || mask.width % patch_size)
    throw Error(Errc::IndivisibleDimensions, "mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                                                 " is not divisible by patch " + std::to_string(patch_size));
  TokenLabelGrid g{mask.height / patch_size, mask.width / patch_size, {}};
  g.values.assign(static_cast<std::size_t>(g.rows) * g.cols, 0.0);
  const double area = static_cast<double>(patch_size) * patch_size;
  for (int i = 0; i < g.rows; ++i)
    for (int j = 0; j < g.cols; ++j) {
      long n = 0;
      for (int r = 0; r < patch_size; ++r)
        for (int c = 0; c < patch_size; ++c) n += mask.at(i * patch_size + r, j * patch_size + c);
      g.values[static_cast<std::size_t>(i) * g.cols + j] = static_cast<double>(n) / area;
    }
  return g;
}

TokenLabelGrid area_token_labels(const PixelMask& mask, int grid_rows, int grid_cols) {
  TokenLabelGrid g{grid_rows, grid_cols, std::vector<double>(static_cast<std::size_t>(grid_rows) * grid_cols, 0.0)};
  const double ph = static_cast<double>(mask.height) / grid_rows;
  const double pw = static_cast<double>(mask.width) / grid_cols;
  auto overlap = [](double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); };
  for (int i = 0; i < grid_rows; ++i) {
    const double y0 = i * ph, y1 = (i + 1) * ph;
    for (int j = 0; j < grid_cols; ++j) {
      const double x0 = j * pw, x1 = (j + 1) * pw;
      double acc = 0.0;
      for (int r = static_cast<int>(std::floor(y0)); r < std::min(mask.height, static_cast<int>(std::ceil(y1))); ++r) {
        const double wy = overlap(r, r + 1, y0, y1);
        for (int c = static_cast<int>(std::floor(x0)); c < std::min(mask.width, static_cast<int>(std::ceil(x1))); ++c)
          if (mask.at(r, c)) acc += wy * overlap(c, c + 1, x0, x1);
      }
      g.values[static_cast<std::size_t>(i) * grid_cols + j] = std::clamp(acc / (ph * pw), 0.0, 1.0);
    }
  }
  return g;
}

TokenLabelGrid uniform_token_labels(int rows, int cols, double value) {
  return TokenLabelGrid{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, value)};
}

PixelMask crop_mask(const PixelMask& mask, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || top + h > mask.height || left + w > mask.width)
    throw Error(Errc::OutOfBounds, "mask crop out of bounds");
  PixelMask out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out.at(r, c) = mask.at(top + r, left + c);
  return out;
}

PixelMask resize_mask(const PixelMask& mask, int out_h, int out_w) {
  if (out_h == mask.height && out_w == mask.width) return mask;
  PixelMask out(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    const int sr = std::min(mask.height - 1, static_cast<int>((r + 0.5) * mask.height / out_h));
    for (int c = 0; c < out_w; ++c) {
      const int sc = std::min(mask.width - 1, static_cast<int>((c + 0.5) * mask.width / out_w));
      out.at(r, c) = mask.at(sr, sc);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Policy

AugmentationGates draw_gates(std::mt19937_64& rng, double p_scale, double p_blur, double p_rps, double p_jpeg) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AugmentationGates g;
  g.scale = u(rng) < p_scale;
  g.blur = u(rng) < p_blur;
  g.rps = u(rng) < p_rps;
  g.jpeg = u(rng) < p_jpeg;
  return g;
}

AugmentationGates draw_gates(std::mt19937_64& rng, double p) { return draw_gates(rng, p, p, p, p); }

AugmentedSample apply_policy(const Image& primary, const std::optional<Image>& partner, int label,
                             const AugmentationPolicy& policy) {
  policy.validate();
  std::mt19937_64 rng(policy.seed);
  const double p = policy.p_each;
  const AugmentationGates gates = draw_gates(rng, policy.p_scale.value_or(p), policy.p_blur.value_or(p),
                                             policy.p_rps.value_or(p), policy.p_jpeg.value_or(p));
  // Parameters are always drawn so the stream layout does not depend on gates.
  const double factor = std::uniform_real_distribution<double>(policy.scale_min, policy.scale_max)(rng);
  const double sigma = std::uniform_real_distribution<double>(policy.blur_sigma_min, policy.blur_sigma_max)(rng);
  const double ratio = std::uniform_real_distribution<double>(policy.rps_ratio_min, policy.rps_ratio_max)(rng);
  const std::uint64_t swap_seed = rng();
  const int qf = std::uniform_int_distribution<int>(policy.qf_min, policy.qf_max)(rng);

  AugmentedSample out{primary, std::nullopt, std::nullopt, label, {}};
  std::optional<Image> other;
  if (partner) {
    other = (partner->height() == primary.height() && partner->width() == primary.width())
                ? *partner
                : resize(*partner, primary.height(), primary.width(), ResizeFilter::Bilinear);
  }

  if (gates.scale) {
    const long h = std::lround(primary.height() * factor), w = std::lround(primary.width() * factor);
    if (h >= 1 && w >= 1) {
      out.image = random_scale(out.image, factor);
      if (other) other = random_scale(*other, factor);
      out.applied.scale = true;
    }
  }
  if (gates.blur) {
    out.image = gaussian_blur(out.image, sigma);
    if (other) other = gaussian_blur(*other, sigma);
    out.applied.blur = true;
  }
  if (gates.rps && other) {
    const Image& real_img = label == 1 ? *other : out.image;
    const Image& fake_img = label == 1 ? out.image : *other;
    auto swapped = random_patch_swap(real_img, fake_img, ratio, policy.rps_grid, swap_seed);
    if (swapped.cells_swapped > 0) {
      out.image = std::move(swapped.composite);
      out.mask = std::move(swapped.mask);
      out.label = 1;
      out.applied.rps = true;
    }
  }
  if (gates.jpeg) {
    out.image = jpeg_degrade(out.image, QualityFactor{qf});
    out.qf = QualityFactor{qf};
    out.applied.jpeg = true;
  }
  return out;
}

}  // namespace tiledet
