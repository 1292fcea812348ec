#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tiledet {

// H x W x C raster, row-major by (row, column, channel). Pixel values live in
// [0, 1]; the one exception is IdealLowPass resizing, whose band-limited output
// may ring slightly outside that range (see resize()).
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);
  Image(int height, int width, int channels, std::vector<double> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int row, int col, int ch = 0) noexcept {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }
  double at(int row, int col, int ch = 0) const noexcept {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * channels_ + ch];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  // Plane of a single channel as a 1-channel image.
  Image channel(int ch) const;
  Image clamped() const;
  double mean() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

enum class ResizeFilter { IdealLowPass, Bilinear };

// PPM (P6, maxval 255) for 3-channel images, PGM (P5) for 1-channel images.
// `comment`, when non-empty, is written as a "# ..." header line.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& img, const std::filesystem::path& path, const std::string& comment = {});

// 8-bit quantization used by save_image: round-half-up of v*255 after clamping.
unsigned char quantize_u8(double v) noexcept;

// IdealLowPass is exact DFT truncation (even input/output sizes, downsampling
// only) and is not clamped. Bilinear uses half-pixel-centre sampling.
Image resize(const Image& img, int out_h, int out_w, ResizeFilter filter);

Image crop(const Image& img, int top, int left, int h, int w);

// ITU-R BT.601 luma.
Image to_luma(const Image& img);

double mse(const Image& a, const Image& b);
// Peak 1.0; returns +inf for identical images.
double psnr(const Image& a, const Image& b);

}  // namespace tiledet
