#include "tiledet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <string>

#include "tiledet/error.hpp"

namespace tiledet {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height <= 0 || width <= 0) throw Error(Errc::ZeroDimension, "image dimensions must be positive");
  if (channels != 1 && channels != 3) throw Error(Errc::WrongChannelCount, "channels must be 1 or 3");
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<double> data)
    : Image(height, width, channels) {
  if (data.size() != data_.size()) throw Error(Errc::InvalidDimensions, "data length does not match dimensions");
  data_ = std::move(data);
}

Image Image::channel(int ch) const {
  if (ch < 0 || ch >= channels_) throw Error(Errc::WrongChannelCount, "channel index out of range");
  Image out(height_, width_, 1);
  for (int r = 0; r < height_; ++r)
    for (int c = 0; c < width_; ++c) out.at(r, c) = at(r, c, ch);
  return out;
}

Image Image::clamped() const {
  Image out = *this;
  for (double& v : out.data_) v = std::clamp(v, 0.0, 1.0);
  return out;
}

double Image::mean() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return data_.empty() ? 0.0 : s / static_cast<double>(data_.size());
}

// ---------------------------------------------------------------------------
// PNM I/O

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
bool next_token(std::istream& in, std::string& token) {
  token.clear();
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      ch = in.get();
    } else {
      break;
    }
  }
  while (ch != EOF && !std::isspace(ch) && ch != '#') {
    token.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  if (ch == '#') in.unget();
  return !token.empty();
}

int parse_dim(const std::string& token) {
  if (token.empty() || !std::all_of(token.begin(), token.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw Error(Errc::CorruptFile, "malformed header field '" + token + "'");
  if (token.size() > 9) throw Error(Errc::CorruptFile, "header value too large");
  return std::stoi(token);
}

}  // namespace

unsigned char quantize_u8(double v) noexcept {
  const double x = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<unsigned char>(std::min(255.0, std::floor(x + 0.5)));
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());

  std::string magic;
  if (!next_token(in, magic)) throw Error(Errc::CorruptFile, "empty file " + path.string());
  int channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw Error(Errc::UnsupportedFormat, "expected binary PPM/PGM, got '" + magic + "'");

  std::string tw, th, tm;
  if (!next_token(in, tw) || !next_token(in, th) || !next_token(in, tm))
    throw Error(Errc::CorruptFile, "truncated header in " + path.string());
  const int width = parse_dim(tw);
  const int height = parse_dim(th);
  const int maxval = parse_dim(tm);
  if (width == 0 || height == 0) throw Error(Errc::ZeroDimension, path.string());
  if (maxval != 255) throw Error(Errc::UnsupportedFormat, "only maxval 255 is supported");

  const std::size_t n = static_cast<std::size_t>(width) * height * channels;
  std::vector<unsigned char> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw Error(Errc::CorruptFile, "payload shorter than header declares in " + path.string());

  std::vector<double> data(n);
  std::transform(bytes.begin(), bytes.end(), data.begin(), [](unsigned char b) { return b / 255.0; });
  return Image(height, width, channels, std::move(data));
}

void save_image(const Image& img, const std::filesystem::path& path, const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out << (img.channels() == 3 ? "P6\n" : "P5\n");
  if (!comment.empty()) out << "# " << comment << "\n";
  out << img.width() << " " << img.height() << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  std::transform(img.data().begin(), img.data().end(), bytes.begin(), quantize_u8);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoFailure, "short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Resizing

namespace {

// Periodic interpolation kernel of DFT truncation from n to m samples
// (m < n, both even): sum of e^{j 2 pi r t} over |r| < m/2, which is the
// odd-length Dirichlet kernel sin((m-1) pi t) / sin(pi t).
std::vector<double> truncation_kernel(int m, int n) {
  std::vector<double> k(static_cast<std::size_t>(m) * n);
  const int taps = m - 1;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      // t in cycles; reduce exactly with integer arithmetic: t = (i*n - j*m) / (m*n).
      const long num = static_cast<long>(i) * n - static_cast<long>(j) * m;
      const long den = static_cast<long>(m) * n;
      const long red = ((num % den) + den) % den;
      double value;
      if (red == 0) {
        value = taps;
      } else {
        const double t = static_cast<double>(red) / static_cast<double>(den);
        value = std::sin(taps * std::numbers::pi * t) / std::sin(std::numbers::pi * t);
      }
      k[static_cast<std::size_t>(i) * n + j] = value / n;
    }
  }
  return k;
}

Image ideal_lowpass(const Image& img, int out_h, int out_w) {
  const int h = img.height(), w = img.width(), ch = img.channels();
  if (out_h > h || out_w > w || h % 2 || w % 2 || out_h % 2 || out_w % 2)
    throw Error(Errc::IdealLowPassUnsupported,
                "ideal low-pass needs even sizes and downsampling only (" + std::to_string(h) + "x" +
                    std::to_string(w) + " -> " + std::to_string(out_h) + "x" + std::to_string(out_w) + ")");

  // Columns first (w -> out_w), then rows (h -> out_h). An axis that keeps its
  // size is passed through untouched.
  Image tmp = img;
  if (out_w != w) {
    const auto k = truncation_kernel(out_w, w);
    Image next(h, out_w, ch);
    for (int r = 0; r < h; ++r)
      for (int m = 0; m < out_w; ++m)
        for (int c = 0; c < ch; ++c) {
          double s = 0.0;
          const double* krow = &k[static_cast<std::size_t>(m) * w];
          for (int n = 0; n < w; ++n) s += krow[n] * tmp.at(r, n, c);
          next.at(r, m, c) = s;
        }
    tmp = std::move(next);
  }
  if (out_h != h) {
    const auto k = truncation_kernel(out_h, h);
    Image next(out_h, out_w, ch);
    for (int m = 0; m < out_h; ++m) {
      const double* krow = &k[static_cast<std::size_t>(m) * h];
      for (int n = 0; n < h; ++n) {
        const double kv = krow[n];
        for (int col = 0; col < out_w; ++col)
          for (int c = 0; c < ch; ++c) next.at(m, col, c) += kv * tmp.at(n, col, c);
      }
    }
    tmp = std::move(next);
  }
  return tmp;
}

Image bilinear(const Image& img, int out_h, int out_w) {
  const int h = img.height(), w = img.width(), ch = img.channels();
  Image out(out_h, out_w, ch);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int r = 0; r < out_h; ++r) {
    const double fy = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ay = fy - y0;
    for (int c = 0; c < out_w; ++c) {
      const double fx = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double ax = fx - x0;
      for (int k = 0; k < ch; ++k) {
        const double top = img.at(y0, x0, k) * (1 - ax) + img.at(y0, x1, k) * ax;
        const double bot = img.at(y1, x0, k) * (1 - ax) + img.at(y1, x1, k) * ax;
        out.at(r, c, k) = top * (1 - ay) + bot * ay;
      }
    }
  }
  return out;
}

}  // namespace

Image resize(const Image& img, int out_h, int out_w, ResizeFilter filter) {
  if (out_h < 1 || out_w < 1) throw Error(Errc::InvalidDimensions, "output size must be positive");
  if (out_h == img.height() && out_w == img.width()) return img;
  return filter == ResizeFilter::IdealLowPass ? ideal_lowpass(img, out_h, out_w) : bilinear(img, out_h, out_w);
}

Image crop(const Image& img, int top, int left, int h, int w) {
  if (h < 1 || w < 1 || top < 0 || left < 0 || top + h > img.height() || left + w > img.width())
    throw Error(Errc::OutOfBounds, "crop window (" + std::to_string(top) + "," + std::to_string(left) + ") " +
                                       std::to_string(h) + "x" + std::to_string(w) + " exceeds " +
                                       std::to_string(img.height()) + "x" + std::to_string(img.width()));
  Image out(h, w, img.channels());
  const std::size_t row_len = static_cast<std::size_t>(w) * img.channels();
  for (int r = 0; r < h; ++r) {
    const double* src = img.data().data() + (static_cast<std::size_t>(top + r) * img.width() + left) * img.channels();
    std::copy(src, src + row_len, out.data().data() + r * row_len);
  }
  return out;
}

Image to_luma(const Image& img) {
  if (img.channels() != 3) throw Error(Errc::WrongChannelCount, "to_luma expects 3 channels");
  Image out(img.height(), img.width(), 1);
  for (int r = 0; r < img.height(); ++r)
    for (int c = 0; c < img.width(); ++c)
      out.at(r, c) = 0.299 * img.at(r, c, 0) + 0.587 * img.at(r, c, 1) + 0.114 * img.at(r, c, 2);
  return out;
}

double mse(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels())
    throw Error(Errc::DimensionMismatch, "mse of differently sized images");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

double psnr(const Image& a, const Image& b) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

}  // namespace tiledet
