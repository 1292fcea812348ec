#include "tiledet/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "tiledet/error.hpp"
#include "tiledet/spectral.hpp"

namespace tiledet {

FakeRecipe parse_recipe(const std::string& name) {
  if (name == "lowpass") return FakeRecipe::LowPassNoise;
  if (name == "checker") return FakeRecipe::CheckerSuppressed;
  if (name == "upsampled") return FakeRecipe::UpsampledTexture;
  throw Error(Errc::InvalidArgument, "unknown fake recipe '" + name + "' (lowpass, checker, upsampled)");
}

std::string recipe_name(FakeRecipe r) {
  switch (r) {
    case FakeRecipe::LowPassNoise: return "lowpass";
    case FakeRecipe::CheckerSuppressed: return "checker";
    case FakeRecipe::UpsampledTexture: return "upsampled";
  }
  return "?";
}

void SyntheticCorpusSpec::validate() const {
  if (count < 2 || count % 2) throw Error(Errc::InvalidArgument, "corpus count must be a positive even number");
  if (size_min < 8 || size_max < size_min) throw Error(Errc::InvalidArgument, "bad corpus size range");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
  // splitmix64 finaliser over a combined state
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

Image quantized(Image img) {
  for (double& v : img.data()) v = quantize_u8(v) / 255.0;
  return img;
}

// Smooth value noise with lattice spacing `cell`.
std::vector<double> value_noise(int h, int w, double cell, std::mt19937_64& rng) {
  const int gh = static_cast<int>(std::ceil(h / cell)) + 2, gw = static_cast<int>(std::ceil(w / cell)) + 2;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> lattice(static_cast<std::size_t>(gh) * gw);
  for (double& v : lattice) v = u(rng);
  auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r) {
    const double y = r / cell;
    const int y0 = static_cast<int>(y);
    const double fy = fade(y - y0);
    for (int c = 0; c < w; ++c) {
      const double x = c / cell;
      const int x0 = static_cast<int>(x);
      const double fx = fade(x - x0);
      auto L = [&](int i, int j) { return lattice[static_cast<std::size_t>(i) * gw + j]; };
      const double top = L(y0, x0) * (1 - fx) + L(y0, x0 + 1) * fx;
      const double bot = L(y0 + 1, x0) * (1 - fx) + L(y0 + 1, x0 + 1) * fx;
      out[static_cast<std::size_t>(r) * w + c] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

Image ideal_lowpass_fraction(const Image& img, double fraction) {
  Image out(img.height(), img.width(), img.channels());
  const int h = img.height(), w = img.width();
  for (int ch = 0; ch < img.channels(); ++ch) {
    spectral::SpectrumGrid s = spectral::dft2(img.channel(ch));
    for (int k1 = 0; k1 < h; ++k1) {
      const int r1 = k1 <= (h - 1) / 2 ? k1 : k1 - h;
      for (int k2 = 0; k2 < w; ++k2) {
        const int r2 = k2 <= (w - 1) / 2 ? k2 : k2 - w;
        if (std::abs(r1) > fraction * h / 2.0 || std::abs(r2) > fraction * w / 2.0)
          s.values[static_cast<std::size_t>(k1) * w + k2] = 0.0;
      }
    }
    const Image plane = spectral::idft2_real(s);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) out.at(r, c, ch) = plane.at(r, c);
  }
  return out.clamped();
}

// Separable [1 4 6 4 1]/16 with edge replication; zero response at Nyquist.
Image binomial5(const Image& img) {
  static constexpr double k[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  const int h = img.height(), w = img.width(), C = img.channels();
  Image tmp(h, w, C), out(h, w, C);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < C; ++ch) {
        double s = 0.0;
        for (int t = -2; t <= 2; ++t) s += k[t + 2] * img.at(r, std::clamp(c + t, 0, w - 1), ch);
        tmp.at(r, c, ch) = s;
      }
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < C; ++ch) {
        double s = 0.0;
        for (int t = -2; t <= 2; ++t) s += k[t + 2] * tmp.at(std::clamp(r + t, 0, h - 1), c, ch);
        out.at(r, c, ch) = s;
      }
  return out;
}

}  // namespace

Image real_texture(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> grain(0.0, 1.0);

  // Two independent multi-octave fields mixed into RGB.
  std::vector<double> f[2];
  const double base = 8.0 + 24.0 * u(rng);
  for (auto& field : f) {
    field.assign(static_cast<std::size_t>(h) * w, 0.0);
    double amp = 1.0, cell = base;
    for (int o = 0; o < 4 && cell >= 1.5; ++o, amp *= 0.5, cell *= 0.5) {
      const auto n = value_noise(h, w, cell, rng);
      for (std::size_t i = 0; i < n.size(); ++i) field[i] += amp * n[i];
    }
  }
  double mean[3], mix[3][2];
  for (int c = 0; c < 3; ++c) {
    mean[c] = 0.35 + 0.3 * u(rng);
    mix[c][0] = 0.1 + 0.1 * u(rng);
    mix[c][1] = 0.1 * (u(rng) - 0.5);
  }
  const double grain_sd = 0.10 + 0.10 * u(rng);
  Image img(h, w, 3);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      for (int ch = 0; ch < 3; ++ch)
        img.at(r, c, ch) = mean[ch] + mix[ch][0] * f[0][i] + mix[ch][1] * f[1][i] + grain_sd * grain(rng);
    }
  return quantized(img.clamped());
}

Image make_fake(const Image& real, FakeRecipe recipe) {
  switch (recipe) {
    case FakeRecipe::LowPassNoise: return quantized(ideal_lowpass_fraction(real, 0.6));
    case FakeRecipe::CheckerSuppressed: return quantized(binomial5(real));
    case FakeRecipe::UpsampledTexture: {
      const Image half = resize(real, (real.height() + 1) / 2, (real.width() + 1) / 2, ResizeFilter::Bilinear);
      return quantized(resize(half, real.height(), real.width(), ResizeFilter::Bilinear).clamped());
    }
  }
  throw Error(Errc::InvalidArgument, "unknown recipe");
}

Corpus generate_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  const int pairs = spec.count / 2;
  Corpus corpus(spec.count);
  // Sizes are drawn serially so the corpus does not depend on thread count.
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> size(spec.size_min, spec.size_max);
  std::vector<std::pair<int, int>> dims(pairs);
  for (auto& d : dims) {
    d.first = size(rng);
    d.second = size(rng);
  }
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < pairs; ++i) {
    Image real = real_texture(dims[i].first, dims[i].second, mix_seed(spec.seed, static_cast<std::uint64_t>(i)));
    Image fake = make_fake(real, spec.recipe);
    corpus[2 * i] = CorpusItem{std::move(real), 0, 2 * i + 1, 2L * i};
    corpus[2 * i + 1] = CorpusItem{std::move(fake), 1, 2 * i, 2L * i + 1};
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir, const std::string& header) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
  std::ofstream idx(dir / "index.csv");
  if (!idx) throw Error(Errc::IoFailure, "cannot write " + (dir / "index.csv").string());
  if (!header.empty()) idx << "# " << header << "\n";
  idx << "id,file,label,partner\n";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.ppm", i);
    save_image(corpus[i].image, dir / name, header);
    idx << corpus[i].id << ',' << name << ',' << corpus[i].label << ',' << corpus[i].partner << '\n';
  }
  if (!idx) throw Error(Errc::IoFailure, "write failed: " + (dir / "index.csv").string());
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream idx(dir / "index.csv");
  if (!idx) throw Error(Errc::IoFailure, "cannot open " + (dir / "index.csv").string());
  Corpus corpus;
  std::string line;
  bool saw_header = false;
  while (std::getline(idx, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      saw_header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string id, file, label, partner;
    if (!std::getline(ss, id, ',') || !std::getline(ss, file, ',') || !std::getline(ss, label, ',') ||
        !std::getline(ss, partner, ','))
      throw Error(Errc::CorruptFile, "malformed index row: " + line);
    CorpusItem item;
    try {
      item.id = std::stol(id);
      item.label = std::stoi(label);
      item.partner = std::stoi(partner);
    } catch (const std::exception&) {
      throw Error(Errc::CorruptFile, "malformed index row: " + line);
    }
    item.image = load_image(dir / file);
    if (item.image.channels() != 3) throw Error(Errc::WrongChannelCount, file + " is not RGB");
    corpus.push_back(std::move(item));
  }
  for (const auto& it : corpus)
    if (it.partner >= static_cast<int>(corpus.size()) || it.partner < -1)
      throw Error(Errc::CorruptFile, "partner index out of range in index.csv");
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "no images listed in " + (dir / "index.csv").string());
  return corpus;
}

}  // namespace tiledet
