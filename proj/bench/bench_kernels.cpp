// Serial reference vs OpenMP kernels. With one core the two should be close;
// the interesting number is the ratio on a multi-core box.
#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <random>

#include "tiledet/spectral.hpp"
#include "tiledet/train.hpp"

using namespace tiledet;

namespace {

Mat random_mat(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(r, c);
  for (auto& x : m.v) x = n(rng);
  return m;
}

template <void (*Gemm)(const Mat&, const Mat&, Mat&)>
void BM_gemm(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0));
  const Mat a = random_mat(n, n, 1), b = random_mat(n, n, 2);
  Mat c(n, n);
  for (auto _ : st) {
    Gemm(a, b, c);
    benchmark::DoNotOptimize(c.v.data());
  }
  st.SetItemsProcessed(st.iterations() * 2LL * n * n * n);
}
BENCHMARK(BM_gemm<kernels::serial::gemm>)->Name("gemm/serial")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_gemm<kernels::omp::gemm>)->Name("gemm/omp")->Arg(64)->Arg(256)->Arg(512);

// O(n^4) textbook DFT, kept here only as the baseline for FFTW.
spectral::SpectrumGrid naive_dft2(const Image& img) {
  const int h = img.height(), w = img.width();
  spectral::SpectrumGrid out(h, w);
  for (int k1 = 0; k1 < h; ++k1)
    for (int k2 = 0; k2 < w; ++k2) {
      std::complex<double> s = 0.0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double ph = -2.0 * std::numbers::pi * (double(k1) * y / h + double(k2) * x / w);
          s += img.at(y, x) * std::polar(1.0, ph);
        }
      out.values[static_cast<std::size_t>(k1) * w + k2] = s;
    }
  return out;
}

Image noise_image(int n) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(n, n, 1);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

void BM_dft_naive(benchmark::State& st) {
  const Image img = noise_image(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(naive_dft2(img));
}
void BM_dft_fftw(benchmark::State& st) {
  const Image img = noise_image(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(spectral::dft2(img));
}
BENCHMARK(BM_dft_naive)->Arg(16)->Arg(32);
BENCHMARK(BM_dft_fftw)->Arg(16)->Arg(32)->Arg(256);

std::vector<TrainingSample> toy_batch(const ModelConfig& cfg) {
  SyntheticCorpusSpec spec;
  spec.count = 8;
  spec.size_min = 64;
  spec.size_max = 128;
  spec.seed = 4;
  const Corpus corpus = generate_corpus(spec);
  AugmentationPolicy pol;
  std::vector<TrainingSample> batch;
  for (const auto& it : corpus) batch.push_back(prepare_training_sample(it, &corpus[it.partner].image, cfg, pol, 8));
  return batch;
}

template <GradientResult (*Backward)(const std::vector<TrainingSample>&, const ModelParams&, const ModelConfig&,
                                     const LossWeights&)>
void BM_backward(benchmark::State& st) {
  const ModelConfig cfg;
  const ModelParams params = init_params(cfg, 1);
  const auto batch = toy_batch(cfg);
  for (auto _ : st) benchmark::DoNotOptimize(Backward(batch, params, cfg, LossWeights{}));
}
BENCHMARK(BM_backward<backward_full_serial>)->Name("backward/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_backward<backward_full>)->Name("backward/omp")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
