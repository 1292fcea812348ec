#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tiledet/image.hpp"

namespace tiledet {

enum class FakeRecipe { LowPassNoise, CheckerSuppressed, UpsampledTexture };

FakeRecipe parse_recipe(const std::string& name);
std::string recipe_name(FakeRecipe r);

struct SyntheticCorpusSpec {
  int count = 200;  // total images, must be even
  int size_min = 64;
  int size_max = 160;
  FakeRecipe recipe = FakeRecipe::LowPassNoise;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CorpusItem {
  Image image;
  int label = 0;     // 1 = fake
  int partner = -1;  // index of the paired image of the other class, -1 if none
  long id = 0;
};

using Corpus = std::vector<CorpusItem>;

// Broadband texture: a few octaves of colour value noise plus per-pixel grain,
// quantised to the 8-bit grid.
Image real_texture(int h, int w, std::uint64_t seed);
// The recipe's high-frequency suppression of `real` (quantised likewise).
Image make_fake(const Image& real, FakeRecipe recipe);

// count/2 (real, fake) pairs; items 2i and 2i+1 are partners. Both members of
// a pair share the sampled size.
Corpus generate_corpus(const SyntheticCorpusSpec& spec);

// Writes one PPM per item plus index.csv (id,file,label,partner).
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir, const std::string& header);
Corpus load_corpus(const std::filesystem::path& dir);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept;

}  // namespace tiledet
