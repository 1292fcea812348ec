#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tiledet/augment.hpp"
#include "tiledet/image.hpp"
#include "tiledet/tensor.hpp"

namespace tiledet {

using Vec = std::vector<double>;

struct ModelConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 64;
  int backbone_depth = 2;
  int refiner_depth = 1;
  int aggregator_depth = 1;
  int heads = 4;
  int mlp_ratio = 4;
  bool backbone_frozen = false;

  int grid() const noexcept { return image_size / patch_size; }
  int num_patches() const noexcept { return grid() * grid(); }
  int patch_dim() const noexcept { return patch_size * patch_size * 3; }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerNormParams {
  Mat gamma;  // 1 x d
  Mat beta;   // 1 x d
};

// Pre-norm transformer encoder block: x + MHSA(LN(x)), then x + MLP(LN(x)).
struct BlockParams {
  LayerNormParams ln1;
  Mat w_qkv, b_qkv;    // d x 3d, 1 x 3d
  Mat w_proj, b_proj;  // d x d, 1 x d
  LayerNormParams ln2;
  Mat w_fc1, b_fc1;    // d x hd, 1 x hd
  Mat w_fc2, b_fc2;    // hd x d, 1 x d
};

enum class ParamGroup { Backbone, Refiner, Aggregator, Classifier, TokenHead, QualityHead };

struct ModelParams {
  // Backbone: patch embedding, CLS token, positional table, blocks.
  Mat patch_w, patch_b, cls, pos;
  std::vector<BlockParams> backbone;
  // Trainable refiner over the backbone tokens, closed by a LayerNorm.
  std::vector<BlockParams> refiner;
  LayerNormParams refiner_norm;
  // Local aggregator and its learnable output token.
  std::vector<BlockParams> aggregator;
  Mat t_out;
  // Heads.
  Mat cls_w1, cls_b1, cls_w2, cls_b2;  // 2d -> d -> 2
  Mat tfl_w, tfl_b;                    // d -> 1, shared by every view
  Mat qfe_w1, qfe_b1, qfe_w2, qfe_b2;  // d -> d -> 1

  // Same-shaped, all-zero copy (used as a gradient accumulator).
  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
  void add_scaled(const ModelParams& other, double scale);

  using Visitor = std::function<void(const std::string& name, ParamGroup group, Mat& tensor)>;
  using ConstVisitor = std::function<void(const std::string& name, ParamGroup group, const Mat& tensor)>;
  // Fixed traversal order; names are stable checkpoint keys.
  void for_each(const Visitor& f);
  void for_each(const ConstVisitor& f) const;
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Output of the backbone + refiner for one square view. Row 0 is the CLS token.
struct TokenSequence {
  Mat tokens;  // (N + 1) x d
  const Mat* backbone_identity = nullptr;  // address of the patch embedding used
  int size() const noexcept { return tokens.rows; }
  Vec cls() const { return Vec(tokens.row(0), tokens.row(0) + tokens.cols); }
};

TokenSequence vit_forward(const Image& img, const ModelParams& params, const ModelConfig& cfg);

// f_detail: position 0 of the aggregator run over [t_out, cls_1..cls_K],
// no positional encodings.
Vec local_aggregate(const std::vector<Vec>& cls_tokens, const ModelParams& params, const ModelConfig& cfg);

struct ClassOutput {
  double logits[2] = {0.0, 0.0};
  double probs[2] = {0.5, 0.5};  // [real, fake]
  double p_fake() const noexcept { return probs[1]; }
};

ClassOutput classify(const Vec& f_global, const Vec& f_detail, const ModelParams& params);

// Per-patch forgery probabilities for every non-CLS token.
Vec tfl_head(const TokenSequence& tokens, const ModelParams& params);

// Predicted QF / 100 in (0, 1).
double qfe_head(const Vec& f_detail, const ModelParams& params);

struct FullOutput {
  ClassOutput cls;
  std::vector<Vec> tile_token_probs;  // one per tile, in input order
  Vec global_token_probs;
  double q_pred = 0.0;
  Vec f_detail;
  Vec f_global;
  Vec f_final() const;
  std::vector<const Mat*> backbone_identities;  // global first, then tiles
};

FullOutput forward_full(const Image& global_img, const std::vector<Image>& tiles, const ModelParams& params,
                        const ModelConfig& cfg);

// One training example after preprocessing.
struct TrainingSample {
  Image global;
  std::vector<Image> tiles;
  int label = 0;  // 1 = fake
  std::vector<TokenLabelGrid> tile_labels;
  TokenLabelGrid global_labels;
  double q_true = 1.0;  // QF / 100, 1.0 when never compressed
  long id = 0;
};

struct LossWeights {
  double cls = 1.0;
  double tfl = 1.0;
  double qfe = 1.0;
};

struct LossBreakdown {
  double cls = 0.0;
  double tfl = 0.0;
  double qfe = 0.0;
  double all = 0.0;
};

// Batch objective: mean cross-entropy, token BCE averaged over every patch
// token in the batch, mean squared QF error, combined with `weights`.
LossBreakdown batch_loss(const std::vector<TrainingSample>& batch, const ModelParams& params, const ModelConfig& cfg,
                         const LossWeights& weights);

struct GradientResult {
  LossBreakdown loss;
  ModelParams grads;
};

// Exact gradients of batch_loss. Frozen backbone tensors get zero gradient.
// Samples run in parallel; per-sample gradients are summed in batch order.
// Throws NonFiniteLoss when the objective is not finite.
GradientResult backward_full(const std::vector<TrainingSample>& batch, const ModelParams& params,
                             const ModelConfig& cfg, const LossWeights& weights);

// Serial reference for backward_full (identical arithmetic, one thread).
GradientResult backward_full_serial(const std::vector<TrainingSample>& batch, const ModelParams& params,
                                    const ModelConfig& cfg, const LossWeights& weights);

}  // namespace tiledet
