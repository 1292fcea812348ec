#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tiledet/augment.hpp"
#include "tiledet/corpus.hpp"
#include "tiledet/model.hpp"
#include "tiledet/tiling.hpp"

namespace tiledet {

enum class OptimizerKind { SGD, AdamW };
enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  double learning_rate = 3e-4;
  int steps = 2000;
  int batch_size = 4;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  LrSchedule schedule = LrSchedule::Constant;
  int warmup_steps = 0;
  int k_max = 16;  // training tiles per image, K ~ U[1, min(k_max, grid count)]

  void validate() const;
};

struct LossRow {
  int step = 0;
  LossBreakdown loss;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRow> trace;
};

// augment -> normalize_small -> random tiles + global resize -> token labels.
// `partner` is the paired image of the other class, if any.
TrainingSample prepare_training_sample(const CorpusItem& item, const Image* partner, const ModelConfig& cfg,
                                       const AugmentationPolicy& policy, int k_max);

double learning_rate_at(const TrainConfig& tc, int step);

using StepCallback = std::function<void(const LossRow&)>;

// Deterministic given tc.seed and policy.seed, independent of thread count.
// Throws NonFiniteLossError carrying the failing step.
TrainResult train(const Corpus& corpus, ModelParams params, const ModelConfig& cfg, const TrainConfig& tc,
                  const AugmentationPolicy& policy, const StepCallback& on_step = {});

// ---- Evaluation ----------------------------------------------------------

enum class TilingMode { FullCoverage, CenterCrop1, RandomK };
TilingMode parse_tiling_mode(const std::string& s);
std::string tiling_mode_name(TilingMode m);

struct EvalOptions {
  TilingMode mode = TilingMode::FullCoverage;
  std::uint64_t seed = 0;
  int k_max = 16;
  bool localization = true;  // token AUC on RPS composites of the pairs
  bool quality = true;       // QF regression error on JPEG copies
  int rps_grid = 14;
};

struct EvalMetrics {
  std::string mode;
  int count = 0;
  double accuracy = 0.0;
  double accuracy_real = 0.0;
  double accuracy_fake = 0.0;
  int composites = 0;
  std::optional<double> token_auc;  // absent when only one class of token is present
  std::optional<double> qfe_mae;    // in QF units
};

// Views of one image under a tiling mode: the short-side rule, the tiles and
// the global view resized to the model input.
struct PreparedViews {
  Image global;
  std::vector<Image> tiles;
  TilePlan plan;
};
PreparedViews prepare_views(const Image& img, const ModelConfig& cfg, TilingMode mode, std::uint64_t seed,
                            int k_max = 16);

// p_fake >= 0.5 counts as a fake prediction.
inline bool predicts_fake(double p_fake) noexcept { return p_fake >= 0.5; }

EvalMetrics evaluate(const Corpus& corpus, const ModelParams& params, const ModelConfig& cfg,
                     const EvalOptions& opts);

// Mann-Whitney AUC with average ranks for ties; absent if either class is empty.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

enum class Perturbation { JPEG, Blur, Scale };
Perturbation parse_perturbation(const std::string& s);
std::string perturbation_name(Perturbation p);

// JPEG always runs, even at QF 100. Blur sigma <= 0 and scale 1 are exact
// no-ops.
Image perturb(const Image& img, Perturbation kind, double level);

struct RobustnessPoint {
  double level = 0.0;
  double accuracy = 0.0;
  double accuracy_real = 0.0;
  double accuracy_fake = 0.0;
};

std::vector<RobustnessPoint> robustness_sweep(const Corpus& corpus, const ModelParams& params,
                                              const ModelConfig& cfg, Perturbation kind,
                                              const std::vector<double>& levels, TilingMode mode = TilingMode::FullCoverage);

// ---- Artifacts -------------------------------------------------------------

void write_loss_trace(const std::vector<LossRow>& trace, const std::filesystem::path& path, const std::string& header);
void write_metrics_csv(const EvalMetrics& m, const std::filesystem::path& path, const std::string& header);
void write_metrics_json(const EvalMetrics& m, const std::filesystem::path& path, std::uint64_t seed);
void write_robustness_csv(const std::vector<RobustnessPoint>& curve, Perturbation kind,
                          const std::filesystem::path& path, const std::string& header);

}  // namespace tiledet
