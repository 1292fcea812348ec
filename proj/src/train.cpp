#include "tiledet/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <numeric>
#include <random>

#include "tiledet/error.hpp"

namespace tiledet {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || steps < 0 || batch_size < 1 || weight_decay < 0.0 || warmup_steps < 0 || k_max < 1)
    throw Error(Errc::InvalidArgument, "invalid training configuration");
  if (loss_weights.cls < 0 || loss_weights.tfl < 0 || loss_weights.qfe < 0)
    throw Error(Errc::InvalidArgument, "loss weights must be non-negative");
}

// ---------------------------------------------------------------------------
// Sample preparation

TrainingSample prepare_training_sample(const CorpusItem& item, const Image* partner, const ModelConfig& cfg,
                                       const AugmentationPolicy& policy, int k_max) {
  const int P = cfg.image_size, g = cfg.grid();
  std::optional<Image> other;
  if (partner) other = *partner;
  AugmentedSample aug = apply_policy(item.image, other, item.label, policy);

  Image img = normalize_small(aug.image, P);
  std::optional<PixelMask> mask;
  if (aug.mask) {
    mask = (img.height() == aug.mask->height && img.width() == aug.mask->width)
               ? *aug.mask
               : resize_mask(*aug.mask, img.height(), img.width());
  }

  TrainingSample s;
  s.label = aug.label;
  s.q_true = aug.qf ? aug.qf->qf / 100.0 : 1.0;
  s.id = item.id;
  const TilePlan plan = sample_training_tiles(img.height(), img.width(), P, {1, k_max, mix_seed(policy.seed, 0x7111e5)});
  s.tiles = extract_tiles(img, plan);
  for (const TileOrigin& o : plan.origins)
    s.tile_labels.push_back(mask ? token_labels(crop_mask(*mask, o.top, o.left, P, P), cfg.patch_size)
                                 : uniform_token_labels(g, g, s.label));
  s.global = resize(img, P, P, ResizeFilter::Bilinear);
  s.global_labels = mask ? area_token_labels(*mask, g, g) : uniform_token_labels(g, g, s.label);
  return s;
}

// ---------------------------------------------------------------------------
// Optimisation

double learning_rate_at(const TrainConfig& tc, int step) {
  double lr = tc.learning_rate;
  if (tc.warmup_steps > 0 && step < tc.warmup_steps) lr *= (step + 1.0) / tc.warmup_steps;
  if (tc.schedule == LrSchedule::Cosine && tc.steps > tc.warmup_steps) {
    const double t = std::clamp(static_cast<double>(step - tc.warmup_steps) / (tc.steps - tc.warmup_steps), 0.0, 1.0);
    lr *= 0.05 + 0.95 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
  return lr;
}

namespace {

bool decays(const std::string& name) { return name.ends_with(".weight"); }

struct Optimizer {
  OptimizerKind kind;
  double wd;
  bool frozen_backbone;
  ModelParams m, v;
  long t = 0;

  Optimizer(const TrainConfig& tc, const ModelParams& p, bool frozen)
      : kind(tc.optimizer), wd(tc.weight_decay), frozen_backbone(frozen) {
    if (kind == OptimizerKind::AdamW) {
      m = p.zeros_like();
      v = p.zeros_like();
    }
  }

  void step(ModelParams& params, const ModelParams& grads, double lr) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    std::vector<const Mat*> gs;
    grads.for_each(ModelParams::ConstVisitor([&](const std::string&, ParamGroup, const Mat& g) { gs.push_back(&g); }));
    std::vector<Mat*> ms, vs;
    if (kind == OptimizerKind::AdamW) {
      m.for_each(ModelParams::Visitor([&](const std::string&, ParamGroup, Mat& x) { ms.push_back(&x); }));
      v.for_each(ModelParams::Visitor([&](const std::string&, ParamGroup, Mat& x) { vs.push_back(&x); }));
    }
    std::size_t i = 0;
    params.for_each(ModelParams::Visitor([&](const std::string& name, ParamGroup group, Mat& p) {
      const std::size_t k = i++;
      if (frozen_backbone && group == ParamGroup::Backbone) return;
      const double decay = decays(name) ? wd : 0.0;
      const Mat& g = *gs[k];
      if (kind == OptimizerKind::SGD) {
        for (std::size_t j = 0; j < p.size(); ++j) p.v[j] -= lr * (g.v[j] + decay * p.v[j]);
        return;
      }
      Mat& mm = *ms[k];
      Mat& vv = *vs[k];
      for (std::size_t j = 0; j < p.size(); ++j) {
        mm.v[j] = b1 * mm.v[j] + (1 - b1) * g.v[j];
        vv.v[j] = b2 * vv.v[j] + (1 - b2) * g.v[j] * g.v[j];
        p.v[j] -= lr * ((mm.v[j] / c1) / (std::sqrt(vv.v[j] / c2) + eps) + decay * p.v[j]);
      }
    }));
  }
};

bool all_finite(const ModelParams& p) {
  bool ok = true;
  p.for_each(ModelParams::ConstVisitor([&](const std::string&, ParamGroup, const Mat& m) {
    for (double x : m.v) ok = ok && std::isfinite(x);
  }));
  return ok;
}

}  // namespace

TrainResult train(const Corpus& corpus, ModelParams params, const ModelConfig& cfg, const TrainConfig& tc,
                  const AugmentationPolicy& policy, const StepCallback& on_step) {
  cfg.validate();
  tc.validate();
  policy.validate();
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "training corpus is empty");

  TrainResult res;
  Optimizer opt(tc, params, cfg.backbone_frozen);
  std::mt19937_64 rng(tc.seed);
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  const int B = tc.batch_size;

  for (int step = 0; step < tc.steps; ++step) {
    std::vector<std::size_t> idx(B);
    for (auto& i : idx) i = pick(rng);
    std::vector<TrainingSample> batch(B);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::num_threads())
    for (int b = 0; b < B; ++b) {
      const CorpusItem& item = corpus[idx[b]];
      const Image* partner = nullptr;
      if (item.partner >= 0) {
        partner = &corpus[item.partner].image;
      } else {
        // unpaired: first image of the other class in this batch
        for (std::size_t j : idx)
          if (corpus[j].label != item.label) {
            partner = &corpus[j].image;
            break;
          }
      }
      AugmentationPolicy pol = policy;
      pol.seed = mix_seed(policy.seed, static_cast<std::uint64_t>(step) * B + b);
      batch[b] = prepare_training_sample(item, partner, cfg, pol, tc.k_max);
    }

    GradientResult g;
    try {
      g = backward_full(batch, params, cfg, tc.loss_weights);
    } catch (const Error& e) {
      if (e.code() != Errc::NonFiniteLoss) throw;
      throw NonFiniteLossError(step, e.what());
    }
    if (!all_finite(g.grads)) throw NonFiniteLossError(step, "non-finite gradient");

    res.trace.push_back({step, g.loss});
    if (on_step) on_step(res.trace.back());
    opt.step(params, g.grads, learning_rate_at(tc, step));
  }
  res.params = std::move(params);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

TilingMode parse_tiling_mode(const std::string& s) {
  if (s == "full") return TilingMode::FullCoverage;
  if (s == "center1") return TilingMode::CenterCrop1;
  if (s == "randomk") return TilingMode::RandomK;
  throw Error(Errc::InvalidArgument, "unknown tiling mode '" + s + "' (full, center1, randomk)");
}

std::string tiling_mode_name(TilingMode m) {
  switch (m) {
    case TilingMode::FullCoverage: return "full";
    case TilingMode::CenterCrop1: return "center1";
    case TilingMode::RandomK: return "randomk";
  }
  return "?";
}

PreparedViews prepare_views(const Image& img, const ModelConfig& cfg, TilingMode mode, std::uint64_t seed, int k_max) {
  const int P = cfg.image_size;
  const Image norm = normalize_small(img, P);
  PreparedViews v;
  switch (mode) {
    case TilingMode::FullCoverage: v.plan = full_coverage_plan(norm.height(), norm.width(), P); break;
    case TilingMode::CenterCrop1: v.plan = center_crop_plan(norm.height(), norm.width(), P); break;
    case TilingMode::RandomK: v.plan = sample_training_tiles(norm.height(), norm.width(), P, {1, k_max, seed}); break;
  }
  v.tiles = extract_tiles(norm, v.plan);
  v.global = resize(norm, P, P, ResizeFilter::Bilinear);
  return v;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(Errc::ShapeMismatch, "scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = (i + 1 + j) / 2.0;  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) {
        rank_sum += avg;
        ++pos;
      }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double np = static_cast<double>(pos);
  return (rank_sum - np * (np + 1) / 2.0) / (np * static_cast<double>(neg));
}

namespace {

struct ClassTally {
  int real = 0, fake = 0, real_ok = 0, fake_ok = 0;
};

ClassTally classify_all(const Corpus& corpus, const ModelParams& params, const ModelConfig& cfg, TilingMode mode,
                        std::uint64_t seed, int k_max, const std::function<Image(std::size_t)>& view_of) {
  const long n = static_cast<long>(corpus.size());
  std::vector<char> ok(n);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::num_threads())
  for (long i = 0; i < n; ++i) {
    const PreparedViews v = prepare_views(view_of(i), cfg, mode, mix_seed(seed, i), k_max);
    const FullOutput out = forward_full(v.global, v.tiles, params, cfg);
    ok[i] = predicts_fake(out.cls.p_fake()) == (corpus[i].label == 1);
  }
  ClassTally t;
  for (long i = 0; i < n; ++i) {
    if (corpus[i].label == 1) {
      ++t.fake;
      t.fake_ok += ok[i];
    } else {
      ++t.real;
      t.real_ok += ok[i];
    }
  }
  return t;
}

double ratio(int a, int b) { return b ? static_cast<double>(a) / b : 0.0; }

}  // namespace

EvalMetrics evaluate(const Corpus& corpus, const ModelParams& params, const ModelConfig& cfg, const EvalOptions& opts) {
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "evaluation corpus is empty");
  cfg.validate();
  EvalMetrics m;
  m.mode = tiling_mode_name(opts.mode);
  m.count = static_cast<int>(corpus.size());
  const ClassTally t = classify_all(corpus, params, cfg, opts.mode, opts.seed, opts.k_max,
                                    [&](std::size_t i) -> Image { return corpus[i].image; });
  m.accuracy = ratio(t.real_ok + t.fake_ok, t.real + t.fake);
  m.accuracy_real = ratio(t.real_ok, t.real);
  m.accuracy_fake = ratio(t.fake_ok, t.fake);

  if (opts.localization) {
    std::vector<long> reals;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      if (corpus[i].label == 0 && corpus[i].partner >= 0 && corpus[corpus[i].partner].label == 1)
        reals.push_back(static_cast<long>(i));
    const long n = static_cast<long>(reals.size());
    std::vector<std::vector<double>> scores(n);
    std::vector<std::vector<int>> labels(n);
    const int P = cfg.image_size;
#pragma omp parallel for schedule(dynamic) num_threads(kernels::num_threads())
    for (long j = 0; j < n; ++j) {
      const Image& real = corpus[reals[j]].image;
      Image fake = corpus[corpus[reals[j]].partner].image;
      if (fake.height() != real.height() || fake.width() != real.width())
        fake = resize(fake, real.height(), real.width(), ResizeFilter::Bilinear);
      std::mt19937_64 rng(mix_seed(opts.seed, 0x10c0000 + j));
      const double r = std::uniform_real_distribution<double>(0.2, 0.98)(rng);
      const PatchSwapResult sw = random_patch_swap(real, fake, r, opts.rps_grid, rng());
      const Image norm = normalize_small(sw.composite, P);
      const PixelMask mask = (norm.height() == sw.mask.height && norm.width() == sw.mask.width)
                                 ? sw.mask
                                 : resize_mask(sw.mask, norm.height(), norm.width());
      const PreparedViews v = prepare_views(norm, cfg, opts.mode, mix_seed(opts.seed, j), opts.k_max);
      const FullOutput out = forward_full(v.global, v.tiles, params, cfg);
      for (std::size_t k = 0; k < v.plan.origins.size(); ++k) {
        const TileOrigin o = v.plan.origins[k];
        const TokenLabelGrid lab = token_labels(crop_mask(mask, o.top, o.left, P, P), cfg.patch_size);
        for (std::size_t q = 0; q < lab.values.size(); ++q) {
          scores[j].push_back(out.tile_token_probs[k][q]);
          labels[j].push_back(lab.values[q] >= 0.5 ? 1 : 0);
        }
      }
    }
    std::vector<double> all_s;
    std::vector<int> all_l;
    for (long j = 0; j < n; ++j) {
      all_s.insert(all_s.end(), scores[j].begin(), scores[j].end());
      all_l.insert(all_l.end(), labels[j].begin(), labels[j].end());
    }
    m.composites = static_cast<int>(n);
    m.token_auc = roc_auc(all_s, all_l);
  }

  if (opts.quality) {
    const long n = static_cast<long>(corpus.size());
    std::vector<double> err(n);
#pragma omp parallel for schedule(dynamic) num_threads(kernels::num_threads())
    for (long i = 0; i < n; ++i) {
      std::mt19937_64 rng(mix_seed(opts.seed, 0x2000000 + i));
      const int qf = std::uniform_int_distribution<int>(60, 100)(rng);
      const Image img = jpeg_degrade(corpus[i].image, QualityFactor{qf});
      const PreparedViews v = prepare_views(img, cfg, opts.mode, mix_seed(opts.seed, i), opts.k_max);
      const FullOutput out = forward_full(v.global, v.tiles, params, cfg);
      err[i] = std::abs(100.0 * out.q_pred - qf);
    }
    m.qfe_mae = std::accumulate(err.begin(), err.end(), 0.0) / static_cast<double>(n);
  }
  return m;
}

Perturbation parse_perturbation(const std::string& s) {
  if (s == "jpeg") return Perturbation::JPEG;
  if (s == "blur") return Perturbation::Blur;
  if (s == "scale") return Perturbation::Scale;
  throw Error(Errc::InvalidArgument, "unknown perturbation '" + s + "' (jpeg, blur, scale)");
}

std::string perturbation_name(Perturbation p) {
  switch (p) {
    case Perturbation::JPEG: return "jpeg";
    case Perturbation::Blur: return "blur";
    case Perturbation::Scale: return "scale";
  }
  return "?";
}

Image perturb(const Image& img, Perturbation kind, double level) {
  switch (kind) {
    case Perturbation::JPEG: {
      const int qf = static_cast<int>(std::lround(level));
      if (qf < 1 || qf > 100) throw Error(Errc::InvalidArgument, "JPEG level must be a QF in [1, 100]");
      return jpeg_degrade(img, QualityFactor{qf});
    }
    case Perturbation::Blur: return level <= 0.0 ? img : gaussian_blur(img, level);
    case Perturbation::Scale:
      if (!(level > 0.0)) throw Error(Errc::InvalidArgument, "scale level must be positive");
      return level == 1.0 ? img : random_scale(img, level);
  }
  return img;
}

std::vector<RobustnessPoint> robustness_sweep(const Corpus& corpus, const ModelParams& params, const ModelConfig& cfg,
                                              Perturbation kind, const std::vector<double>& levels, TilingMode mode) {
  if (corpus.empty()) throw Error(Errc::EmptyCorpus, "evaluation corpus is empty");
  std::vector<RobustnessPoint> curve;
  for (double level : levels) {
    const ClassTally t = classify_all(corpus, params, cfg, mode, 0, 16,
                                      [&](std::size_t i) { return perturb(corpus[i].image, kind, level); });
    curve.push_back({level, ratio(t.real_ok + t.fake_ok, t.real + t.fake), ratio(t.real_ok, t.real),
                     ratio(t.fake_ok, t.fake)});
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw Error(Errc::IoFailure, "cannot write " + path.string());
  return f;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

}  // namespace

void write_loss_trace(const std::vector<LossRow>& trace, const std::filesystem::path& path, const std::string& header) {
  auto f = open_out(path);
  if (!header.empty()) f << "# " << header << '\n';
  f << "step,L_cls,L_tfl,L_qfe,L_all\n";
  for (const auto& r : trace)
    f << r.step << ',' << num(r.loss.cls) << ',' << num(r.loss.tfl) << ',' << num(r.loss.qfe) << ',' << num(r.loss.all)
      << '\n';
  if (!f) throw Error(Errc::IoFailure, "write failed: " + path.string());
}

void write_metrics_csv(const EvalMetrics& m, const std::filesystem::path& path, const std::string& header) {
  auto f = open_out(path);
  if (!header.empty()) f << "# " << header << '\n';
  f << "mode,count,accuracy,accuracy_real,accuracy_fake,composites,token_auc,qfe_mae\n";
  f << m.mode << ',' << m.count << ',' << num(m.accuracy) << ',' << num(m.accuracy_real) << ','
    << num(m.accuracy_fake) << ',' << m.composites << ',' << opt_num(m.token_auc) << ',' << opt_num(m.qfe_mae)
    << '\n';
  if (!f) throw Error(Errc::IoFailure, "write failed: " + path.string());
}

void write_metrics_json(const EvalMetrics& m, const std::filesystem::path& path, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["mode"] = m.mode;
  j["count"] = m.count;
  j["accuracy"] = m.accuracy;
  j["accuracy_real"] = m.accuracy_real;
  j["accuracy_fake"] = m.accuracy_fake;
  j["composites"] = m.composites;
  j["token_auc"] = m.token_auc ? nlohmann::ordered_json(*m.token_auc) : nlohmann::ordered_json(nullptr);
  j["qfe_mae"] = m.qfe_mae ? nlohmann::ordered_json(*m.qfe_mae) : nlohmann::ordered_json(nullptr);
  auto f = open_out(path);
  f << j.dump(2) << '\n';
  if (!f) throw Error(Errc::IoFailure, "write failed: " + path.string());
}

void write_robustness_csv(const std::vector<RobustnessPoint>& curve, Perturbation kind,
                          const std::filesystem::path& path, const std::string& header) {
  auto f = open_out(path);
  if (!header.empty()) f << "# " << header << '\n';
  f << perturbation_name(kind) << "_level,accuracy,accuracy_real,accuracy_fake\n";
  for (const auto& p : curve)
    f << num(p.level) << ',' << num(p.accuracy) << ',' << num(p.accuracy_real) << ',' << num(p.accuracy_fake) << '\n';
  if (!f) throw Error(Errc::IoFailure, "write failed: " + path.string());
}

}  // namespace tiledet
