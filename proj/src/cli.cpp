#include "tiledet/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "tiledet/checkpoint.hpp"
#include "tiledet/error.hpp"
#include "tiledet/spectral.hpp"
#include "tiledet/train.hpp"

namespace tiledet {

namespace fs = std::filesystem;

namespace {

// Options shared by the corpus-consuming subcommands.
struct CorpusArgs {
  std::string data;
  bool synthetic = false;
  int count = 200;
  int size_min = 64;
  int size_max = 160;
  std::string recipe = "lowpass";
  long corpus_seed = -1;  // -1: derived from --seed
};

void add_corpus_flags(CLI::App* app, CorpusArgs& c) {
  app->add_option("--data", c.data, "Corpus directory written by synth-data");
  app->add_flag("--synthetic", c.synthetic, "Generate the corpus in memory instead of reading --data");
  app->add_option("--count", c.count, "Synthetic corpus size (even)");
  app->add_option("--size-min", c.size_min, "Smallest synthetic side");
  app->add_option("--size-max", c.size_max, "Largest synthetic side");
  app->add_option("--recipe", c.recipe, "Fake recipe: lowpass, checker, upsampled");
  app->add_option("--corpus-seed", c.corpus_seed, "Seed of the synthetic corpus (default: derived from --seed)");
}

Corpus obtain_corpus(const CorpusArgs& c, std::uint64_t seed, std::uint64_t salt) {
  if (c.synthetic) {
    SyntheticCorpusSpec spec;
    spec.count = c.count;
    spec.size_min = c.size_min;
    spec.size_max = c.size_max;
    spec.recipe = parse_recipe(c.recipe);
    spec.seed = c.corpus_seed >= 0 ? static_cast<std::uint64_t>(c.corpus_seed) : mix_seed(seed, salt);
    return generate_corpus(spec);
  }
  if (c.data.empty()) throw CLI::ValidationError("--data", "either --data DIR or --synthetic is required");
  return load_corpus(c.data);
}

struct ModelArgs {
  ModelConfig cfg;
};

void add_model_flags(CLI::App* app, ModelConfig& m) {
  app->add_option("--image-size", m.image_size, "Model input side (tile size)");
  app->add_option("--patch-size", m.patch_size, "ViT patch side");
  app->add_option("--embed-dim", m.embed_dim, "Token width");
  app->add_option("--backbone-depth", m.backbone_depth, "Backbone blocks");
  app->add_option("--refiner-depth", m.refiner_depth, "Refiner blocks");
  app->add_option("--aggregator-depth", m.aggregator_depth, "Aggregator blocks");
  app->add_option("--heads", m.heads, "Attention heads");
  app->add_flag("--frozen", m.backbone_frozen, "Freeze the backbone");
}

std::string seed_header(std::uint64_t seed, const std::string& what) {
  return "seed=" + std::to_string(seed) + " " + what;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

std::vector<double> parse_levels(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw CLI::ValidationError("--levels", "not a number: '" + tok + "'");
    }
  }
  if (out.empty()) throw CLI::ValidationError("--levels", "no levels given");
  return out;
}

// The JSON config holds flat keys named like the long flags. Values for flags
// that are already on the command line are dropped, so flags win.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream f(path);
  if (!f) throw Error(Errc::IoFailure, "cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw CLI::ValidationError("--config", std::string("bad JSON: ") + e.what());
  }
  if (!j.is_object()) throw CLI::ValidationError("--config", "config must be a flat JSON object");
  auto present = [&](const std::string& flag) {
    for (const auto& a : args)
      if (a == flag || a.starts_with(flag + "=")) return true;
    return false;
  };
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (present(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_string()) {
      args.push_back(flag);
      args.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      args.push_back(flag);
      args.push_back(value.dump());
    } else {
      throw CLI::ValidationError("--config", "key '" + key + "' must be a scalar");
    }
  }
  return args;
}

// ---- subcommands -------------------------------------------------------------

struct SpectraArgs {
  CorpusArgs corpus;
  int out_size = 32;
  std::string out = "spectra_out";
  std::string filter = "ideal";
};

int run_spectra(const SpectraArgs& a, std::uint64_t seed) {
  CorpusArgs ca = a.corpus;
  if (ca.synthetic && ca.size_min < 2 * a.out_size) {
    ca.size_min = 2 * a.out_size;
    ca.size_max = std::max(ca.size_max, ca.size_min);
  }
  const Corpus corpus = obtain_corpus(ca, seed, 11);
  std::vector<Image> real, fake;
  for (const auto& it : corpus) (it.label ? fake : real).push_back(it.image);

  ensure_dir(a.out);
  std::ofstream band(fs::path(a.out) / "band_energy.csv");
  if (!band) throw Error(Errc::IoFailure, "cannot write band_energy.csv");
  band << "# " << seed_header(seed, "real/fake spectral energy ratio") << "\n";
  band << "mode,out_size,real_count,fake_count,outer_band_mean_ratio\n";
  for (auto mode : {spectral::DownsampleMode::Resize, spectral::DownsampleMode::Crop}) {
    spectral::EnergyRatioOptions opt;
    opt.mode = mode;
    opt.out_size = a.out_size;
    opt.seed = seed;
    opt.filter = a.filter == "bilinear" ? ResizeFilter::Bilinear : ResizeFilter::IdealLowPass;
    const auto map = spectral::energy_ratio_map(real, fake, opt);
    const std::string name = mode == spectral::DownsampleMode::Resize ? "resize" : "crop";
    const std::string header = seed_header(seed, name + " mode, out_size=" + std::to_string(a.out_size));
    spectral::write_ratio_csv(map, fs::path(a.out) / ("ratio_" + name + ".csv"), header);
    spectral::write_ratio_pgm(map, fs::path(a.out) / ("ratio_" + name + ".pgm"), header);
    const double outer = spectral::outer_band_mean(map);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", outer);
    band << name << ',' << a.out_size << ',' << real.size() << ',' << fake.size() << ',' << buf << '\n';
    std::printf("%-6s outer-band real/fake ratio %.4g\n", name.c_str(), outer);
  }
  return kExitOk;
}

struct TilePlanArgs {
  int height = 0, width = 0, tile = 224;
  std::string out;
};

int run_tile_plan(const TilePlanArgs& a, std::uint64_t seed) {
  if (a.height < 1 || a.width < 1 || a.tile < 1) throw CLI::ValidationError("tile-plan", "sizes must be positive");
  const auto [h, w] = normalized_dims(a.height, a.width, a.tile);
  if (h != a.height || w != a.width)
    std::printf("normalized %dx%d to %dx%d (short side = tile)\n", a.height, a.width, h, w);
  const TilePlan plan = full_coverage_plan(h, w, a.tile);
  std::printf("tiles per axis: %zu x %zu\n", axis_starts(h, a.tile).size(), axis_starts(w, a.tile).size());
  std::ostringstream csv;
  csv << "# " << seed_header(seed, "full-coverage plan " + std::to_string(h) + "x" + std::to_string(w) +
                                       " tile " + std::to_string(a.tile))
      << "\n";
  csv << "top,left\n";
  for (const auto& o : plan.origins) csv << o.top << ',' << o.left << '\n';
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream f(a.out);
    if (!f) throw Error(Errc::IoFailure, "cannot write " + a.out);
    f << csv.str();
  }
  return kExitOk;
}

struct AugmentArgs {
  std::string input, partner;
  bool synthetic = false;
  int label = 0;
  double p = 1.0;
  std::string out = "augment_out";
};

int run_augment_preview(const AugmentArgs& a, std::uint64_t seed) {
  Image primary;
  std::optional<Image> partner;
  int label = a.label;
  if (a.synthetic) {
    primary = real_texture(96, 96, mix_seed(seed, 21));
    partner = make_fake(primary, FakeRecipe::LowPassNoise);
    label = 0;
  } else {
    if (a.input.empty()) throw CLI::ValidationError("--input", "an input image or --synthetic is required");
    primary = load_image(a.input);
    if (!a.partner.empty()) partner = load_image(a.partner);
  }
  if (primary.channels() != 3) throw Error(Errc::WrongChannelCount, "augment-preview expects an RGB image");
  AugmentationPolicy policy;
  policy.p_each = a.p;
  policy.seed = seed;
  const AugmentedSample s = apply_policy(primary, partner, label, policy);

  ensure_dir(a.out);
  const std::string header = seed_header(seed, "augment-preview");
  save_image(primary, fs::path(a.out) / "input.ppm", header);
  save_image(s.image.clamped(), fs::path(a.out) / "augmented.ppm", header);
  if (s.mask) {
    Image m(s.mask->height, s.mask->width, 1);
    for (std::size_t i = 0; i < s.mask->values.size(); ++i) m.data()[i] = s.mask->values[i];
    save_image(m, fs::path(a.out) / "mask.pgm", header);
  }
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["label"] = s.label;
  j["scale"] = s.applied.scale;
  j["blur"] = s.applied.blur;
  j["rps"] = s.applied.rps;
  j["jpeg"] = s.applied.jpeg;
  j["qf"] = s.qf ? nlohmann::ordered_json(s.qf->qf) : nlohmann::ordered_json(nullptr);
  j["mask_mean"] = s.mask ? nlohmann::ordered_json(s.mask->mean()) : nlohmann::ordered_json(nullptr);
  j["height"] = s.image.height();
  j["width"] = s.image.width();
  std::ofstream f(fs::path(a.out) / "augment.json");
  if (!f) throw Error(Errc::IoFailure, "cannot write augment.json");
  f << j.dump(2) << '\n';
  std::printf("%s\n", j.dump().c_str());
  return kExitOk;
}

struct SynthArgs {
  std::string out;
  int count = 200, size_min = 64, size_max = 160;
  std::string recipe = "lowpass";
};

int run_synth_data(const SynthArgs& a, std::uint64_t seed) {
  SyntheticCorpusSpec spec;
  spec.count = a.count;
  spec.size_min = a.size_min;
  spec.size_max = a.size_max;
  spec.recipe = parse_recipe(a.recipe);
  spec.seed = seed;
  const Corpus c = generate_corpus(spec);
  save_corpus(c, a.out, seed_header(seed, "recipe=" + a.recipe));
  std::printf("wrote %zu images to %s\n", c.size(), a.out.c_str());
  return kExitOk;
}

struct TrainArgs {
  CorpusArgs corpus;
  ModelConfig model;
  int steps = 2000, batch = 4;
  double lr = 3e-4, weight_decay = 0.01, p_aug = 0.1;
  double p_jpeg = -1.0, p_rps = -1.0;  // negative: use p_aug
  int warmup = 0;
  std::string schedule = "constant";
  std::string optimizer = "adamw";
  std::string ablate;
  std::string save_init;
  std::string out = "train_out";
  int log_every = 100;
};

LossWeights ablation_weights(const std::string& ablate) {
  if (ablate.empty() || ablate == "none") return {1, 1, 1};
  if (ablate == "tfl") return {1, 0, 1};
  if (ablate == "qfe") return {1, 1, 0};
  if (ablate == "both") return {1, 0, 0};
  throw CLI::ValidationError("--ablate", "expected tfl, qfe or both");
}

int run_train(const TrainArgs& a, std::uint64_t seed) {
  a.model.validate();
  const Corpus corpus = obtain_corpus(a.corpus, seed, 1);
  TrainConfig tc;
  tc.steps = a.steps;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  tc.weight_decay = a.weight_decay;
  tc.seed = seed;
  tc.loss_weights = ablation_weights(a.ablate);
  tc.warmup_steps = a.warmup;
  if (a.schedule == "cosine") tc.schedule = LrSchedule::Cosine;
  else if (a.schedule == "constant") tc.schedule = LrSchedule::Constant;
  else throw CLI::ValidationError("--schedule", "expected cosine or constant");
  if (a.optimizer == "adamw") tc.optimizer = OptimizerKind::AdamW;
  else if (a.optimizer == "sgd") tc.optimizer = OptimizerKind::SGD;
  else throw CLI::ValidationError("--optimizer", "expected adamw or sgd");
  AugmentationPolicy policy;
  policy.p_each = a.p_aug;
  if (a.p_jpeg >= 0.0) policy.p_jpeg = a.p_jpeg;
  if (a.p_rps >= 0.0) policy.p_rps = a.p_rps;
  policy.seed = mix_seed(seed, 2);

  ensure_dir(a.out);
  const ModelParams init = init_params(a.model, seed);
  if (!a.save_init.empty()) save_checkpoint({a.model, init, seed}, a.save_init);

  const TrainResult r = train(corpus, init, a.model, tc, policy, [&](const LossRow& row) {
    if (a.log_every > 0 && (row.step % a.log_every == 0 || row.step + 1 == tc.steps))
      std::printf("step %5d  L_cls %.4f  L_tfl %.4f  L_qfe %.4f  L_all %.4f\n", row.step, row.loss.cls, row.loss.tfl,
                  row.loss.qfe, row.loss.all);
  });
  save_checkpoint({a.model, r.params, seed}, fs::path(a.out) / "checkpoint.bin");
  write_loss_trace(r.trace, fs::path(a.out) / "loss_trace.csv",
                   seed_header(seed, "ablate=" + (a.ablate.empty() ? std::string("none") : a.ablate)));
  std::printf("checkpoint written to %s\n", (fs::path(a.out) / "checkpoint.bin").c_str());
  return kExitOk;
}

struct EvalArgs {
  CorpusArgs corpus;
  std::string checkpoint;
  std::string mode = "full";
  std::string out = "eval_out";
  bool no_localization = false, no_quality = false;
};

int run_eval(const EvalArgs& a, std::uint64_t seed) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Corpus corpus = obtain_corpus(a.corpus, seed, 3);
  EvalOptions eo;
  eo.mode = parse_tiling_mode(a.mode);
  eo.seed = seed;
  eo.localization = !a.no_localization;
  eo.quality = !a.no_quality;
  const EvalMetrics m = evaluate(corpus, ck.params, ck.config, eo);
  ensure_dir(a.out);
  write_metrics_csv(m, fs::path(a.out) / ("metrics_" + m.mode + ".csv"), seed_header(seed, "eval"));
  write_metrics_json(m, fs::path(a.out) / ("metrics_" + m.mode + ".json"), seed);
  std::printf("mode %s  n %d  acc %.4f (real %.4f, fake %.4f)", m.mode.c_str(), m.count, m.accuracy,
              m.accuracy_real, m.accuracy_fake);
  if (m.token_auc) std::printf("  token AUC %.4f", *m.token_auc);
  else if (eo.localization) std::printf("  token AUC absent");
  if (m.qfe_mae) std::printf("  QF MAE %.2f", *m.qfe_mae);
  std::printf("\n");
  return kExitOk;
}

struct RobustArgs {
  CorpusArgs corpus;
  std::string checkpoint;
  std::string perturb = "jpeg";
  std::string levels = "100,90,80,70,60";
  std::string mode = "full";
  std::string out = "robustness.csv";
};

int run_robustness(const RobustArgs& a, std::uint64_t seed) {
  const Perturbation kind = parse_perturbation(a.perturb);
  const std::vector<double> levels = parse_levels(a.levels);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Corpus corpus = obtain_corpus(a.corpus, seed, 3);
  const auto curve = robustness_sweep(corpus, ck.params, ck.config, kind, levels, parse_tiling_mode(a.mode));
  write_robustness_csv(curve, kind, a.out, seed_header(seed, "robustness " + a.perturb));
  for (const auto& p : curve) std::printf("%s %-8g acc %.4f\n", a.perturb.c_str(), p.level, p.accuracy);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  CLI::App app{"Tile-based synthetic-image detector experiments", "tiledet"};
  app.require_subcommand(1);
  long long seed = 0;
  int threads = 0;
  std::string config;
  app.add_option("--seed", seed, "Seed for every random choice")->check(CLI::NonNegativeNumber);
  app.add_option("--threads", threads, "Worker threads (0 = all available)")->check(CLI::NonNegativeNumber);
  app.add_option("--config", config, "Flat JSON file of flag defaults; explicit flags win");
  app.fallthrough();

  SpectraArgs spectra;
  auto* sp = app.add_subcommand("spectra", "Real/fake spectral energy ratio under resize and crop");
  add_corpus_flags(sp, spectra.corpus);
  sp->add_option("--out-size", spectra.out_size, "Spectrum side after downsampling");
  sp->add_option("--out", spectra.out, "Output directory");
  sp->add_option("--filter", spectra.filter, "Resize filter: ideal or bilinear");

  TilePlanArgs tp;
  auto* tps = app.add_subcommand("tile-plan", "Full-coverage tile origins for an image size");
  tps->add_option("--height", tp.height, "Image height")->required();
  tps->add_option("--width", tp.width, "Image width")->required();
  tps->add_option("--tile", tp.tile, "Tile side");
  tps->add_option("--out", tp.out, "CSV path (default stdout)");

  AugmentArgs aug;
  auto* ap = app.add_subcommand("augment-preview", "Apply the augmentation policy to one image");
  ap->add_option("--input", aug.input, "Input PPM");
  ap->add_option("--partner", aug.partner, "Image of the other class for patch swapping");
  ap->add_flag("--synthetic", aug.synthetic, "Use a generated real/fake pair");
  ap->add_option("--label", aug.label, "1 if the input is fake")->check(CLI::Range(0, 1));
  ap->add_option("--p", aug.p, "Probability of each augmentation")->check(CLI::Range(0.0, 1.0));
  ap->add_option("--out", aug.out, "Output directory");

  SynthArgs syn;
  auto* sd = app.add_subcommand("synth-data", "Write a synthetic paired real/fake corpus");
  sd->add_option("--out", syn.out, "Output directory")->required();
  sd->add_option("--count", syn.count, "Number of images (even)");
  sd->add_option("--size-min", syn.size_min, "Smallest side");
  sd->add_option("--size-max", syn.size_max, "Largest side");
  sd->add_option("--recipe", syn.recipe, "Fake recipe: lowpass, checker, upsampled");

  TrainArgs tr;
  auto* ts = app.add_subcommand("train", "Train the detector");
  add_corpus_flags(ts, tr.corpus);
  add_model_flags(ts, tr.model);
  ts->add_option("--steps", tr.steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
  ts->add_option("--batch", tr.batch, "Images per step")->check(CLI::PositiveNumber);
  ts->add_option("--lr", tr.lr, "Peak learning rate")->check(CLI::NonNegativeNumber);
  ts->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay")->check(CLI::NonNegativeNumber);
  ts->add_option("--warmup", tr.warmup, "Linear warmup steps")->check(CLI::NonNegativeNumber);
  ts->add_option("--schedule", tr.schedule, "cosine or constant");
  ts->add_option("--optimizer", tr.optimizer, "adamw or sgd");
  ts->add_option("--p-aug", tr.p_aug, "Probability of each augmentation")->check(CLI::Range(0.0, 1.0));
  ts->add_option("--p-jpeg", tr.p_jpeg, "JPEG probability (default: --p-aug)")->check(CLI::Range(0.0, 1.0));
  ts->add_option("--p-rps", tr.p_rps, "Patch-swap probability (default: --p-aug)")->check(CLI::Range(0.0, 1.0));
  ts->add_option("--ablate", tr.ablate, "Zero loss weights: tfl, qfe or both");
  ts->add_option("--save-init", tr.save_init, "Also write the initial checkpoint here");
  ts->add_option("--out", tr.out, "Output directory");
  ts->add_option("--log-every", tr.log_every, "Print the loss every N steps (0 = quiet)");

  EvalArgs ev;
  auto* es = app.add_subcommand("eval", "Accuracy, token AUC and QF error of a checkpoint");
  add_corpus_flags(es, ev.corpus);
  es->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  es->add_option("--mode", ev.mode, "Tiling: full, center1, randomk");
  es->add_option("--out", ev.out, "Output directory");
  es->add_flag("--no-localization", ev.no_localization, "Skip the patch-swap token AUC");
  es->add_flag("--no-quality", ev.no_quality, "Skip the QF regression error");

  RobustArgs rb;
  auto* rs = app.add_subcommand("robustness", "Accuracy under a perturbation sweep");
  add_corpus_flags(rs, rb.corpus);
  rs->add_option("--checkpoint", rb.checkpoint, "Checkpoint file")->required();
  rs->add_option("--perturb", rb.perturb, "jpeg, blur or scale");
  rs->add_option("--levels", rb.levels, "Comma-separated levels");
  rs->add_option("--mode", rb.mode, "Tiling: full, center1, randomk");
  rs->add_option("--out", rb.out, "CSV path");

  try {
    args = merge_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }

  if (threads > 0) {
    kernels::set_num_threads(threads);
    omp_set_num_threads(threads);
  }
  const auto useed = static_cast<std::uint64_t>(seed);
  try {
    if (*sp) return run_spectra(spectra, useed);
    if (*tps) return run_tile_plan(tp, useed);
    if (*ap) return run_augment_preview(aug, useed);
    if (*sd) return run_synth_data(syn, useed);
    if (*ts) return run_train(tr, useed);
    if (*es) return run_eval(ev, useed);
    if (*rs) return run_robustness(rb, useed);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help() << '\n';
    return kExitUsage;
  } catch (const NonFiniteLossError& e) {
    std::cerr << "numeric failure at step " << e.step() << ": " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.code()) {
      case Errc::IoFailure:
      case Errc::CorruptFile:
      case Errc::UnsupportedFormat: return kExitIo;
      case Errc::NonFiniteLoss: return kExitNumeric;
      default: return kExitUsage;
    }
  }
  return kExitUsage;
}

}  // namespace tiledet
