#include "tiledet/model.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tiledet/error.hpp"
#include "tiledet/losses.hpp"

namespace tiledet {

void ModelConfig::validate() const {
  if (image_size < 1 || patch_size < 1 || image_size % patch_size)
    throw Error(Errc::InvalidArgument, "image_size must be a positive multiple of patch_size");
  if (embed_dim < 1 || heads < 1 || embed_dim % heads) throw Error(Errc::InvalidArgument, "heads must divide embed_dim");
  if (backbone_depth < 0 || refiner_depth < 0 || aggregator_depth < 0 || mlp_ratio < 1)
    throw Error(Errc::InvalidArgument, "negative depth");
}

// ---------------------------------------------------------------------------
// Parameter bookkeeping

namespace {

void visit_ln(const std::string& p, ParamGroup g, LayerNormParams& ln, const ModelParams::Visitor& f) {
  f(p + ".gamma", g, ln.gamma);
  f(p + ".beta", g, ln.beta);
}

void visit_block(const std::string& p, ParamGroup g, BlockParams& b, const ModelParams::Visitor& f) {
  visit_ln(p + ".ln1", g, b.ln1, f);
  f(p + ".attn.qkv.weight", g, b.w_qkv);
  f(p + ".attn.qkv.bias", g, b.b_qkv);
  f(p + ".attn.proj.weight", g, b.w_proj);
  f(p + ".attn.proj.bias", g, b.b_proj);
  visit_ln(p + ".ln2", g, b.ln2, f);
  f(p + ".mlp.fc1.weight", g, b.w_fc1);
  f(p + ".mlp.fc1.bias", g, b.b_fc1);
  f(p + ".mlp.fc2.weight", g, b.w_fc2);
  f(p + ".mlp.fc2.bias", g, b.b_fc2);
}

}  // namespace

void ModelParams::for_each(const Visitor& f) {
  f("backbone.patch_embed.weight", ParamGroup::Backbone, patch_w);
  f("backbone.patch_embed.bias", ParamGroup::Backbone, patch_b);
  f("backbone.cls_token", ParamGroup::Backbone, cls);
  f("backbone.pos_embed", ParamGroup::Backbone, pos);
  for (std::size_t i = 0; i < backbone.size(); ++i)
    visit_block("backbone.blocks." + std::to_string(i), ParamGroup::Backbone, backbone[i], f);
  for (std::size_t i = 0; i < refiner.size(); ++i)
    visit_block("refiner.blocks." + std::to_string(i), ParamGroup::Refiner, refiner[i], f);
  visit_ln("refiner.norm", ParamGroup::Refiner, refiner_norm, f);
  for (std::size_t i = 0; i < aggregator.size(); ++i)
    visit_block("aggregator.blocks." + std::to_string(i), ParamGroup::Aggregator, aggregator[i], f);
  f("aggregator.output_token", ParamGroup::Aggregator, t_out);
  f("head.cls.fc1.weight", ParamGroup::Classifier, cls_w1);
  f("head.cls.fc1.bias", ParamGroup::Classifier, cls_b1);
  f("head.cls.fc2.weight", ParamGroup::Classifier, cls_w2);
  f("head.cls.fc2.bias", ParamGroup::Classifier, cls_b2);
  f("head.tfl.weight", ParamGroup::TokenHead, tfl_w);
  f("head.tfl.bias", ParamGroup::TokenHead, tfl_b);
  f("head.qfe.fc1.weight", ParamGroup::QualityHead, qfe_w1);
  f("head.qfe.fc1.bias", ParamGroup::QualityHead, qfe_b1);
  f("head.qfe.fc2.weight", ParamGroup::QualityHead, qfe_w2);
  f("head.qfe.fc2.bias", ParamGroup::QualityHead, qfe_b2);
}

void ModelParams::for_each(const ConstVisitor& f) const {
  const_cast<ModelParams*>(this)->for_each(
      Visitor([&](const std::string& n, ParamGroup g, Mat& m) { f(n, g, static_cast<const Mat&>(m)); }));
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  z.for_each(Visitor([](const std::string&, ParamGroup, Mat& m) { m.zero(); }));
  return z;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each(ConstVisitor([&](const std::string&, ParamGroup, const Mat& m) { n += m.size(); }));
  return n;
}

void ModelParams::add_scaled(const ModelParams& other, double scale) {
  std::vector<const Mat*> src;
  other.for_each(ConstVisitor([&](const std::string&, ParamGroup, const Mat& m) { src.push_back(&m); }));
  std::size_t i = 0;
  for_each(Visitor([&](const std::string&, ParamGroup, Mat& m) {
    const Mat& o = *src[i++];
    for (std::size_t k = 0; k < m.size(); ++k) m.v[k] += scale * o.v[k];
  }));
}

namespace {

LayerNormParams make_ln(int d) { return {Mat(1, d, 1.0), Mat(1, d, 0.0)}; }

BlockParams make_block(int d, int hidden) {
  BlockParams b;
  b.ln1 = make_ln(d);
  b.w_qkv = Mat(d, 3 * d);
  b.b_qkv = Mat(1, 3 * d);
  b.w_proj = Mat(d, d);
  b.b_proj = Mat(1, d);
  b.ln2 = make_ln(d);
  b.w_fc1 = Mat(d, hidden);
  b.b_fc1 = Mat(1, hidden);
  b.w_fc2 = Mat(hidden, d);
  b.b_fc2 = Mat(1, d);
  return b;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const int d = cfg.embed_dim, hidden = cfg.mlp_ratio * cfg.embed_dim;
  ModelParams p;
  p.patch_w = Mat(cfg.patch_dim(), d);
  p.patch_b = Mat(1, d);
  p.cls = Mat(1, d);
  p.pos = Mat(cfg.num_patches() + 1, d);
  for (int i = 0; i < cfg.backbone_depth; ++i) p.backbone.push_back(make_block(d, hidden));
  for (int i = 0; i < cfg.refiner_depth; ++i) p.refiner.push_back(make_block(d, hidden));
  p.refiner_norm = make_ln(d);
  for (int i = 0; i < cfg.aggregator_depth; ++i) p.aggregator.push_back(make_block(d, hidden));
  p.t_out = Mat(1, d);
  p.cls_w1 = Mat(2 * d, d);
  p.cls_b1 = Mat(1, d);
  p.cls_w2 = Mat(d, 2);
  p.cls_b2 = Mat(1, 2);
  p.tfl_w = Mat(d, 1);
  p.tfl_b = Mat(1, 1);
  p.qfe_w1 = Mat(d, d);
  p.qfe_b1 = Mat(1, d);
  p.qfe_w2 = Mat(d, 1);
  p.qfe_b2 = Mat(1, 1);

  // Truncated normal (2 sigma). CLS, positional table and attention
  // projections use std 0.02; the patch embedding, MLP and head weights use
  // 1/sqrt(fan_in). At 0.02 the patch embedding sits on a long plateau before
  // it starts separating fine texture. Biases, LayerNorm shifts and the output
  // token start at zero; LayerNorm gains at one.
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto trunc = [&](double sd) {
    double x;
    do x = normal(rng);
    while (std::abs(x) > 2.0);
    return sd * x;
  };
  p.for_each(ModelParams::Visitor([&](const std::string& name, ParamGroup, Mat& m) {
    const bool is_weight = name.ends_with(".weight") || name.ends_with("cls_token") || name.ends_with("pos_embed");
    if (!is_weight) return;
    const bool fan_in_scaled = name.find(".mlp.") != std::string::npos || name.starts_with("head.") ||
                               name == "backbone.patch_embed.weight";
    const double sd = fan_in_scaled ? 1.0 / std::sqrt(static_cast<double>(m.rows)) : 0.02;
    for (double& v : m.v) v = trunc(sd);
  }));
  return p;
}

// ---------------------------------------------------------------------------
// Layers with caches

namespace {

constexpr double kLnEps = 1e-6;

struct LnCache {
  Mat xhat;
  std::vector<double> rstd;
};

void ln_forward(const Mat& x, const LayerNormParams& p, Mat& y, LnCache* cache) {
  const int T = x.rows, d = x.cols;
  y = Mat(T, d);
  if (cache) {
    cache->xhat = Mat(T, d);
    cache->rstd.assign(T, 0.0);
  }
  for (int t = 0; t < T; ++t) {
    const double* xr = x.row(t);
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    double* yr = y.row(t);
    for (int j = 0; j < d; ++j) {
      const double xh = (xr[j] - mean) * rstd;
      yr[j] = xh * p.gamma.v[j] + p.beta.v[j];
      if (cache) cache->xhat(t, j) = xh;
    }
    if (cache) cache->rstd[t] = rstd;
  }
}

// Returns dx; accumulates into the gamma/beta gradients.
Mat ln_backward(const Mat& dy, const LayerNormParams& p, const LnCache& c, LayerNormParams* g) {
  const int T = dy.rows, d = dy.cols;
  Mat dx(T, d);
  std::vector<double> dxh(d);
  for (int t = 0; t < T; ++t) {
    const double* dyr = dy.row(t);
    const double* xh = c.xhat.row(t);
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < d; ++j) {
      if (g) {
        g->gamma.v[j] += dyr[j] * xh[j];
        g->beta.v[j] += dyr[j];
      }
      dxh[j] = dyr[j] * p.gamma.v[j];
      m1 += dxh[j];
      m2 += dxh[j] * xh[j];
    }
    m1 /= d;
    m2 /= d;
    double* dxr = dx.row(t);
    for (int j = 0; j < d; ++j) dxr[j] = c.rstd[t] * (dxh[j] - m1 - xh[j] * m2);
  }
  return dx;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

void add_bias(Mat& y, const Mat& b) {
  for (int t = 0; t < y.rows; ++t) {
    double* r = y.row(t);
    for (int j = 0; j < y.cols; ++j) r[j] += b.v[j];
  }
}

void bias_grad(const Mat& dy, Mat& db) {
  for (int t = 0; t < dy.rows; ++t) {
    const double* r = dy.row(t);
    for (int j = 0; j < dy.cols; ++j) db.v[j] += r[j];
  }
}

// y = x W + b
Mat linear(const Mat& x, const Mat& w, const Mat& b) {
  Mat y;
  kernels::gemm(x, w, y);
  add_bias(y, b);
  return y;
}

// Given dy for y = x W + b: accumulates dW, db and returns dx.
Mat linear_backward(const Mat& x, const Mat& dy, const Mat& w, Mat* dw, Mat* db) {
  if (dw) kernels::gemm_tn_acc(x, dy, *dw);
  if (db) bias_grad(dy, *db);
  Mat dx;
  kernels::gemm_nt(dy, w, dx);
  return dx;
}

struct BlockCache {
  LnCache ln1, ln2;
  Mat h1;                 // LN1 output
  Mat qkv;                // T x 3d
  std::vector<Mat> prob;  // per head, T x T
  Mat attn;               // concatenated heads, T x d
  Mat h2;                 // LN2 output
  Mat pre;                // fc1 pre-activation
  Mat act;                // GELU output
};

Mat block_forward(const Mat& x, const BlockParams& p, int heads, BlockCache* cache) {
  const int T = x.rows, d = x.cols, dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  BlockCache local;
  BlockCache& c = cache ? *cache : local;

  ln_forward(x, p.ln1, c.h1, cache ? &c.ln1 : nullptr);
  c.qkv = linear(c.h1, p.w_qkv, p.b_qkv);
  c.attn = Mat(T, d);
  c.prob.assign(heads, Mat());
  Mat q(T, dh), k(T, dh), v(T, dh), s, o;
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < T; ++t) {
      const double* r = c.qkv.row(t);
      std::copy(r + h * dh, r + (h + 1) * dh, q.row(t));
      std::copy(r + d + h * dh, r + d + (h + 1) * dh, k.row(t));
      std::copy(r + 2 * d + h * dh, r + 2 * d + (h + 1) * dh, v.row(t));
    }
    kernels::gemm_nt(q, k, s);
    for (int t = 0; t < T; ++t) {
      double* sr = s.row(t);
      double mx = -1e300;
      for (int u = 0; u < T; ++u) mx = std::max(mx, sr[u] *= scale);
      double z = 0.0;
      for (int u = 0; u < T; ++u) z += sr[u] = std::exp(sr[u] - mx);
      for (int u = 0; u < T; ++u) sr[u] /= z;
    }
    kernels::gemm(s, v, o);
    for (int t = 0; t < T; ++t) std::copy(o.row(t), o.row(t) + dh, c.attn.row(t) + h * dh);
    c.prob[h] = std::move(s);
    s = Mat();
  }
  Mat out = linear(c.attn, p.w_proj, p.b_proj);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += x.v[i];  // x_mid

  ln_forward(out, p.ln2, c.h2, cache ? &c.ln2 : nullptr);
  c.pre = linear(c.h2, p.w_fc1, p.b_fc1);
  c.act = c.pre;
  for (double& a : c.act.v) a = gelu(a);
  const Mat m = linear(c.act, p.w_fc2, p.b_fc2);
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += m.v[i];
  return out;
}

Mat block_backward(const Mat& dout, const BlockParams& p, const BlockCache& c, int heads, BlockParams* g) {
  const int T = dout.rows, d = dout.cols, dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  // MLP branch.
  Mat dact = linear_backward(c.act, dout, p.w_fc2, g ? &g->w_fc2 : nullptr, g ? &g->b_fc2 : nullptr);
  for (std::size_t i = 0; i < dact.size(); ++i) dact.v[i] *= gelu_grad(c.pre.v[i]);
  const Mat dh2 = linear_backward(c.h2, dact, p.w_fc1, g ? &g->w_fc1 : nullptr, g ? &g->b_fc1 : nullptr);
  Mat dmid = ln_backward(dh2, p.ln2, c.ln2, g ? &g->ln2 : nullptr);
  for (std::size_t i = 0; i < dmid.size(); ++i) dmid.v[i] += dout.v[i];

  // Attention branch.
  const Mat dattn = linear_backward(c.attn, dmid, p.w_proj, g ? &g->w_proj : nullptr, g ? &g->b_proj : nullptr);
  Mat dqkv(T, 3 * d);
  Mat q(T, dh), k(T, dh), v(T, dh), dout_h(T, dh), dp, ds, dq, dv(T, dh);
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < T; ++t) {
      const double* r = c.qkv.row(t);
      std::copy(r + h * dh, r + (h + 1) * dh, q.row(t));
      std::copy(r + d + h * dh, r + d + (h + 1) * dh, k.row(t));
      std::copy(r + 2 * d + h * dh, r + 2 * d + (h + 1) * dh, v.row(t));
      std::copy(dattn.row(t) + h * dh, dattn.row(t) + (h + 1) * dh, dout_h.row(t));
    }
    const Mat& P = c.prob[h];
    kernels::gemm_nt(dout_h, v, dp);  // dP = dO V^T
    dv.zero();
    kernels::gemm_tn_acc(P, dout_h, dv);  // dV = P^T dO
    ds = Mat(T, T);
    for (int t = 0; t < T; ++t) {
      const double* pr = P.row(t);
      const double* dpr = dp.row(t);
      double dot = 0.0;
      for (int u = 0; u < T; ++u) dot += pr[u] * dpr[u];
      double* dsr = ds.row(t);
      for (int u = 0; u < T; ++u) dsr[u] = pr[u] * (dpr[u] - dot) * scale;
    }
    kernels::gemm(ds, k, dq);  // dQ = dS K
    Mat dk_t(T, dh);
    kernels::gemm_tn_acc(ds, q, dk_t);  // dK = dS^T Q
    for (int t = 0; t < T; ++t) {
      double* r = dqkv.row(t);
      std::copy(dq.row(t), dq.row(t) + dh, r + h * dh);
      std::copy(dk_t.row(t), dk_t.row(t) + dh, r + d + h * dh);
      std::copy(dv.row(t), dv.row(t) + dh, r + 2 * d + h * dh);
    }
  }
  const Mat dh1 = linear_backward(c.h1, dqkv, p.w_qkv, g ? &g->w_qkv : nullptr, g ? &g->b_qkv : nullptr);
  Mat dx = ln_backward(dh1, p.ln1, c.ln1, g ? &g->ln1 : nullptr);
  for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] += dmid.v[i];
  return dx;
}

// Pixels are standardised before the patch embedding, (x - 0.5) / 0.25 on
// every channel. Without this the embedding is dominated by the constant
// offset and fine texture barely moves the tokens at init.
constexpr double kPixelCentre = 0.5;
constexpr double kPixelScale = 4.0;

Mat patchify(const Image& img, const ModelConfig& cfg) {
  if (img.height() != cfg.image_size || img.width() != cfg.image_size || img.channels() != 3)
    throw Error(Errc::ShapeMismatch, "view must be " + std::to_string(cfg.image_size) + "x" +
                                         std::to_string(cfg.image_size) + "x3, got " + std::to_string(img.height()) +
                                         "x" + std::to_string(img.width()) + "x" + std::to_string(img.channels()));
  const int g = cfg.grid(), P = cfg.patch_size;
  Mat xp(g * g, cfg.patch_dim());
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      double* r = xp.row(i * g + j);
      int k = 0;
      for (int py = 0; py < P; ++py)
        for (int px = 0; px < P; ++px)
          for (int c = 0; c < 3; ++c) r[k++] = (img.at(i * P + py, j * P + px, c) - kPixelCentre) * kPixelScale;
    }
  return xp;
}

struct VitCache {
  Mat xp;
  std::vector<BlockCache> backbone, refiner;
  LnCache norm;
  Mat pre_norm;
};

// Backbone + refiner + final norm. Backbone activations are only cached
// when they will be differentiated.
Mat vit_tokens(const Image& img, const ModelParams& p, const ModelConfig& cfg, VitCache* cache) {
  const int d = cfg.embed_dim, n = cfg.num_patches();
  Mat xp = patchify(img, cfg);
  Mat e = linear(xp, p.patch_w, p.patch_b);
  Mat x(n + 1, d);
  for (int j = 0; j < d; ++j) x(0, j) = p.cls.v[j] + p.pos(0, j);
  for (int t = 0; t < n; ++t)
    for (int j = 0; j < d; ++j) x(t + 1, j) = e(t, j) + p.pos(t + 1, j);

  const bool keep_backbone = cache && !cfg.backbone_frozen;
  if (cache) {
    cache->backbone.assign(keep_backbone ? p.backbone.size() : 0, BlockCache{});
    cache->refiner.assign(p.refiner.size(), BlockCache{});
  }
  for (std::size_t i = 0; i < p.backbone.size(); ++i)
    x = block_forward(x, p.backbone[i], cfg.heads, keep_backbone ? &cache->backbone[i] : nullptr);
  for (std::size_t i = 0; i < p.refiner.size(); ++i)
    x = block_forward(x, p.refiner[i], cfg.heads, cache ? &cache->refiner[i] : nullptr);
  Mat y;
  ln_forward(x, p.refiner_norm, y, cache ? &cache->norm : nullptr);
  if (cache) cache->xp = std::move(xp);
  return y;
}

void vit_backward(const Mat& dy, const ModelParams& p, const ModelConfig& cfg, const VitCache& c, ModelParams& g) {
  Mat dx = ln_backward(dy, p.refiner_norm, c.norm, &g.refiner_norm);
  for (std::size_t i = p.refiner.size(); i-- > 0;) dx = block_backward(dx, p.refiner[i], c.refiner[i], cfg.heads, &g.refiner[i]);
  if (cfg.backbone_frozen) return;
  for (std::size_t i = p.backbone.size(); i-- > 0;)
    dx = block_backward(dx, p.backbone[i], c.backbone[i], cfg.heads, &g.backbone[i]);
  const int d = cfg.embed_dim, n = cfg.num_patches();
  for (int j = 0; j < d; ++j) g.cls.v[j] += dx(0, j);
  for (std::size_t i = 0; i < dx.size(); ++i) g.pos.v[i] += dx.v[i];
  Mat de(n, d);
  std::copy(dx.row(1), dx.row(1) + static_cast<std::size_t>(n) * d, de.v.begin());
  kernels::gemm_tn_acc(c.xp, de, g.patch_w);
  bias_grad(de, g.patch_b);
}

struct AggCache {
  std::vector<BlockCache> blocks;
};

Mat aggregate_seq(const std::vector<Vec>& cls_tokens, const ModelParams& p, const ModelConfig& cfg, AggCache* cache) {
  if (cls_tokens.empty()) throw Error(Errc::EmptySequence, "aggregator needs at least one tile token");
  const int d = cfg.embed_dim;
  Mat x(static_cast<int>(cls_tokens.size()) + 1, d);
  std::copy(p.t_out.v.begin(), p.t_out.v.end(), x.row(0));
  for (std::size_t k = 0; k < cls_tokens.size(); ++k) {
    if (static_cast<int>(cls_tokens[k].size()) != d) throw Error(Errc::ShapeMismatch, "tile token dimension");
    std::copy(cls_tokens[k].begin(), cls_tokens[k].end(), x.row(static_cast<int>(k) + 1));
  }
  if (cache) cache->blocks.assign(p.aggregator.size(), BlockCache{});
  for (std::size_t i = 0; i < p.aggregator.size(); ++i)
    x = block_forward(x, p.aggregator[i], cfg.heads, cache ? &cache->blocks[i] : nullptr);
  return x;
}

struct HeadCache {
  Mat fin;   // 1 x 2d
  Mat pre;   // 1 x d
  Mat act;   // 1 x d
};

// Two-layer GELU MLP on a row vector.
Mat mlp2(const Mat& x, const Mat& w1, const Mat& b1, const Mat& w2, const Mat& b2, HeadCache* c) {
  Mat pre = linear(x, w1, b1);
  Mat act = pre;
  for (double& a : act.v) a = gelu(a);
  Mat out = linear(act, w2, b2);
  if (c) {
    c->fin = x;
    c->pre = std::move(pre);
    c->act = std::move(act);
  }
  return out;
}

Mat mlp2_backward(const Mat& dout, const Mat& w1, const Mat& w2, const HeadCache& c, Mat& gw1, Mat& gb1, Mat& gw2,
                  Mat& gb2) {
  Mat dact = linear_backward(c.act, dout, w2, &gw2, &gb2);
  for (std::size_t i = 0; i < dact.size(); ++i) dact.v[i] *= gelu_grad(c.pre.v[i]);
  return linear_backward(c.fin, dact, w1, &gw1, &gb1);
}

Mat row_of(const Vec& v) {
  Mat m(1, static_cast<int>(v.size()));
  m.v = v;
  return m;
}

ClassOutput class_from_logits(const Mat& logits) {
  ClassOutput o;
  o.logits[0] = logits.v[0];
  o.logits[1] = logits.v[1];
  const double mx = std::max(o.logits[0], o.logits[1]);
  const double e0 = std::exp(o.logits[0] - mx), e1 = std::exp(o.logits[1] - mx);
  o.probs[0] = e0 / (e0 + e1);
  o.probs[1] = e1 / (e0 + e1);
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public forward API

TokenSequence vit_forward(const Image& img, const ModelParams& params, const ModelConfig& cfg) {
  return TokenSequence{vit_tokens(img, params, cfg, nullptr), &params.patch_w};
}

Vec local_aggregate(const std::vector<Vec>& cls_tokens, const ModelParams& params, const ModelConfig& cfg) {
  const Mat x = aggregate_seq(cls_tokens, params, cfg, nullptr);
  return Vec(x.row(0), x.row(0) + x.cols);
}

ClassOutput classify(const Vec& f_global, const Vec& f_detail, const ModelParams& params) {
  const int d = params.cls_w1.rows / 2;
  if (static_cast<int>(f_global.size()) != d || static_cast<int>(f_detail.size()) != d)
    throw Error(Errc::ShapeMismatch, "classifier expects two vectors of the embedding dimension");
  Vec fin = f_global;
  fin.insert(fin.end(), f_detail.begin(), f_detail.end());
  return class_from_logits(mlp2(row_of(fin), params.cls_w1, params.cls_b1, params.cls_w2, params.cls_b2, nullptr));
}

Vec tfl_head(const TokenSequence& tokens, const ModelParams& params) {
  const Mat& t = tokens.tokens;
  Vec out(t.rows - 1);
  for (int i = 1; i < t.rows; ++i) {
    const double* r = t.row(i);
    double z = params.tfl_b.v[0];
    for (int j = 0; j < t.cols; ++j) z += r[j] * params.tfl_w.v[j];
    out[i - 1] = sigmoid(z);
  }
  return out;
}

double qfe_head(const Vec& f_detail, const ModelParams& params) {
  const Mat z = mlp2(row_of(f_detail), params.qfe_w1, params.qfe_b1, params.qfe_w2, params.qfe_b2, nullptr);
  return sigmoid(z.v[0]);
}

Vec FullOutput::f_final() const {
  Vec f = f_global;
  f.insert(f.end(), f_detail.begin(), f_detail.end());
  return f;
}

FullOutput forward_full(const Image& global_img, const std::vector<Image>& tiles, const ModelParams& params,
                        const ModelConfig& cfg) {
  if (tiles.empty()) throw Error(Errc::EmptySequence, "at least one tile is required");
  FullOutput out;
  const TokenSequence g = vit_forward(global_img, params, cfg);
  out.f_global = g.cls();
  out.global_token_probs = tfl_head(g, params);
  out.backbone_identities.push_back(g.backbone_identity);
  std::vector<Vec> cls_tokens;
  for (const Image& tile : tiles) {
    const TokenSequence t = vit_forward(tile, params, cfg);
    cls_tokens.push_back(t.cls());
    out.tile_token_probs.push_back(tfl_head(t, params));
    out.backbone_identities.push_back(t.backbone_identity);
  }
  out.f_detail = local_aggregate(cls_tokens, params, cfg);
  out.cls = classify(out.f_global, out.f_detail, params);
  out.q_pred = qfe_head(out.f_detail, params);
  return out;
}

// ---------------------------------------------------------------------------
// Training objective and gradients

namespace {

long sample_token_count(const TrainingSample& s) {
  long n = static_cast<long>(s.global_labels.values.size());
  for (const auto& l : s.tile_labels) n += static_cast<long>(l.values.size());
  return n;
}

void check_sample(const TrainingSample& s, const ModelConfig& cfg) {
  const std::size_t n = static_cast<std::size_t>(cfg.num_patches());
  if (s.tiles.empty()) throw Error(Errc::EmptySequence, "sample has no tiles");
  if (s.tile_labels.size() != s.tiles.size()) throw Error(Errc::ShapeMismatch, "one token-label grid per tile required");
  if (s.global_labels.values.size() != n) throw Error(Errc::ShapeMismatch, "global token labels do not match the patch grid");
  for (const auto& l : s.tile_labels)
    if (l.values.size() != n) throw Error(Errc::ShapeMismatch, "tile token labels do not match the patch grid");
  if (s.label != 0 && s.label != 1) throw Error(Errc::InvalidArgument, "label must be 0 or 1");
}

struct SampleLoss {
  double cls = 0.0;      // cross-entropy of this sample
  double tfl_sum = 0.0;  // summed token BCE of this sample
  double qfe = 0.0;      // squared QF error of this sample
};

// Forward (and optionally backward) for one sample. Gradients are scaled so
// that summing over samples yields the gradient of the batch objective.
SampleLoss run_sample(const TrainingSample& s, const ModelParams& p, const ModelConfig& cfg, const LossWeights& w,
                      double batch_size, double total_tokens, ModelParams* grads) {
  const int d = cfg.embed_dim;
  const std::size_t views = s.tiles.size() + 1;
  std::vector<VitCache> vc(grads ? views : 0);
  std::vector<Mat> toks(views);
  for (std::size_t v = 0; v < views; ++v) {
    const Image& img = v == 0 ? s.global : s.tiles[v - 1];
    toks[v] = vit_tokens(img, p, cfg, grads ? &vc[v] : nullptr);
  }

  SampleLoss loss;
  // Token head over every non-CLS token of every view.
  std::vector<Vec> dz(views);
  for (std::size_t v = 0; v < views; ++v) {
    const TokenLabelGrid& lab = v == 0 ? s.global_labels : s.tile_labels[v - 1];
    const Mat& t = toks[v];
    dz[v].assign(t.rows, 0.0);
    for (int i = 1; i < t.rows; ++i) {
      const double* r = t.row(i);
      double z = p.tfl_b.v[0];
      for (int j = 0; j < d; ++j) z += r[j] * p.tfl_w.v[j];
      const double y = lab.values[i - 1];
      loss.tfl_sum += bce_with_logit(z, y);
      dz[v][i] = w.tfl * (sigmoid(z) - y) / total_tokens;
    }
  }

  std::vector<Vec> cls_tokens;
  cls_tokens.reserve(views - 1);
  for (std::size_t v = 1; v < views; ++v) cls_tokens.emplace_back(toks[v].row(0), toks[v].row(0) + d);
  AggCache agg;
  const Mat aggregated = aggregate_seq(cls_tokens, p, cfg, grads ? &agg : nullptr);
  const Vec f_detail(aggregated.row(0), aggregated.row(0) + d);

  Vec fin(toks[0].row(0), toks[0].row(0) + d);
  fin.insert(fin.end(), f_detail.begin(), f_detail.end());
  HeadCache ch, qh;
  const Mat logits = mlp2(row_of(fin), p.cls_w1, p.cls_b1, p.cls_w2, p.cls_b2, &ch);
  const ClassOutput co = class_from_logits(logits);
  const double lse = std::max(logits.v[0], logits.v[1]) +
                     std::log(std::exp(logits.v[0] - std::max(logits.v[0], logits.v[1])) +
                              std::exp(logits.v[1] - std::max(logits.v[0], logits.v[1])));
  loss.cls = lse - logits.v[static_cast<std::size_t>(s.label)];

  const Mat qz = mlp2(row_of(f_detail), p.qfe_w1, p.qfe_b1, p.qfe_w2, p.qfe_b2, &qh);
  const double q = sigmoid(qz.v[0]);
  loss.qfe = (q - s.q_true) * (q - s.q_true);

  if (!grads) return loss;
  ModelParams& g = *grads;

  // Classifier.
  Mat dlogits(1, 2);
  for (int c = 0; c < 2; ++c) dlogits.v[c] = w.cls * (co.probs[c] - (c == s.label ? 1.0 : 0.0)) / batch_size;
  const Mat dfin = mlp2_backward(dlogits, p.cls_w1, p.cls_w2, ch, g.cls_w1, g.cls_b1, g.cls_w2, g.cls_b2);

  // Quality head.
  Mat dq(1, 1);
  dq.v[0] = w.qfe * 2.0 * (q - s.q_true) * q * (1.0 - q) / batch_size;
  const Mat dfd_q = mlp2_backward(dq, p.qfe_w1, p.qfe_w2, qh, g.qfe_w1, g.qfe_b1, g.qfe_w2, g.qfe_b2);

  // Aggregator.
  Mat dagg(aggregated.rows, d);
  for (int j = 0; j < d; ++j) dagg(0, j) = dfin.v[d + j] + dfd_q.v[j];
  for (std::size_t i = p.aggregator.size(); i-- > 0;)
    dagg = block_backward(dagg, p.aggregator[i], agg.blocks[i], cfg.heads, &g.aggregator[i]);
  for (int j = 0; j < d; ++j) g.t_out.v[j] += dagg(0, j);

  // Views.
  for (std::size_t v = 0; v < views; ++v) {
    const Mat& t = toks[v];
    Mat dt(t.rows, d);
    for (int j = 0; j < d; ++j) dt(0, j) = v == 0 ? dfin.v[j] : dagg(static_cast<int>(v), j);
    for (int i = 1; i < t.rows; ++i) {
      const double dzi = dz[v][i];
      if (dzi == 0.0) continue;
      const double* r = t.row(i);
      double* dr = dt.row(i);
      for (int j = 0; j < d; ++j) {
        g.tfl_w.v[j] += dzi * r[j];
        dr[j] += dzi * p.tfl_w.v[j];
      }
      g.tfl_b.v[0] += dzi;
    }
    vit_backward(dt, p, cfg, vc[v], g);
  }
  return loss;
}

GradientResult run_batch(const std::vector<TrainingSample>& batch, const ModelParams& params, const ModelConfig& cfg,
                         const LossWeights& weights, bool parallel, bool want_grads) {
  cfg.validate();
  if (batch.empty()) throw Error(Errc::EmptySequence, "empty batch");
  long tokens = 0;
  for (const auto& s : batch) {
    check_sample(s, cfg);
    tokens += sample_token_count(s);
  }
  const double B = static_cast<double>(batch.size());
  const double M = static_cast<double>(tokens);

  std::vector<SampleLoss> losses(batch.size());
  std::vector<ModelParams> grads(want_grads ? batch.size() : 0);
  const long n = static_cast<long>(batch.size());
#pragma omp parallel for schedule(dynamic) if (parallel && n > 1) num_threads(kernels::num_threads())
  for (long i = 0; i < n; ++i) {
    if (want_grads) grads[i] = params.zeros_like();
    losses[i] = run_sample(batch[i], params, cfg, weights, B, M, want_grads ? &grads[i] : nullptr);
  }

  GradientResult res;
  for (const auto& l : losses) {
    res.loss.cls += l.cls;
    res.loss.tfl += l.tfl_sum;
    res.loss.qfe += l.qfe;
  }
  res.loss.cls /= B;
  res.loss.tfl /= M;
  res.loss.qfe /= B;
  res.loss.all = loss_all(res.loss, weights);
  if (want_grads) {
    res.grads = std::move(grads[0]);
    for (std::size_t i = 1; i < grads.size(); ++i) res.grads.add_scaled(grads[i], 1.0);
  }
  return res;
}

}  // namespace

LossBreakdown batch_loss(const std::vector<TrainingSample>& batch, const ModelParams& params, const ModelConfig& cfg,
                         const LossWeights& weights) {
  return run_batch(batch, params, cfg, weights, true, false).loss;
}

GradientResult backward_full(const std::vector<TrainingSample>& batch, const ModelParams& params,
                             const ModelConfig& cfg, const LossWeights& weights) {
  return run_batch(batch, params, cfg, weights, true, true);
}

GradientResult backward_full_serial(const std::vector<TrainingSample>& batch, const ModelParams& params,
                                    const ModelConfig& cfg, const LossWeights& weights) {
  return run_batch(batch, params, cfg, weights, false, true);
}

}  // namespace tiledet
