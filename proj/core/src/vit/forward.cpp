// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/vit/forward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "gplq/error.hpp"
#include "gplq/nd/kernels.hpp"
#include "gplq/nd/parallel.hpp"

namespace gplq::vit {

namespace {

namespace k = nd::kernels;
using Vec = std::vector<double>;

constexpr double kLnEps = 1e-6;
// Samples per gradient-reduction chunk. Fixed so the reduction order does not
// depend on the worker count.
constexpr std::size_t kGradChunk = 8;

struct LayerRef {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor w;   // effective weight [out x in]
  Tensor wt;  // [in x out]
  const Tensor* bias = nullptr;
  const qwt::CompensationLayer* comp = nullptr;
  Tensor comp_t;  // W*^T [in x out]
  const quant::Quantizer* wq = nullptr;
};

struct SiteRef {
  std::string name;
  const quant::Quantizer* q = nullptr;
  bool wants_scale_grad() const { return q && q->state.learnable && !q->state.frozen; }
};

struct NormRef {
  std::string name;
  const Tensor* gamma = nullptr;
  const Tensor* beta = nullptr;
};

struct BlockRef {
  NormRef ln1, ln2;
  LayerRef qkv, proj, fc1, fc2;
  SiteRef s_qkv, s_q, s_k, s_p, s_v, s_proj, s_fc1, s_fc2;
};

struct Prepared {
  const Model* model = nullptr;
  ModelConfig cfg;
  LayerRef patch, head;
  SiteRef s_patch, s_head;
  const Tensor* pos = nullptr;
  NormRef lnf;
  std::vector<BlockRef> blocks;
};

// Raw value at an insertion point and, when quantized, the value consumed
// downstream.
struct Site {
  Vec raw;
  Vec quantized;
  const Vec& used() const { return quantized.empty() ? raw : quantized; }
};

struct NormCache {
  Vec xhat;
  Vec rstd;
};

struct BlockCache {
  NormCache ln1, ln2;
  Site a1, q, k, v, p, o, a2, g;
  Vec u;  // fc1 pre-activation
};

struct SampleCache {
  Site patches;
  std::vector<BlockCache> blocks;
  NormCache lnf;
  Site feat;
};

}  // namespace

class Tape {
 public:
  Prepared prep;
  std::vector<SampleCache> samples;
  bool consumed = false;
};

namespace {

SiteRef make_site(const std::string& name, const QuantHooks* hooks) {
  SiteRef ref{name, nullptr};
  if (hooks) {
    if (auto it = hooks->activations.find(name); it != hooks->activations.end()) {
      it->second.config.validate();
      ref.q = &it->second;
    }
  }
  return ref;
}

LayerRef make_layer(const Model& model, const QuantHooks* hooks, const std::string& name) {
  LayerRef ref;
  ref.name = name;
  ref.w = effective_weight(model, hooks, name);
  ref.out = ref.w.dim(0);
  ref.in = ref.w.dim(1);
  ref.wt = nd::transpose(ref.w);
  ref.bias = &model.param(name + ".bias");
  if (hooks) {
    if (auto it = hooks->weights.find(name); it != hooks->weights.end()) ref.wq = &it->second;
    if (auto it = hooks->compensations.find(name); it != hooks->compensations.end()) {
      const auto& comp = it->second;
      if (comp.w_star.rank() != 2 || comp.w_star.dim(0) != ref.out || comp.w_star.dim(1) != ref.in) {
        throw ShapeError("compensation for '" + name + "' does not match the layer shape");
      }
      ref.comp = &comp;
      ref.comp_t = nd::transpose(comp.w_star);
    }
  }
  return ref;
}

NormRef make_norm(const Model& model, const std::string& name) {
  return {name, &model.param(name + ".gamma"), &model.param(name + ".beta")};
}

Prepared prepare(const Model& model, const QuantHooks* hooks) {
  if (hooks) {
    for (const auto& [site, q] : hooks->activations) {
      if (!model.has_site(site)) throw PreconditionError("unknown quantization site '" + site + "'");
    }
    for (const auto& [layer, q] : hooks->weights) {
      if (!model.has_linear(layer)) throw PreconditionError("unknown linear layer '" + layer + "'");
    }
    for (const auto& [layer, c] : hooks->compensations) {
      if (!model.has_linear(layer)) throw PreconditionError("unknown linear layer '" + layer + "'");
    }
  }
  Prepared p;
  p.model = &model;
  p.cfg = model.config();
  p.patch = make_layer(model, hooks, "patch_embed");
  p.head = make_layer(model, hooks, "head");
  p.s_patch = make_site(input_site("patch_embed"), hooks);
  p.s_head = make_site(input_site("head"), hooks);
  p.pos = &model.param("pos_embed");
  p.lnf = make_norm(model, "ln_final");
  for (std::size_t i = 0; i < p.cfg.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    BlockRef br;
    br.ln1 = make_norm(model, b + ".ln1");
    br.ln2 = make_norm(model, b + ".ln2");
    br.qkv = make_layer(model, hooks, b + ".qkv");
    br.proj = make_layer(model, hooks, b + ".proj");
    br.fc1 = make_layer(model, hooks, b + ".fc1");
    br.fc2 = make_layer(model, hooks, b + ".fc2");
    br.s_qkv = make_site(input_site(b + ".qkv"), hooks);
    br.s_q = make_site(b + ".attn.q", hooks);
    br.s_k = make_site(b + ".attn.k", hooks);
    br.s_p = make_site(b + ".attn.p", hooks);
    br.s_v = make_site(b + ".attn.v", hooks);
    br.s_proj = make_site(input_site(b + ".proj"), hooks);
    br.s_fc1 = make_site(input_site(b + ".fc1"), hooks);
    br.s_fc2 = make_site(input_site(b + ".fc2"), hooks);
    p.blocks.push_back(std::move(br));
  }
  return p;
}

// ---------------------------------------------------------------- forward

struct Taps {
  const SiteTap* site = nullptr;
  const LayerTap* layer = nullptr;
};

void apply_site(const SiteRef& ref, Site& s, std::size_t rows, std::size_t cols, const Taps& taps) {
  if (taps.site && *taps.site) (*taps.site)(ref.name, s.raw, rows, cols);
  if (!ref.q) {
    s.quantized.clear();
    return;
  }
  s.quantized.resize(s.raw.size());
  quant::fake_quantize_into(s.raw, rows, cols, ref.q->state.scale.values(), ref.q->config,
                            s.quantized);
}

// y[rows x out] = x W^T + b (+ x W*^T + b*)
void linear_forward(const LayerRef& L, const Vec& x, std::size_t rows, Vec& y, const Taps& taps) {
  y.assign(rows * L.out, 0.0);
  k::gemm_nn(x, L.wt.values(), y, rows, L.in, L.out, false);
  const auto b = L.bias->values();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < L.out; ++c) y[r * L.out + c] += b[c];
  if (taps.layer && *taps.layer) (*taps.layer)(L.name, x, y, rows);
  if (L.comp) {
    k::gemm_nn(x, L.comp_t.values(), y, rows, L.in, L.out, true);
    if (L.comp->augmented_bias) {
      const auto cb = L.comp->augmented_bias->values();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < L.out; ++c) y[r * L.out + c] += cb[c];
    }
  }
}

void layer_norm(const NormRef& N, const Vec& x, std::size_t rows, std::size_t d, NormCache& cache,
                Vec& y) {
  cache.xhat.resize(rows * d);
  cache.rstd.resize(rows);
  y.resize(rows * d);
  const auto g = N.gamma->values();
  const auto b = N.beta->values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.rstd[r] = rstd;
    for (std::size_t c = 0; c < d; ++c) {
      const double xh = (xr[c] - mean) * rstd;
      cache.xhat[r * d + c] = xh;
      y[r * d + c] = g[c] * xh + b[c];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

void patchify(const ModelConfig& cfg, const double* image, Vec& out) {
  const std::size_t ps = cfg.patch_size;
  const std::size_t grid = cfg.grid();
  const std::size_t hw = cfg.image_size;
  const std::size_t pd = cfg.patch_dim();
  out.resize(cfg.tokens() * pd);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      double* dst = out.data() + (gy * grid + gx) * pd;
      std::size_t idx = 0;
      for (std::size_t c = 0; c < cfg.in_channels; ++c)
        for (std::size_t dy = 0; dy < ps; ++dy)
          for (std::size_t dx = 0; dx < ps; ++dx)
            dst[idx++] = image[(c * hw + gy * ps + dy) * hw + gx * ps + dx];
    }
  }
}

void forward_sample(const Prepared& P, const double* image, SampleCache& cache, double* logits,
                    double* features, const Taps& taps) {
  const ModelConfig& cfg = P.cfg;
  const std::size_t T = cfg.tokens();
  const std::size_t d = cfg.embed_dim;
  const std::size_t H = cfg.heads;
  const std::size_t hd = cfg.head_dim();
  const std::size_t hid = cfg.hidden_dim();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  patchify(cfg, image, cache.patches.raw);
  apply_site(P.s_patch, cache.patches, T, cfg.patch_dim(), taps);
  Vec x;
  linear_forward(P.patch, cache.patches.used(), T, x, taps);
  const auto pos = P.pos->values();
  for (std::size_t i = 0; i < T * d; ++i) x[i] += pos[i];

  cache.blocks.resize(cfg.depth);
  Vec tmp, qkv, scores(T);
  for (std::size_t bi = 0; bi < cfg.depth; ++bi) {
    const BlockRef& B = P.blocks[bi];
    BlockCache& C = cache.blocks[bi];

    layer_norm(B.ln1, x, T, d, C.ln1, C.a1.raw);
    apply_site(B.s_qkv, C.a1, T, d, taps);
    linear_forward(B.qkv, C.a1.used(), T, qkv, taps);
    C.q.raw.resize(T * d);
    C.k.raw.resize(T * d);
    C.v.raw.resize(T * d);
    for (std::size_t t = 0; t < T; ++t) {
      std::copy_n(qkv.data() + t * 3 * d, d, C.q.raw.data() + t * d);
      std::copy_n(qkv.data() + t * 3 * d + d, d, C.k.raw.data() + t * d);
      std::copy_n(qkv.data() + t * 3 * d + 2 * d, d, C.v.raw.data() + t * d);
    }
    apply_site(B.s_q, C.q, T, d, taps);
    apply_site(B.s_k, C.k, T, d, taps);
    apply_site(B.s_v, C.v, T, d, taps);
    const Vec& Q = C.q.used();
    const Vec& K = C.k.used();
    const Vec& V = C.v.used();

    C.p.raw.resize(H * T * T);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = Q.data() + i * d + h * hd;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < T; ++j) {
          const double* kj = K.data() + j * d + h * hd;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
          scores[j] = s * inv_sqrt_hd;
          mx = std::max(mx, scores[j]);
        }
        double sum = 0.0;
        double* prow = C.p.raw.data() + (h * T + i) * T;
        for (std::size_t j = 0; j < T; ++j) {
          prow[j] = std::exp(scores[j] - mx);
          sum += prow[j];
        }
        for (std::size_t j = 0; j < T; ++j) prow[j] /= sum;
      }
    }
    apply_site(B.s_p, C.p, H * T, T, taps);
    const Vec& Pm = C.p.used();

    C.o.raw.assign(T * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        double* oi = C.o.raw.data() + i * d + h * hd;
        const double* prow = Pm.data() + (h * T + i) * T;
        for (std::size_t j = 0; j < T; ++j) {
          const double pij = prow[j];
          const double* vj = V.data() + j * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) oi[c] += pij * vj[c];
        }
      }
    }
    apply_site(B.s_proj, C.o, T, d, taps);
    linear_forward(B.proj, C.o.used(), T, tmp, taps);
    for (std::size_t i = 0; i < T * d; ++i) x[i] += tmp[i];

    layer_norm(B.ln2, x, T, d, C.ln2, C.a2.raw);
    apply_site(B.s_fc1, C.a2, T, d, taps);
    linear_forward(B.fc1, C.a2.used(), T, C.u, taps);
    C.g.raw.resize(T * hid);
    for (std::size_t i = 0; i < T * hid; ++i) C.g.raw[i] = gelu(C.u[i]);
    apply_site(B.s_fc2, C.g, T, hid, taps);
    linear_forward(B.fc2, C.g.used(), T, tmp, taps);
    for (std::size_t i = 0; i < T * d; ++i) x[i] += tmp[i];
  }

  Vec z;
  layer_norm(P.lnf, x, T, d, cache.lnf, z);
  cache.feat.raw.assign(d, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c) cache.feat.raw[c] += z[t * d + c];
  for (double& v : cache.feat.raw) v /= static_cast<double>(T);
  std::copy(cache.feat.raw.begin(), cache.feat.raw.end(), features);
  apply_site(P.s_head, cache.feat, 1, d, taps);
  Vec out;
  linear_forward(P.head, cache.feat.used(), 1, out, taps);
  std::copy(out.begin(), out.end(), logits);
}

// --------------------------------------------------------------- backward

// dL/d(raw) from dL/d(used) at a site; adds the LSQ scale gradient.
void site_backward(const SiteRef& ref, const Site& s, std::size_t rows, std::size_t cols,
                   const Vec& d_used, Vec& d_raw, Gradients& g) {
  if (!ref.q) {
    d_raw = d_used;
    return;
  }
  d_raw.resize(d_used.size());
  std::span<double> gs;
  if (ref.wants_scale_grad()) {
    auto& t = g.act_scales[ref.name];
    if (t.empty()) t = Tensor(ref.q->state.scale.shape());
    gs = t.values();
  }
  quant::quantize_backward(s.raw, d_used, rows, cols, ref.q->state.scale.values(), ref.q->config,
                           d_raw, gs);
}

// Accumulates dW_eff, db; writes dx when requested.
void linear_backward(const LayerRef& L, const Vec& x, const Vec& dy, std::size_t rows, Vec* dx,
                     Gradients& g) {
  auto& dw = g.params.at(L.name + ".weight");
  auto& db = g.params.at(L.name + ".bias");
  k::gemm_tn(dy, x, dw.values(), L.out, rows, L.in, true);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < L.out; ++c) db[c] += dy[r * L.out + c];
  if (!dx) return;
  dx->assign(rows * L.in, 0.0);
  k::gemm_nn(dy, L.w.values(), *dx, rows, L.out, L.in, false);
  if (L.comp) k::gemm_nn(dy, L.comp->w_star.values(), *dx, rows, L.out, L.in, true);
}

// dx += LN backward of dy.
void layer_norm_backward(const NormRef& N, const NormCache& cache, const Vec& dy, std::size_t rows,
                         std::size_t d, Vec& dx, Gradients& g) {
  auto& dgamma = g.params.at(N.name + ".gamma");
  auto& dbeta = g.params.at(N.name + ".beta");
  const auto gamma = N.gamma->values();
  Vec dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      dgamma[c] += dy[i] * cache.xhat[i];
      dbeta[c] += dy[i];
      dxhat[c] = dy[i] * gamma[c];
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * cache.xhat[i];
    }
    mean_d /= static_cast<double>(d);
    mean_dx /= static_cast<double>(d);
    const double rstd = cache.rstd[r];
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      dx[i] += rstd * (dxhat[c] - mean_d - cache.xhat[i] * mean_dx);
    }
  }
}

void backward_sample(const Prepared& P, const SampleCache& C, const double* dlogits,
                     const double* dfeat_extra, Gradients& g) {
  const ModelConfig& cfg = P.cfg;
  const std::size_t T = cfg.tokens();
  const std::size_t d = cfg.embed_dim;
  const std::size_t H = cfg.heads;
  const std::size_t hd = cfg.head_dim();
  const std::size_t hid = cfg.hidden_dim();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  Vec dy(dlogits, dlogits + cfg.num_classes);
  Vec dfeat_used, dfeat;
  linear_backward(P.head, C.feat.used(), dy, 1, &dfeat_used, g);
  site_backward(P.s_head, C.feat, 1, d, dfeat_used, dfeat, g);
  if (dfeat_extra) {
    for (std::size_t c = 0; c < d; ++c) dfeat[c] += dfeat_extra[c];
  }

  Vec dz(T * d);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c) dz[t * d + c] = dfeat[c] / static_cast<double>(T);
  Vec dx(T * d, 0.0);
  layer_norm_backward(P.lnf, C.lnf, dz, T, d, dx, g);

  Vec d_used, d_raw, dh, dtmp;
  for (std::size_t bi = cfg.depth; bi-- > 0;) {
    const BlockRef& B = P.blocks[bi];
    const BlockCache& BC = C.blocks[bi];

    // MLP branch: x_out = x_mid + fc2(q(gelu(fc1(q(ln2(x_mid))))))
    linear_backward(B.fc2, BC.g.used(), dx, T, &d_used, g);
    site_backward(B.s_fc2, BC.g, T, hid, d_used, d_raw, g);
    for (std::size_t i = 0; i < T * hid; ++i) d_raw[i] *= gelu_grad(BC.u[i]);
    linear_backward(B.fc1, BC.a2.used(), d_raw, T, &d_used, g);
    site_backward(B.s_fc1, BC.a2, T, d, d_used, dh, g);
    layer_norm_backward(B.ln2, BC.ln2, dh, T, d, dx, g);

    // Attention branch: x_mid = x_in + proj(q(attn(q(ln1(x_in)))))
    linear_backward(B.proj, BC.o.used(), dx, T, &d_used, g);
    Vec d_o;
    site_backward(B.s_proj, BC.o, T, d, d_used, d_o, g);

    const Vec& Q = BC.q.used();
    const Vec& K = BC.k.used();
    const Vec& V = BC.v.used();
    const Vec& Pu = BC.p.used();
    Vec dP_used(H * T * T), dQ(T * d, 0.0), dK(T * d, 0.0), dV(T * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        const double* doi = d_o.data() + i * d + h * hd;
        const double* prow = Pu.data() + (h * T + i) * T;
        double* dprow = dP_used.data() + (h * T + i) * T;
        for (std::size_t j = 0; j < T; ++j) {
          const double* vj = V.data() + j * d + h * hd;
          double* dvj = dV.data() + j * d + h * hd;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) {
            s += doi[c] * vj[c];
            dvj[c] += prow[j] * doi[c];
          }
          dprow[j] = s;
        }
      }
    }
    Vec dP_raw;
    site_backward(B.s_p, BC.p, H * T, T, dP_used, dP_raw, g);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        const double* prow = BC.p.raw.data() + (h * T + i) * T;
        const double* dprow = dP_raw.data() + (h * T + i) * T;
        double dot = 0.0;
        for (std::size_t j = 0; j < T; ++j) dot += prow[j] * dprow[j];
        const double* qi = Q.data() + i * d + h * hd;
        double* dqi = dQ.data() + i * d + h * hd;
        for (std::size_t j = 0; j < T; ++j) {
          const double ds = prow[j] * (dprow[j] - dot) * inv_sqrt_hd;
          if (ds == 0.0) continue;
          const double* kj = K.data() + j * d + h * hd;
          double* dkj = dK.data() + j * d + h * hd;
          for (std::size_t c = 0; c < hd; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
          }
        }
      }
    }
    Vec dq_raw, dk_raw, dv_raw;
    site_backward(B.s_q, BC.q, T, d, dQ, dq_raw, g);
    site_backward(B.s_k, BC.k, T, d, dK, dk_raw, g);
    site_backward(B.s_v, BC.v, T, d, dV, dv_raw, g);
    Vec dqkv(T * 3 * d);
    for (std::size_t t = 0; t < T; ++t) {
      std::copy_n(dq_raw.data() + t * d, d, dqkv.data() + t * 3 * d);
      std::copy_n(dk_raw.data() + t * d, d, dqkv.data() + t * 3 * d + d);
      std::copy_n(dv_raw.data() + t * d, d, dqkv.data() + t * 3 * d + 2 * d);
    }
    linear_backward(B.qkv, BC.a1.used(), dqkv, T, &d_used, g);
    site_backward(B.s_qkv, BC.a1, T, d, d_used, dh, g);
    layer_norm_backward(B.ln1, BC.ln1, dh, T, d, dx, g);
  }

  auto& dpos = g.params.at("pos_embed");
  for (std::size_t i = 0; i < T * d; ++i) dpos[i] += dx[i];
  const bool need_patch_dx = P.s_patch.wants_scale_grad();
  linear_backward(P.patch, C.patches.used(), dx, T, need_patch_dx ? &d_used : nullptr, g);
  if (need_patch_dx) site_backward(P.s_patch, C.patches, T, cfg.patch_dim(), d_used, d_raw, g);
}

Gradients zero_gradients(const Model& model) {
  Gradients g;
  for (const auto& [name, t] : model.params()) g.params.emplace(name, Tensor(t.shape()));
  return g;
}

void accumulate(Gradients& into, const Gradients& from) {
  for (auto& [name, t] : into.params) {
    const Tensor& src = from.params.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += src[i];
  }
  for (const auto& [name, t] : from.act_scales) {
    auto& dst = into.act_scales[name];
    if (dst.empty()) dst = Tensor(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) dst[i] += t[i];
  }
}

void check_batch(const ModelConfig& cfg, const Tensor& batch) {
  const nd::Shape expected{cfg.in_channels, cfg.image_size, cfg.image_size};
  if (batch.rank() != 4 || nd::Shape(batch.shape().begin() + 1, batch.shape().end()) != expected) {
    throw ShapeError("batch shape " + nd::shape_string(batch.shape()) + " does not match [N x " +
                     std::to_string(cfg.in_channels) + " x " + std::to_string(cfg.image_size) +
                     " x " + std::to_string(cfg.image_size) + "]");
  }
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& batch, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config();
  check_batch(cfg, batch);
  const std::size_t n = batch.dim(0);
  const std::size_t image_len = cfg.in_channels * cfg.image_size * cfg.image_size;

  auto tape = std::make_shared<Tape>();
  tape->prep = prepare(model, options.hooks);
  tape->samples.resize(n);

  ForwardResult result{Tensor({n, cfg.num_classes}), Tensor({n, cfg.embed_dim}), nullptr};
  const Taps taps{options.site_tap ? &options.site_tap : nullptr,
                  options.layer_tap ? &options.layer_tap : nullptr};
  auto run = [&](std::size_t i) {
    SampleCache local;
    SampleCache& cache = options.record ? tape->samples[i] : local;
    forward_sample(tape->prep, batch.data() + i * image_len, cache,
                   result.logits.data() + i * cfg.num_classes,
                   result.features.data() + i * cfg.embed_dim, taps);
  };
  if (taps.site || taps.layer) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    nd::parallel_for(n, run);
  }
  result.logits.require_finite("forward logits");
  result.features.require_finite("forward features");
  if (options.record) result.tape = std::move(tape);
  return result;
}

ForwardResult forward(const Model& model, const Tensor& batch, const QuantHooks* hooks,
                      bool record) {
  ForwardOptions options;
  options.hooks = hooks;
  options.record = record;
  return forward(model, batch, options);
}

Gradients backward(Tape& tape, const Tensor& logits_grad, const Tensor* feature_grad) {
  if (tape.consumed) throw PreconditionError("tape has already been consumed by backward");
  const Prepared& P = tape.prep;
  const std::size_t n = tape.samples.size();
  if (logits_grad.shape() != nd::Shape{n, P.cfg.num_classes}) {
    throw ShapeError("logits gradient shape " + nd::shape_string(logits_grad.shape()) +
                     " does not match the recorded batch");
  }
  if (feature_grad && feature_grad->shape() != nd::Shape{n, P.cfg.embed_dim}) {
    throw ShapeError("feature gradient shape " + nd::shape_string(feature_grad->shape()) +
                     " does not match the recorded batch");
  }
  logits_grad.require_finite("logits gradient");
  if (feature_grad) feature_grad->require_finite("feature gradient");
  tape.consumed = true;

  const std::size_t chunks = (n + kGradChunk - 1) / kGradChunk;
  std::vector<Gradients> partial(chunks);
  nd::parallel_for(chunks, [&](std::size_t ci) {
    Gradients g = zero_gradients(*P.model);
    const std::size_t end = std::min(n, (ci + 1) * kGradChunk);
    for (std::size_t i = ci * kGradChunk; i < end; ++i) {
      backward_sample(P, tape.samples[i], logits_grad.data() + i * P.cfg.num_classes,
                      feature_grad ? feature_grad->data() + i * P.cfg.embed_dim : nullptr, g);
    }
    partial[ci] = std::move(g);
  });

  Gradients total = zero_gradients(*P.model);
  for (const auto& g : partial) accumulate(total, g);

  // The accumulated linear gradients are with respect to the effective
  // (possibly fake-quantized) weights; route them to the latent weights.
  std::vector<const LayerRef*> layers{&P.patch};
  for (const auto& B : P.blocks) {
    for (const LayerRef* L : {&B.qkv, &B.proj, &B.fc1, &B.fc2}) layers.push_back(L);
  }
  layers.push_back(&P.head);
  for (const LayerRef* L : layers) {
    if (!L->wq) continue;
    Tensor& dw = total.params.at(L->name + ".weight");
    const Tensor& w = P.model->param(L->name + ".weight");
    Tensor dlatent(dw.shape());
    std::span<double> gs;
    const bool wants = L->wq->state.learnable && !L->wq->state.frozen;
    if (wants) {
      total.weight_scales[L->name] = Tensor(L->wq->state.scale.shape());
      gs = total.weight_scales[L->name].values();
    }
    quant::quantize_backward(w.values(), dw.values(), L->out, L->in, L->wq->state.scale.values(),
                             L->wq->config, dlatent.values(), gs);
    dw = std::move(dlatent);
  }
  tape.samples.clear();
  tape.samples.shrink_to_fit();
  return total;
}

}  // namespace gplq::vit
