#pragma once

// A desk-scale decoder-only transformer over byte tokens.
//
// Parameters live in one flat double vector; ParamLayout names the offsets.
// The input at position t is the embedding of token t-1 (a learned BOS
// vector at t = 0) plus a position embedding, so every token of a text is
// scored. Texts longer than the context are scored in non-overlapping
// windows, each restarting from BOS, and the window scores are summed.
//
// Sign conventions: GradLogProb returns the gradient of the log-likelihood
// (ascent direction). DistillGrad and AdamWStep work with loss gradients
// (descent direction). SgdStep ascends: theta' = theta + lr * g.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mixalign/common.hpp"
#include "mixalign/corpus.hpp"

namespace mixalign {

struct ModelConfig {
  int vocab = 256;
  int layers = 2;
  int heads = 2;
  int embed_dim = 64;
  int context_length = 256;

  void Validate() const {
    if (vocab < 2 || vocab > 256) throw ConfigError("model.vocab must be in [2, 256]");
    if (layers < 0) throw ConfigError("model.layers must be >= 0");
    if (heads < 1 || embed_dim < 1 || embed_dim % heads != 0)
      throw ConfigError("model.embed_dim must be a positive multiple of model.heads");
    if (context_length < 2) throw ConfigError("model.context_length must be >= 2");
  }

  // Closed form: token, position and BOS embeddings, 12D^2 + 13D per block,
  // final layer norm, output head with bias.
  std::size_t ParamCount() const {
    const std::size_t v = static_cast<std::size_t>(vocab);
    const std::size_t d = static_cast<std::size_t>(embed_dim);
    const std::size_t c = static_cast<std::size_t>(context_length);
    const std::size_t l = static_cast<std::size_t>(layers);
    return v * d + c * d + d + l * (12 * d * d + 13 * d) + 2 * d + d * v + v;
  }

  nlohmann::ordered_json ToJson() const {
    nlohmann::ordered_json j;
    j["vocab"] = vocab;
    j["layers"] = layers;
    j["heads"] = heads;
    j["embed_dim"] = embed_dim;
    j["context_length"] = context_length;
    return j;
  }

  static ModelConfig FromJson(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab = j.at("vocab").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.context_length = j.at("context_length").get<int>();
    c.Validate();
    return c;
  }

  std::string Hash() const { return DigestHex(ToJson().dump()); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct BlockOffsets {
  std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_proj, b_proj;
  std::size_t ln2_g, ln2_b, w_fc, b_fc, w_out, b_out;
};

struct ParamLayout {
  std::size_t wte = 0, wpe = 0, bos = 0;
  std::vector<BlockOffsets> blocks;
  std::size_t lnf_g = 0, lnf_b = 0, w_head = 0, b_head = 0;
  std::size_t total = 0;

  explicit ParamLayout(const ModelConfig& cfg) {
    const std::size_t v = static_cast<std::size_t>(cfg.vocab);
    const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
    const std::size_t c = static_cast<std::size_t>(cfg.context_length);
    std::size_t off = 0;
    auto take = [&off](std::size_t n) {
      std::size_t at = off;
      off += n;
      return at;
    };
    wte = take(v * d);
    wpe = take(c * d);
    bos = take(d);
    for (int i = 0; i < cfg.layers; ++i) {
      BlockOffsets b{};
      b.ln1_g = take(d);
      b.ln1_b = take(d);
      b.w_qkv = take(d * 3 * d);
      b.b_qkv = take(3 * d);
      b.w_proj = take(d * d);
      b.b_proj = take(d);
      b.ln2_g = take(d);
      b.ln2_b = take(d);
      b.w_fc = take(d * 4 * d);
      b.b_fc = take(4 * d);
      b.w_out = take(4 * d * d);
      b.b_out = take(d);
      blocks.push_back(b);
    }
    lnf_g = take(d);
    lnf_b = take(d);
    w_head = take(d * v);
    b_head = take(v);
    total = off;
  }

  // 1 for matrices and embeddings (weight-decayed), 0 for biases and gains.
  std::vector<std::uint8_t> DecayMask(const ModelConfig& cfg) const {
    const std::size_t v = static_cast<std::size_t>(cfg.vocab);
    const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
    const std::size_t c = static_cast<std::size_t>(cfg.context_length);
    std::vector<std::uint8_t> mask(total, 0);
    auto mark = [&mask](std::size_t at, std::size_t n) {
      std::fill(mask.begin() + static_cast<std::ptrdiff_t>(at),
                mask.begin() + static_cast<std::ptrdiff_t>(at + n), 1);
    };
    mark(wte, v * d);
    mark(wpe, c * d);
    for (const auto& b : blocks) {
      mark(b.w_qkv, 3 * d * d);
      mark(b.w_proj, d * d);
      mark(b.w_fc, 4 * d * d);
      mark(b.w_out, 4 * d * d);
    }
    mark(w_head, d * v);
    return mask;
  }
};

struct OptimizerState {
  std::vector<double> m;  // AdamW first moment; empty under SGD
  std::vector<double> v;  // AdamW second moment
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct ModelCheckpoint {
  ModelConfig config;
  std::vector<double> params;
  std::int64_t step = 0;
  OptimizerState opt;
  std::string rng_state;  // serialized training RNG, empty if none
  std::string config_hash;

  std::size_t size() const { return params.size(); }

  void Validate() const {
    config.Validate();
    Require(params.size() == config.ParamCount(), "checkpoint: parameter count mismatch");
    Require(AllFinite(params), "checkpoint: non-finite parameter");
    Require(step >= 0, "checkpoint: negative step");
    Require(config_hash == config.Hash(), "checkpoint: config digest mismatch");
    Require(opt.m.size() == opt.v.size() && (opt.m.empty() || opt.m.size() == params.size()),
            "checkpoint: optimizer state size mismatch");
  }

  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

inline std::string SerializeRng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng DeserializeRng(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw InputError("malformed RNG state");
  return rng;
}

/// GPT-2 style init: N(0, 0.02) weights, residual projections scaled by
/// 1/sqrt(2 * layers), unit gains, zero biases.
inline ModelCheckpoint InitModel(const ModelConfig& config, std::uint64_t seed) {
  config.Validate();
  ParamLayout lay(config);
  const std::size_t v = static_cast<std::size_t>(config.vocab);
  const std::size_t d = static_cast<std::size_t>(config.embed_dim);
  const std::size_t c = static_cast<std::size_t>(config.context_length);
  ModelCheckpoint ck;
  ck.config = config;
  ck.config_hash = config.Hash();
  ck.params.assign(lay.total, 0.0);
  Rng rng(seed);
  auto normal = [&](std::size_t at, std::size_t n, double sd) {
    for (std::size_t i = 0; i < n; ++i) {
      std::normal_distribution<double> nd(0.0, sd);
      ck.params[at + i] = nd(rng);
    }
  };
  auto ones = [&](std::size_t at, std::size_t n) {
    std::fill(ck.params.begin() + static_cast<std::ptrdiff_t>(at),
              ck.params.begin() + static_cast<std::ptrdiff_t>(at + n), 1.0);
  };
  const double resid_sd = 0.02 / std::sqrt(2.0 * std::max(config.layers, 1));
  normal(lay.wte, v * d, 0.02);
  normal(lay.wpe, c * d, 0.02);
  normal(lay.bos, d, 0.02);
  for (const auto& b : lay.blocks) {
    ones(b.ln1_g, d);
    normal(b.w_qkv, 3 * d * d, 0.02);
    normal(b.w_proj, d * d, resid_sd);
    ones(b.ln2_g, d);
    normal(b.w_fc, 4 * d * d, 0.02);
    normal(b.w_out, 4 * d * d, resid_sd);
  }
  ones(lay.lnf_g, d);
  normal(lay.w_head, d * v, 0.02);
  return ck;
}

namespace detail {

inline constexpr double kLnEps = 1e-5;

// y[T x O] = x[T x I] * W[I x O] + b
inline void LinearForward(const double* x, const double* w, const double* b, double* y,
                          std::size_t t_len, std::size_t in, std::size_t out) {
  for (std::size_t t = 0; t < t_len; ++t) {
    double* yr = y + t * out;
    for (std::size_t o = 0; o < out; ++o) yr[o] = b[o];
    const double* xr = x + t * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      const double* wr = w + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wr[o];
    }
  }
}

// dx += dy W^T ; dW += x^T dy ; db += colsum(dy). dx may be null.
inline void LinearBackward(const double* x, const double* w, const double* dy, double* dx,
                           double* dw, double* db, std::size_t t_len, std::size_t in,
                           std::size_t out) {
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* dyr = dy + t * out;
    const double* xr = x + t * in;
    for (std::size_t o = 0; o < out; ++o) db[o] += dyr[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double* wr = w + i * out;
      double* dwr = dw + i * out;
      const double xi = xr[i];
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        acc += dyr[o] * wr[o];
        dwr[o] += xi * dyr[o];
      }
      if (dx) dx[t * in + i] += acc;
    }
  }
}

inline void LayerNormForward(const double* x, const double* g, const double* b, double* y,
                             double* mean, double* rstd, std::size_t t_len, std::size_t d) {
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* xr = x + t * d;
    double m = 0.0;
    for (std::size_t i = 0; i < d; ++i) m += xr[i];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (xr[i] - m) * (xr[i] - m);
    var /= static_cast<double>(d);
    const double r = 1.0 / std::sqrt(var + kLnEps);
    mean[t] = m;
    rstd[t] = r;
    for (std::size_t i = 0; i < d; ++i) y[t * d + i] = (xr[i] - m) * r * g[i] + b[i];
  }
}

inline void LayerNormBackward(const double* x, const double* g, const double* mean,
                              const double* rstd, const double* dy, double* dx, double* dg,
                              double* db, std::size_t t_len, std::size_t d) {
  for (std::size_t t = 0; t < t_len; ++t) {
    const double* xr = x + t * d;
    const double* dyr = dy + t * d;
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double xhat = (xr[i] - mean[t]) * rstd[t];
      const double dxhat = dyr[i] * g[i];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      dg[i] += dyr[i] * xhat;
      db[i] += dyr[i];
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double xhat = (xr[i] - mean[t]) * rstd[t];
      const double dxhat = dyr[i] * g[i];
      dx[t * d + i] += rstd[t] * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
  }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double Gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}

inline double GeluGrad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

struct BlockCache {
  std::vector<double> x_in, a, ln1_mean, ln1_rstd, qkv, probs, att, h_mid, c, ln2_mean,
      ln2_rstd, f, gf;
};

/// Activations of one forward pass over a single window.
struct ForwardCache {
  std::size_t len = 0;
  std::vector<double> x0;
  std::vector<BlockCache> blocks;
  std::vector<double> h_final, lnf_out, lnf_mean, lnf_rstd;
  std::vector<double> logprobs;  // [T x V] log-softmax of the logits
};

inline void Forward(const ModelConfig& cfg, const ParamLayout& lay, const double* p,
                    std::span<const Token> tokens, ForwardCache& fc) {
  const std::size_t len = tokens.size();
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t v = static_cast<std::size_t>(cfg.vocab);
  const std::size_t nh = static_cast<std::size_t>(cfg.heads);
  const std::size_t hd = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  fc.len = len;
  fc.x0.assign(len * d, 0.0);
  for (std::size_t t = 0; t < len; ++t) {
    const double* e = t == 0 ? p + lay.bos : p + lay.wte + static_cast<std::size_t>(tokens[t - 1]) * d;
    const double* pe = p + lay.wpe + t * d;
    for (std::size_t i = 0; i < d; ++i) fc.x0[t * d + i] = e[i] + pe[i];
  }
  fc.blocks.resize(lay.blocks.size());
  std::vector<double> h = fc.x0;
  for (std::size_t l = 0; l < lay.blocks.size(); ++l) {
    const auto& o = lay.blocks[l];
    auto& bc = fc.blocks[l];
    bc.x_in = h;
    bc.a.assign(len * d, 0.0);
    bc.ln1_mean.assign(len, 0.0);
    bc.ln1_rstd.assign(len, 0.0);
    LayerNormForward(h.data(), p + o.ln1_g, p + o.ln1_b, bc.a.data(), bc.ln1_mean.data(),
                     bc.ln1_rstd.data(), len, d);
    bc.qkv.assign(len * 3 * d, 0.0);
    LinearForward(bc.a.data(), p + o.w_qkv, p + o.b_qkv, bc.qkv.data(), len, d, 3 * d);
    bc.probs.assign(nh * len * len, 0.0);
    bc.att.assign(len * d, 0.0);
    for (std::size_t hh = 0; hh < nh; ++hh) {
      for (std::size_t i = 0; i < len; ++i) {
        const double* q = bc.qkv.data() + i * 3 * d + hh * hd;
        double* pr = bc.probs.data() + (hh * len + i) * len;
        double mx = -kInf;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* k = bc.qkv.data() + j * 3 * d + d + hh * hd;
          double s = 0.0;
          for (std::size_t e = 0; e < hd; ++e) s += q[e] * k[e];
          pr[j] = s * scale;
          mx = std::max(mx, pr[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] = std::exp(pr[j] - mx);
          z += pr[j];
        }
        double* out = bc.att.data() + i * d + hh * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          pr[j] /= z;
          const double* vv = bc.qkv.data() + j * 3 * d + 2 * d + hh * hd;
          for (std::size_t e = 0; e < hd; ++e) out[e] += pr[j] * vv[e];
        }
      }
    }
    std::vector<double> y(len * d);
    LinearForward(bc.att.data(), p + o.w_proj, p + o.b_proj, y.data(), len, d, d);
    for (std::size_t i = 0; i < len * d; ++i) h[i] += y[i];
    bc.h_mid = h;
    bc.c.assign(len * d, 0.0);
    bc.ln2_mean.assign(len, 0.0);
    bc.ln2_rstd.assign(len, 0.0);
    LayerNormForward(h.data(), p + o.ln2_g, p + o.ln2_b, bc.c.data(), bc.ln2_mean.data(),
                     bc.ln2_rstd.data(), len, d);
    bc.f.assign(len * 4 * d, 0.0);
    LinearForward(bc.c.data(), p + o.w_fc, p + o.b_fc, bc.f.data(), len, d, 4 * d);
    bc.gf.resize(bc.f.size());
    for (std::size_t i = 0; i < bc.f.size(); ++i) bc.gf[i] = Gelu(bc.f[i]);
    LinearForward(bc.gf.data(), p + o.w_out, p + o.b_out, y.data(), len, 4 * d, d);
    for (std::size_t i = 0; i < len * d; ++i) h[i] += y[i];
  }
  fc.h_final = h;
  fc.lnf_out.assign(len * d, 0.0);
  fc.lnf_mean.assign(len, 0.0);
  fc.lnf_rstd.assign(len, 0.0);
  LayerNormForward(h.data(), p + lay.lnf_g, p + lay.lnf_b, fc.lnf_out.data(),
                   fc.lnf_mean.data(), fc.lnf_rstd.data(), len, d);
  fc.logprobs.assign(len * v, 0.0);
  LinearForward(fc.lnf_out.data(), p + lay.w_head, p + lay.b_head, fc.logprobs.data(), len, d,
                v);
  for (std::size_t t = 0; t < len; ++t) {
    double* r = fc.logprobs.data() + t * v;
    const double mx = *std::max_element(r, r + v);
    double z = 0.0;
    for (std::size_t i = 0; i < v; ++i) z += std::exp(r[i] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t i = 0; i < v; ++i) r[i] -= lz;
  }
}

/// Backpropagates dL/dlogits [T x V] and accumulates dL/dparams into grad.
inline void Backward(const ModelConfig& cfg, const ParamLayout& lay, const double* p,
                     std::span<const Token> tokens, const ForwardCache& fc,
                     const std::vector<double>& dlogits, double* g) {
  const std::size_t len = fc.len;
  const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
  const std::size_t v = static_cast<std::size_t>(cfg.vocab);
  const std::size_t nh = static_cast<std::size_t>(cfg.heads);
  const std::size_t hd = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> dln(len * d, 0.0);
  LinearBackward(fc.lnf_out.data(), p + lay.w_head, dlogits.data(), dln.data(), g + lay.w_head,
                 g + lay.b_head, len, d, v);
  std::vector<double> dh(len * d, 0.0);
  LayerNormBackward(fc.h_final.data(), p + lay.lnf_g, fc.lnf_mean.data(), fc.lnf_rstd.data(),
                    dln.data(), dh.data(), g + lay.lnf_g, g + lay.lnf_b, len, d);

  std::vector<double> tmp;
  for (std::size_t l = lay.blocks.size(); l-- > 0;) {
    const auto& o = lay.blocks[l];
    const auto& bc = fc.blocks[l];
    // MLP branch: h = h_mid + W_out gelu(W_fc LN2(h_mid))
    std::vector<double> dgf(len * 4 * d, 0.0);
    LinearBackward(bc.gf.data(), p + o.w_out, dh.data(), dgf.data(), g + o.w_out, g + o.b_out,
                   len, 4 * d, d);
    for (std::size_t i = 0; i < dgf.size(); ++i) dgf[i] *= GeluGrad(bc.f[i]);
    std::vector<double> dc(len * d, 0.0);
    LinearBackward(bc.c.data(), p + o.w_fc, dgf.data(), dc.data(), g + o.w_fc, g + o.b_fc, len,
                   d, 4 * d);
    LayerNormBackward(bc.h_mid.data(), p + o.ln2_g, bc.ln2_mean.data(), bc.ln2_rstd.data(),
                      dc.data(), dh.data(), g + o.ln2_g, g + o.ln2_b, len, d);
    // Attention branch: h_mid = x_in + W_proj attn(LN1(x_in))
    std::vector<double> datt(len * d, 0.0);
    LinearBackward(bc.att.data(), p + o.w_proj, dh.data(), datt.data(), g + o.w_proj,
                   g + o.b_proj, len, d, d);
    std::vector<double> dqkv(len * 3 * d, 0.0);
    tmp.assign(len, 0.0);
    for (std::size_t hh = 0; hh < nh; ++hh) {
      for (std::size_t i = 0; i < len; ++i) {
        const double* pr = bc.probs.data() + (hh * len + i) * len;
        const double* dout = datt.data() + i * d + hh * hd;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vv = bc.qkv.data() + j * 3 * d + 2 * d + hh * hd;
          double* dv = dqkv.data() + j * 3 * d + 2 * d + hh * hd;
          double dp = 0.0;
          for (std::size_t e = 0; e < hd; ++e) {
            dp += dout[e] * vv[e];
            dv[e] += pr[j] * dout[e];
          }
          tmp[j] = dp;
          dot += pr[j] * dp;
        }
        const double* q = bc.qkv.data() + i * 3 * d + hh * hd;
        double* dq = dqkv.data() + i * 3 * d + hh * hd;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = pr[j] * (tmp[j] - dot) * scale;
          const double* k = bc.qkv.data() + j * 3 * d + d + hh * hd;
          double* dk = dqkv.data() + j * 3 * d + d + hh * hd;
          for (std::size_t e = 0; e < hd; ++e) {
            dq[e] += ds * k[e];
            dk[e] += ds * q[e];
          }
        }
      }
    }
    std::vector<double> da(len * d, 0.0);
    LinearBackward(bc.a.data(), p + o.w_qkv, dqkv.data(), da.data(), g + o.w_qkv, g + o.b_qkv,
                   len, d, 3 * d);
    LayerNormBackward(bc.x_in.data(), p + o.ln1_g, bc.ln1_mean.data(), bc.ln1_rstd.data(),
                      da.data(), dh.data(), g + o.ln1_g, g + o.ln1_b, len, d);
  }
  for (std::size_t t = 0; t < len; ++t) {
    double* ge = t == 0 ? g + lay.bos : g + lay.wte + static_cast<std::size_t>(tokens[t - 1]) * d;
    double* gp = g + lay.wpe + t * d;
    for (std::size_t i = 0; i < d; ++i) {
      ge[i] += dh[t * d + i];
      gp[i] += dh[t * d + i];
    }
  }
}

inline void CheckTokens(const ModelConfig& cfg, std::span<const Token> tokens) {
  for (Token t : tokens)
    if (static_cast<int>(t) >= cfg.vocab)
      throw InputError("token " + std::to_string(static_cast<int>(t)) +
                       " is outside the model vocabulary of " + std::to_string(cfg.vocab));
}

template <class Fn>
void ForEachWindow(const ModelConfig& cfg, std::span<const Token> text, Fn&& fn) {
  const std::size_t c = static_cast<std::size_t>(cfg.context_length);
  for (std::size_t at = 0; at < text.size(); at += c)
    fn(text.subspan(at, std::min(c, text.size() - at)));
}

}  // namespace detail

struct LogProbResult {
  double total_ll = 0.0;  // nats
  std::uint64_t token_count = 0;
};

inline LogProbResult LogProb(const ModelConfig& cfg, std::span<const double> params,
                             std::span<const Token> text) {
  detail::CheckTokens(cfg, text);
  ParamLayout lay(cfg);
  Require(params.size() == lay.total, "LogProb: parameter count mismatch");
  const std::size_t v = static_cast<std::size_t>(cfg.vocab);
  detail::ForwardCache fc;
  LogProbResult r;
  detail::ForEachWindow(cfg, text, [&](std::span<const Token> w) {
    detail::Forward(cfg, lay, params.data(), w, fc);
    for (std::size_t t = 0; t < w.size(); ++t) r.total_ll += fc.logprobs[t * v + w[t]];
    r.token_count += w.size();
  });
  return r;
}

inline LogProbResult LogProb(const ModelCheckpoint& model, std::span<const Token> text) {
  return LogProb(model.config, model.params, text);
}

/// Adds weight * grad log p(text) into grad and returns log p(text).
inline double AccumulateLogProbGrad(const ModelConfig& cfg, std::span<const double> params,
                                    std::span<const Token> text, double weight,
                                    std::span<double> grad) {
  detail::CheckTokens(cfg, text);
  ParamLayout lay(cfg);
  Require(params.size() == lay.total && grad.size() == lay.total,
          "AccumulateLogProbGrad: size mismatch");
  const std::size_t v = static_cast<std::size_t>(cfg.vocab);
  detail::ForwardCache fc;
  std::vector<double> dlogits;
  double ll = 0.0;
  detail::ForEachWindow(cfg, text, [&](std::span<const Token> w) {
    detail::Forward(cfg, lay, params.data(), w, fc);
    dlogits.assign(w.size() * v, 0.0);
    for (std::size_t t = 0; t < w.size(); ++t) {
      ll += fc.logprobs[t * v + w[t]];
      // d log p(x_t) / d logits = onehot - softmax
      for (std::size_t i = 0; i < v; ++i) dlogits[t * v + i] = -weight * std::exp(fc.logprobs[t * v + i]);
      dlogits[t * v + w[t]] += weight;
    }
    detail::Backward(cfg, lay, params.data(), w, fc, dlogits, grad.data());
  });
  return ll;
}

struct GradResult {
  std::vector<double> gradient;
  double mean_ll = 0.0;  // mean log-likelihood per window, nats
};

/// Gradient of the batch-mean (per window) log-likelihood.
inline GradResult GradLogProb(const ModelCheckpoint& model, const TokenBatch& batch) {
  Require(!batch.sequences.empty(), "GradLogProb: empty batch");
  GradResult r;
  r.gradient.assign(model.params.size(), 0.0);
  const double w = 1.0 / static_cast<double>(batch.sequences.size());
  for (const auto& seq : batch.sequences) {
    Require(seq.size() <= static_cast<std::size_t>(model.config.context_length),
            "GradLogProb: window longer than the model context");
    r.mean_ll += w * AccumulateLogProbGrad(model.config, model.params, seq, w, r.gradient);
  }
  if (!std::isfinite(r.mean_ll) || !AllFinite(r.gradient))
    throw NumericalError("non-finite forward/backward pass at step " +
                         std::to_string(model.step) + " on domain " +
                         std::to_string(batch.domain_index));
  return r;
}

enum class LossKind { kCrossEntropy, kDistillKl, kDistillKlPlusCe };

struct LossSpec {
  LossKind kind = LossKind::kCrossEntropy;
  const ModelCheckpoint* teacher = nullptr;

  void Validate(const ModelConfig& student) const {
    const bool distill = kind != LossKind::kCrossEntropy;
    Require(distill == (teacher != nullptr),
            "LossSpec: a teacher is required exactly for distillation losses");
    if (teacher)
      Require(teacher->config.vocab == student.vocab,
              "LossSpec: teacher vocabulary " + std::to_string(teacher->config.vocab) +
                  " differs from student vocabulary " + std::to_string(student.vocab) +
                  "; distillation needs a shared tokenizer");
  }
};

struct DistillResult {
  std::vector<double> gradient;  // of the loss (descent direction)
  double kl = 0.0;               // mean per token, nats
  double ce = 0.0;               // mean per token, nats
  double loss = 0.0;
};

/// Token-mean KL(teacher || student), optionally plus token-mean cross
/// entropy on the batch tokens.
inline DistillResult DistillGrad(const ModelCheckpoint& student, const ModelCheckpoint& teacher,
                                 const TokenBatch& batch, const LossSpec& loss) {
  Require(loss.kind != LossKind::kCrossEntropy, "DistillGrad: loss kind is not distillation");
  Require(teacher.config.vocab == student.config.vocab,
          "DistillGrad: teacher vocabulary " + std::to_string(teacher.config.vocab) +
              " differs from student vocabulary " + std::to_string(student.config.vocab) +
              "; distillation needs a shared tokenizer");
  const bool with_ce = loss.kind == LossKind::kDistillKlPlusCe;
  const ModelConfig& cfg = student.config;
  ParamLayout lay(cfg), tlay(teacher.config);
  const std::size_t v = static_cast<std::size_t>(cfg.vocab);
  std::uint64_t ntok = 0;
  for (const auto& s : batch.sequences) ntok += s.size();
  Require(ntok > 0, "DistillGrad: empty batch");
  const double inv = 1.0 / static_cast<double>(ntok);

  DistillResult r;
  r.gradient.assign(student.params.size(), 0.0);
  detail::ForwardCache fs, ft;
  std::vector<double> dlogits;
  for (const auto& seq : batch.sequences) {
    detail::CheckTokens(cfg, seq);
    detail::ForEachWindow(cfg, seq, [&](std::span<const Token> w) {
      detail::Forward(cfg, lay, student.params.data(), w, fs);
      Require(w.size() <= static_cast<std::size_t>(teacher.config.context_length),
              "DistillGrad: window exceeds teacher context");
      detail::Forward(teacher.config, tlay, teacher.params.data(), w, ft);
      dlogits.assign(w.size() * v, 0.0);
      for (std::size_t t = 0; t < w.size(); ++t) {
        const double* ls = fs.logprobs.data() + t * v;
        const double* lt = ft.logprobs.data() + t * v;
        double kl = 0.0;
        for (std::size_t i = 0; i < v; ++i) {
          const double pt = std::exp(lt[i]);
          const double ps = std::exp(ls[i]);
          if (pt > 0.0) kl += pt * (lt[i] - ls[i]);
          // d KL / d student logits = p_student - p_teacher
          dlogits[t * v + i] = inv * (ps - pt);
          if (with_ce) dlogits[t * v + i] += inv * ps;
        }
        if (with_ce) dlogits[t * v + w[t]] -= inv;
        r.kl += inv * kl;
        r.ce -= inv * ls[w[t]];
      }
      detail::Backward(cfg, lay, student.params.data(), w, fs, dlogits, r.gradient.data());
    });
  }
  r.loss = r.kl + (with_ce ? r.ce : 0.0);
  if (!std::isfinite(r.loss) || !AllFinite(r.gradient))
    throw NumericalError("non-finite distillation pass at step " + std::to_string(student.step) +
                         " on domain " + std::to_string(batch.domain_index));
  return r;
}

/// SGD ascent on log-likelihood: theta' = theta + lr * gradient.
inline ModelCheckpoint SgdStep(const ModelCheckpoint& model, std::span<const double> gradient,
                               double lr) {
  Require(gradient.size() == model.params.size(), "SgdStep: dimension mismatch");
  Require(lr >= 0.0 && std::isfinite(lr), "SgdStep: learning rate must be finite and >= 0");
  ModelCheckpoint out = model;
  for (std::size_t i = 0; i < out.params.size(); ++i) out.params[i] += lr * gradient[i];
  out.step += 1;
  return out;
}

struct AdamWParams {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// Decoupled-weight-decay Adam on a loss gradient; updates the model in place.
inline void AdamWStepInPlace(ModelCheckpoint& model, std::span<const double> loss_gradient,
                             double lr, const AdamWParams& hp,
                             const std::vector<std::uint8_t>& decay_mask) {
  const std::size_t n = model.params.size();
  Require(loss_gradient.size() == n, "AdamWStep: dimension mismatch");
  Require(decay_mask.size() == n, "AdamWStep: decay mask size mismatch");
  Require(lr >= 0.0 && std::isfinite(lr), "AdamWStep: learning rate must be finite and >= 0");
  if (model.opt.m.empty()) {
    model.opt.m.assign(n, 0.0);
    model.opt.v.assign(n, 0.0);
  }
  const double t = static_cast<double>(model.step + 1);
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = loss_gradient[i];
    double& m = model.opt.m[i];
    double& v = model.opt.v[i];
    m = hp.beta1 * m + (1.0 - hp.beta1) * g;
    v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
    double& th = model.params[i];
    if (decay_mask[i]) th -= lr * hp.weight_decay * th;
    th -= lr * (m / bc1) / (std::sqrt(v / bc2) + hp.eps);
  }
  model.step += 1;
}

inline ModelCheckpoint AdamWStep(const ModelCheckpoint& model,
                                 std::span<const double> loss_gradient, double lr,
                                 const AdamWParams& hp = {}) {
  ModelCheckpoint out = model;
  AdamWStepInPlace(out, loss_gradient, lr, hp, ParamLayout(model.config).DecayMask(model.config));
  return out;
}

struct LRSchedule {
  std::int64_t warmup_steps = 200;
  std::int64_t total_steps = 2000;
  double lr_max = 6e-4;
  double lr_min = 6e-5;

  void Validate() const {
    if (!(warmup_steps >= 0 && warmup_steps < total_steps))
      throw ConfigError("schedule: need 0 <= warmup_steps < total_steps");
    if (!(lr_min > 0.0 && lr_min <= lr_max)) throw ConfigError("schedule: need 0 < lr_min <= lr_max");
  }
};

/// Linear warmup to lr_max (reached at step == warmup_steps), then cosine
/// decay to lr_min at step == total_steps.
inline double LrAt(const LRSchedule& s, std::int64_t step) {
  if (step < 0 || step > s.total_steps)
    throw ContractError("LrAt: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(s.total_steps) + "]");
  if (step < s.warmup_steps)
    return s.lr_max * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps + 1);
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.lr_min + (s.lr_max - s.lr_min) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace mixalign
