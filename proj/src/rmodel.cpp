#include "dogerm/rmodel.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dogerm/errors.hpp"

namespace dogerm {

using nlohmann::json;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluA = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluB = 0.044715;

double gelu(double x) {
  const double t = std::tanh(kGeluA * (x + kGeluB * x * x * x));
  return 0.5 * x * (1.0 + t);
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluA * (x + kGeluB * x * x * x));
  return 0.5 * (1.0 + t) +
         0.5 * x * (1.0 - t * t) * kGeluA * (1.0 + 3.0 * kGeluB * x * x);
}

double sigmoid_neg(double m) {
  // sigmoid(-m), stable for any magnitude
  if (m >= 0.0) {
    const double e = std::exp(-m);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(m));
}

std::string layer_prefix(int64_t i) { return "blocks." + std::to_string(i) + "."; }

// Every parameter tensor the architecture owns, in a fixed order that also
// fixes the initialization draw order.
std::vector<std::pair<std::string, std::vector<int64_t>>> expected_tensors(
    const ToyRMConfig& c) {
  std::vector<std::pair<std::string, std::vector<int64_t>>> out;
  out.push_back({"tok_emb.weight", {c.vocab_size, c.d_model}});
  out.push_back({"pos_emb.weight", {c.max_seq_len, c.d_model}});
  for (int64_t i = 0; i < c.n_layers; ++i) {
    const std::string p = layer_prefix(i);
    out.push_back({p + "ln1.weight", {c.d_model}});
    out.push_back({p + "ln1.bias", {c.d_model}});
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      out.push_back({p + "attn." + std::string(w) + ".weight", {c.d_model, c.d_model}});
      out.push_back({p + "attn." + std::string(w) + ".bias", {c.d_model}});
    }
    out.push_back({p + "ln2.weight", {c.d_model}});
    out.push_back({p + "ln2.bias", {c.d_model}});
    out.push_back({p + "mlp.fc1.weight", {c.d_ff, c.d_model}});
    out.push_back({p + "mlp.fc1.bias", {c.d_ff}});
    out.push_back({p + "mlp.fc2.weight", {c.d_model, c.d_ff}});
    out.push_back({p + "mlp.fc2.bias", {c.d_model}});
  }
  out.push_back({"ln_f.weight", {c.d_model}});
  out.push_back({"ln_f.bias", {c.d_model}});
  out.push_back({"head.weight", {1, c.d_model}});
  out.push_back({"head.bias", {1}});
  return out;
}

bool is_weight_tensor(const std::string& name) {
  // Drawn from the seeded uniform; everything else starts at 0 or 1.
  if (name == "tok_emb.weight" || name == "pos_emb.weight" || name == "head.weight") {
    return true;
  }
  return name.size() > 7 && name.ends_with(".weight") &&
         name.find("ln") == std::string::npos;
}

bool is_layernorm_scale(const std::string& name) {
  return name.ends_with(".weight") &&
         (name.find(".ln1.") != std::string::npos ||
          name.find(".ln2.") != std::string::npos || name.starts_with("ln_f."));
}

// Widened float64 copies of every parameter tensor, keyed by name.
using DoubleParams = std::map<std::string, std::vector<double>>;

DoubleParams widen(const NamedTensorMap& params) {
  DoubleParams dp;
  for (const auto& [name, tensor] : params) {
    std::vector<double> v(tensor.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = tensor.data[i];
    dp.emplace(name, std::move(v));
  }
  return dp;
}

struct LayerView {
  const double *ln1_w, *ln1_b;
  const double *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  const double *ln2_w, *ln2_b;
  const double *fc1_w, *fc1_b, *fc2_w, *fc2_b;
};

struct ModelView {
  const double *tok_emb, *pos_emb, *lnf_w, *lnf_b, *head_w, *head_b;
  std::vector<LayerView> layers;
};

ModelView make_view(const DoubleParams& dp, const ToyRMConfig& c) {
  auto ptr = [&dp](const std::string& n) { return dp.at(n).data(); };
  ModelView v;
  v.tok_emb = ptr("tok_emb.weight");
  v.pos_emb = ptr("pos_emb.weight");
  v.lnf_w = ptr("ln_f.weight");
  v.lnf_b = ptr("ln_f.bias");
  v.head_w = ptr("head.weight");
  v.head_b = ptr("head.bias");
  for (int64_t i = 0; i < c.n_layers; ++i) {
    const std::string p = layer_prefix(i);
    LayerView l;
    l.ln1_w = ptr(p + "ln1.weight");
    l.ln1_b = ptr(p + "ln1.bias");
    l.wq = ptr(p + "attn.wq.weight");
    l.bq = ptr(p + "attn.wq.bias");
    l.wk = ptr(p + "attn.wk.weight");
    l.bk = ptr(p + "attn.wk.bias");
    l.wv = ptr(p + "attn.wv.weight");
    l.bv = ptr(p + "attn.wv.bias");
    l.wo = ptr(p + "attn.wo.weight");
    l.bo = ptr(p + "attn.wo.bias");
    l.ln2_w = ptr(p + "ln2.weight");
    l.ln2_b = ptr(p + "ln2.bias");
    l.fc1_w = ptr(p + "mlp.fc1.weight");
    l.fc1_b = ptr(p + "mlp.fc1.bias");
    l.fc2_w = ptr(p + "mlp.fc2.weight");
    l.fc2_b = ptr(p + "mlp.fc2.bias");
    v.layers.push_back(l);
  }
  return v;
}

struct GradLayerView {
  double *ln1_w, *ln1_b;
  double *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  double *ln2_w, *ln2_b;
  double *fc1_w, *fc1_b, *fc2_w, *fc2_b;
};

struct GradView {
  double *tok_emb, *pos_emb, *lnf_w, *lnf_b, *head_w, *head_b;
  std::vector<GradLayerView> layers;
};

GradView make_grad_view(DoubleParams& dp, const ToyRMConfig& c) {
  auto ptr = [&dp](const std::string& n) { return dp.at(n).data(); };
  GradView v;
  v.tok_emb = ptr("tok_emb.weight");
  v.pos_emb = ptr("pos_emb.weight");
  v.lnf_w = ptr("ln_f.weight");
  v.lnf_b = ptr("ln_f.bias");
  v.head_w = ptr("head.weight");
  v.head_b = ptr("head.bias");
  for (int64_t i = 0; i < c.n_layers; ++i) {
    const std::string p = layer_prefix(i);
    GradLayerView l;
    l.ln1_w = ptr(p + "ln1.weight");
    l.ln1_b = ptr(p + "ln1.bias");
    l.wq = ptr(p + "attn.wq.weight");
    l.bq = ptr(p + "attn.wq.bias");
    l.wk = ptr(p + "attn.wk.weight");
    l.bk = ptr(p + "attn.wk.bias");
    l.wv = ptr(p + "attn.wv.weight");
    l.bv = ptr(p + "attn.wv.bias");
    l.wo = ptr(p + "attn.wo.weight");
    l.bo = ptr(p + "attn.wo.bias");
    l.ln2_w = ptr(p + "ln2.weight");
    l.ln2_b = ptr(p + "ln2.bias");
    l.fc1_w = ptr(p + "mlp.fc1.weight");
    l.fc1_b = ptr(p + "mlp.fc1.bias");
    l.fc2_w = ptr(p + "mlp.fc2.weight");
    l.fc2_b = ptr(p + "mlp.fc2.bias");
    v.layers.push_back(l);
  }
  return v;
}

// y[0..out) = W[out,in] x + b
void linear(const double* W, const double* b, const double* x, double* y,
            int64_t out_dim, int64_t in_dim) {
  for (int64_t o = 0; o < out_dim; ++o) {
    double acc = b ? b[o] : 0.0;
    const double* row = W + o * in_dim;
    for (int64_t i = 0; i < in_dim; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

// dx += W^T dy ; dW += dy (x)ᵀ ; db += dy
void linear_backward(const double* W, const double* x, const double* dy, double* dx,
                     double* dW, double* db, int64_t out_dim, int64_t in_dim) {
  for (int64_t o = 0; o < out_dim; ++o) {
    const double g = dy[o];
    const double* row = W + o * in_dim;
    double* grow = dW + o * in_dim;
    for (int64_t i = 0; i < in_dim; ++i) {
      if (dx) dx[i] += row[i] * g;
      grow[i] += g * x[i];
    }
    db[o] += g;
  }
}

// y = w * (x - mean) * rstd + b over one row of width d
void layernorm(const double* x, const double* w, const double* b, double* y,
               double* mean_out, double* rstd_out, int64_t d) {
  double mean = 0.0;
  for (int64_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    const double c = x[i] - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (int64_t i = 0; i < d; ++i) y[i] = w[i] * (x[i] - mean) * rstd + b[i];
  *mean_out = mean;
  *rstd_out = rstd;
}

void layernorm_backward(const double* x, double mean, double rstd, const double* w,
                        const double* dy, double* dx, double* dw, double* db,
                        int64_t d) {
  double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mean) * rstd;
    const double dxhat = dy[i] * w[i];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
  }
  const double inv_d = 1.0 / static_cast<double>(d);
  for (int64_t i = 0; i < d; ++i) {
    const double xhat = (x[i] - mean) * rstd;
    const double dxhat = dy[i] * w[i];
    dw[i] += dy[i] * xhat;
    db[i] += dy[i];
    dx[i] += rstd * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
  }
}

struct LayerCache {
  std::vector<double> x_in;                 // [T*d]
  std::vector<double> ln1_out;              // [T*d]
  std::vector<double> ln1_mean, ln1_rstd;   // [T]
  std::vector<double> q, k, v;              // [T*d]
  std::vector<double> att;                  // [H*T*T]
  std::vector<double> mix;                  // [T*d] head-concatenated values
  std::vector<double> resid1;               // [T*d]
  std::vector<double> ln2_out;              // [T*d]
  std::vector<double> ln2_mean, ln2_rstd;   // [T]
  std::vector<double> fc1_pre;              // [T*dff]
  std::vector<double> fc1_act;              // [T*dff]
};

struct SeqCache {
  std::vector<int32_t> ids;
  int64_t T = 0;
  std::vector<double> x0;                   // [T*d]
  std::vector<LayerCache> layers;
  std::vector<double> x_final;              // [T*d]
  std::vector<double> lnf_out;              // [T*d]
  std::vector<double> lnf_mean, lnf_rstd;   // [T]
  double reward = 0.0;
};

double forward_seq(const ModelView& m, const ToyRMConfig& cfg,
                   std::span<const int32_t> ids, SeqCache& cache) {
  const int64_t T = static_cast<int64_t>(ids.size());
  const int64_t d = cfg.d_model;
  const int64_t H = cfg.n_heads;
  const int64_t hd = d / H;
  const int64_t dff = cfg.d_ff;

  if (T < 1 || T > cfg.max_seq_len) {
    throw LengthError("sequence length " + std::to_string(T) + " outside [1, " +
                      std::to_string(cfg.max_seq_len) + "]");
  }
  for (int32_t id : ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw TokenRangeError("token id " + std::to_string(id) +
                            " outside [0, " + std::to_string(cfg.vocab_size) + ")");
    }
  }

  cache.ids.assign(ids.begin(), ids.end());
  cache.T = T;
  cache.x0.assign(T * d, 0.0);
  for (int64_t t = 0; t < T; ++t) {
    const double* tok = m.tok_emb + static_cast<int64_t>(ids[t]) * d;
    const double* pos = m.pos_emb + t * d;
    for (int64_t c = 0; c < d; ++c) cache.x0[t * d + c] = tok[c] + pos[c];
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  cache.layers.assign(m.layers.size(), LayerCache{});
  std::vector<double> x = cache.x0;

  for (size_t li = 0; li < m.layers.size(); ++li) {
    const LayerView& L = m.layers[li];
    LayerCache& C = cache.layers[li];
    C.x_in = x;
    C.ln1_out.assign(T * d, 0.0);
    C.ln1_mean.assign(T, 0.0);
    C.ln1_rstd.assign(T, 0.0);
    for (int64_t t = 0; t < T; ++t) {
      layernorm(&C.x_in[t * d], L.ln1_w, L.ln1_b, &C.ln1_out[t * d],
                &C.ln1_mean[t], &C.ln1_rstd[t], d);
    }

    C.q.assign(T * d, 0.0);
    C.k.assign(T * d, 0.0);
    C.v.assign(T * d, 0.0);
    for (int64_t t = 0; t < T; ++t) {
      linear(L.wq, L.bq, &C.ln1_out[t * d], &C.q[t * d], d, d);
      linear(L.wk, L.bk, &C.ln1_out[t * d], &C.k[t * d], d, d);
      linear(L.wv, L.bv, &C.ln1_out[t * d], &C.v[t * d], d, d);
    }

    C.att.assign(H * T * T, 0.0);
    C.mix.assign(T * d, 0.0);
    std::vector<double> scores(T);
    for (int64_t h = 0; h < H; ++h) {
      const int64_t off = h * hd;
      for (int64_t i = 0; i < T; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (int64_t c = 0; c < hd; ++c) {
            s += C.q[i * d + off + c] * C.k[j * d + off + c];
          }
          scores[j] = s * scale;
          mx = std::max(mx, scores[j]);
        }
        double denom = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          denom += scores[j];
        }
        double* arow = &C.att[(h * T + i) * T];
        for (int64_t j = 0; j <= i; ++j) {
          arow[j] = scores[j] / denom;
          for (int64_t c = 0; c < hd; ++c) {
            C.mix[i * d + off + c] += arow[j] * C.v[j * d + off + c];
          }
        }
      }
    }

    C.resid1.assign(T * d, 0.0);
    std::vector<double> attn_out(d);
    for (int64_t t = 0; t < T; ++t) {
      linear(L.wo, L.bo, &C.mix[t * d], attn_out.data(), d, d);
      for (int64_t c = 0; c < d; ++c) {
        C.resid1[t * d + c] = C.x_in[t * d + c] + attn_out[c];
      }
    }

    C.ln2_out.assign(T * d, 0.0);
    C.ln2_mean.assign(T, 0.0);
    C.ln2_rstd.assign(T, 0.0);
    for (int64_t t = 0; t < T; ++t) {
      layernorm(&C.resid1[t * d], L.ln2_w, L.ln2_b, &C.ln2_out[t * d],
                &C.ln2_mean[t], &C.ln2_rstd[t], d);
    }

    C.fc1_pre.assign(T * dff, 0.0);
    C.fc1_act.assign(T * dff, 0.0);
    x.assign(T * d, 0.0);
    std::vector<double> fc2_out(d);
    for (int64_t t = 0; t < T; ++t) {
      linear(L.fc1_w, L.fc1_b, &C.ln2_out[t * d], &C.fc1_pre[t * dff], dff, d);
      for (int64_t u = 0; u < dff; ++u) {
        C.fc1_act[t * dff + u] = gelu(C.fc1_pre[t * dff + u]);
      }
      linear(L.fc2_w, L.fc2_b, &C.fc1_act[t * dff], fc2_out.data(), d, dff);
      for (int64_t c = 0; c < d; ++c) {
        x[t * d + c] = C.resid1[t * d + c] + fc2_out[c];
      }
    }
  }

  cache.x_final = x;
  cache.lnf_out.assign(T * d, 0.0);
  cache.lnf_mean.assign(T, 0.0);
  cache.lnf_rstd.assign(T, 0.0);
  for (int64_t t = 0; t < T; ++t) {
    layernorm(&cache.x_final[t * d], m.lnf_w, m.lnf_b, &cache.lnf_out[t * d],
              &cache.lnf_mean[t], &cache.lnf_rstd[t], d);
  }

  double reward = m.head_b[0];
  for (int64_t c = 0; c < d; ++c) {
    reward += m.head_w[c] * cache.lnf_out[(T - 1) * d + c];
  }
  cache.reward = reward;
  return reward;
}

void backward_seq(const ModelView& m, const ToyRMConfig& cfg, const SeqCache& cache,
                  double d_reward, GradView& g) {
  const int64_t T = cache.T;
  const int64_t d = cfg.d_model;
  const int64_t H = cfg.n_heads;
  const int64_t hd = d / H;
  const int64_t dff = cfg.d_ff;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // head
  std::vector<double> d_lnf(T * d, 0.0);
  const int64_t last = (T - 1) * d;
  for (int64_t c = 0; c < d; ++c) {
    g.head_w[c] += d_reward * cache.lnf_out[last + c];
    d_lnf[last + c] = d_reward * m.head_w[c];
  }
  g.head_b[0] += d_reward;

  // final layernorm
  std::vector<double> dx(T * d, 0.0);
  for (int64_t t = 0; t < T; ++t) {
    layernorm_backward(&cache.x_final[t * d], cache.lnf_mean[t], cache.lnf_rstd[t],
                       m.lnf_w, &d_lnf[t * d], &dx[t * d], g.lnf_w, g.lnf_b, d);
  }

  for (int64_t li = static_cast<int64_t>(m.layers.size()) - 1; li >= 0; --li) {
    const LayerView& L = m.layers[li];
    const GradLayerView& G = g.layers[li];
    const LayerCache& C = cache.layers[li];

    // MLP branch; dx holds the gradient at the block output
    std::vector<double> d_resid1 = dx;
    std::vector<double> d_fc1_act(dff), d_fc1_pre(dff), d_ln2(T * d, 0.0);
    for (int64_t t = 0; t < T; ++t) {
      std::fill(d_fc1_act.begin(), d_fc1_act.end(), 0.0);
      linear_backward(L.fc2_w, &C.fc1_act[t * dff], &dx[t * d], d_fc1_act.data(),
                      G.fc2_w, G.fc2_b, d, dff);
      for (int64_t u = 0; u < dff; ++u) {
        d_fc1_pre[u] = d_fc1_act[u] * gelu_grad(C.fc1_pre[t * dff + u]);
      }
      linear_backward(L.fc1_w, &C.ln2_out[t * d], d_fc1_pre.data(), &d_ln2[t * d],
                      G.fc1_w, G.fc1_b, dff, d);
    }
    for (int64_t t = 0; t < T; ++t) {
      layernorm_backward(&C.resid1[t * d], C.ln2_mean[t], C.ln2_rstd[t], L.ln2_w,
                         &d_ln2[t * d], &d_resid1[t * d], G.ln2_w, G.ln2_b, d);
    }

    // attention branch; d_resid1 now holds the gradient at resid1
    std::vector<double> d_x_in = d_resid1;
    std::vector<double> d_mix(T * d, 0.0);
    for (int64_t t = 0; t < T; ++t) {
      linear_backward(L.wo, &C.mix[t * d], &d_resid1[t * d], &d_mix[t * d],
                      G.wo, G.bo, d, d);
    }

    std::vector<double> dq(T * d, 0.0), dk(T * d, 0.0), dv(T * d, 0.0);
    std::vector<double> da(T), ds(T);
    for (int64_t h = 0; h < H; ++h) {
      const int64_t off = h * hd;
      for (int64_t i = 0; i < T; ++i) {
        const double* arow = &C.att[(h * T + i) * T];
        double dot = 0.0;
        for (int64_t j = 0; j <= i; ++j) {
          double acc = 0.0;
          for (int64_t c = 0; c < hd; ++c) {
            acc += d_mix[i * d + off + c] * C.v[j * d + off + c];
            dv[j * d + off + c] += arow[j] * d_mix[i * d + off + c];
          }
          da[j] = acc;
          dot += arow[j] * acc;
        }
        for (int64_t j = 0; j <= i; ++j) {
          ds[j] = arow[j] * (da[j] - dot);
          for (int64_t c = 0; c < hd; ++c) {
            dq[i * d + off + c] += ds[j] * C.k[j * d + off + c] * scale;
            dk[j * d + off + c] += ds[j] * C.q[i * d + off + c] * scale;
          }
        }
      }
    }

    std::vector<double> d_ln1(T * d, 0.0);
    for (int64_t t = 0; t < T; ++t) {
      linear_backward(L.wq, &C.ln1_out[t * d], &dq[t * d], &d_ln1[t * d], G.wq, G.bq, d, d);
      linear_backward(L.wk, &C.ln1_out[t * d], &dk[t * d], &d_ln1[t * d], G.wk, G.bk, d, d);
      linear_backward(L.wv, &C.ln1_out[t * d], &dv[t * d], &d_ln1[t * d], G.wv, G.bv, d, d);
    }
    for (int64_t t = 0; t < T; ++t) {
      layernorm_backward(&C.x_in[t * d], C.ln1_mean[t], C.ln1_rstd[t], L.ln1_w,
                         &d_ln1[t * d], &d_x_in[t * d], G.ln1_w, G.ln1_b, d);
    }
    dx = std::move(d_x_in);
  }

  // embeddings
  for (int64_t t = 0; t < T; ++t) {
    const int64_t row = static_cast<int64_t>(cache.ids[t]) * d;
    for (int64_t c = 0; c < d; ++c) {
      g.tok_emb[row + c] += dx[t * d + c];
      g.pos_emb[t * d + c] += dx[t * d + c];
    }
  }
}

DoubleParams zeros_like(const NamedTensorMap& params) {
  DoubleParams dp;
  for (const auto& [name, tensor] : params) {
    dp.emplace(name, std::vector<double>(tensor.data.size(), 0.0));
  }
  return dp;
}

}  // namespace

void ToyRMConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) {
    throw std::invalid_argument("all model dimensions must be >= 1");
  }
  if (max_seq_len < 2) {
    throw std::invalid_argument("max_seq_len must be >= 2");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("d_model must be divisible by n_heads");
  }
}

ToyRMConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": not valid JSON: " + e.what());
  }
  ToyRMConfig c;
  try {
    c.vocab_size = j.at("vocab_size").get<int64_t>();
    c.d_model = j.at("d_model").get<int64_t>();
    c.n_layers = j.at("n_layers").get<int64_t>();
    c.n_heads = j.at("n_heads").get<int64_t>();
    c.d_ff = j.at("d_ff").get<int64_t>();
    c.max_seq_len = j.at("max_seq_len").get<int64_t>();
    c.seed = j.value("seed", uint64_t{0});
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return c;
}

std::vector<int32_t> concat_ids(std::span<const int32_t> prompt,
                                std::span<const int32_t> response) {
  std::vector<int32_t> out;
  out.reserve(prompt.size() + 1 + response.size());
  out.insert(out.end(), prompt.begin(), prompt.end());
  out.push_back(kSeparatorTokenId);
  out.insert(out.end(), response.begin(), response.end());
  return out;
}

std::vector<int32_t> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int32_t> ids;
  std::istringstream stream(text);
  std::string word;
  while (stream >> word) {
    auto it = vocab.token_to_id.find(word);
    ids.push_back(it == vocab.token_to_id.end()
                      ? kUnknownTokenId
                      : static_cast<int32_t>(it->second));
  }
  return ids;
}

ToyRM::ToyRM(ToyRMConfig config, NamedTensorMap params)
    : config_(config), params_(std::move(params)) {}

ToyRM ToyRM::init(const ToyRMConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  // 53-bit uniform in [0,1); avoids std::uniform_real_distribution, whose
  // output is implementation-defined.
  auto uniform = [&rng]() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  NamedTensorMap params;
  for (const auto& [name, shape] : expected_tensors(config)) {
    Tensor t = Tensor::zeros(shape);
    if (is_weight_tensor(name)) {
      for (float& v : t.data) {
        v = static_cast<float>((2.0 * uniform() - 1.0) * 0.05);
      }
    } else if (is_layernorm_scale(name)) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
    }
    params.add(name, std::move(t));
  }
  return ToyRM(config, std::move(params));
}

ToyRM ToyRM::from_params(const ToyRMConfig& config, NamedTensorMap params) {
  config.validate();
  auto expected = expected_tensors(config);
  if (params.size() != expected.size()) {
    throw ShapeMismatchError("checkpoint has " + std::to_string(params.size()) +
                             " tensors, architecture expects " +
                             std::to_string(expected.size()));
  }
  for (const auto& [name, shape] : expected) {
    if (!params.has(name)) {
      throw ShapeMismatchError("checkpoint is missing tensor \"" + name + "\"");
    }
    const Tensor& t = params.at(name);
    if (t.shape != shape) {
      throw ShapeMismatchError("tensor \"" + name + "\" has unexpected shape");
    }
    for (float v : t.data) {
      if (!std::isfinite(v)) {
        throw NonFiniteError("tensor \"" + name + "\" contains a non-finite value");
      }
    }
  }
  return ToyRM(config, std::move(params));
}

double ToyRM::score(std::span<const int32_t> ids) const {
  DoubleParams dp = widen(params_);
  ModelView view = make_view(dp, config_);
  SeqCache cache;
  return forward_seq(view, config_, ids, cache);
}

double pairwise_loss(double reward_chosen, double reward_rejected) {
  const double m = reward_chosen - reward_rejected;
  // softplus(-m) without overflow on either side
  if (m >= 0.0) {
    return std::log1p(std::exp(-m));
  }
  return -m + std::log1p(std::exp(m));
}

std::pair<double, NamedTensorMap> loss_and_grad(
    const ToyRM& model, const std::vector<PreferenceExample>& batch) {
  if (batch.empty()) {
    throw EmptyBatchError("loss_and_grad requires a non-empty batch");
  }
  DoubleParams dp = widen(model.params());
  ModelView view = make_view(dp, model.config());
  DoubleParams grads = zeros_like(model.params());
  GradView gview = make_grad_view(grads, model.config());

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  SeqCache cache_c, cache_r;
  for (const PreferenceExample& ex : batch) {
    const std::vector<int32_t> seq_c = concat_ids(ex.prompt, ex.chosen);
    const std::vector<int32_t> seq_r = concat_ids(ex.prompt, ex.rejected);
    const double r_c = forward_seq(view, model.config(), seq_c, cache_c);
    const double r_r = forward_seq(view, model.config(), seq_r, cache_r);
    total += pairwise_loss(r_c, r_r);
    // d/dm of softplus(-m) is -sigmoid(-m); the margin feeds both rewards.
    const double dm = -sigmoid_neg(r_c - r_r) * inv_b;
    backward_seq(view, model.config(), cache_c, dm, gview);
    backward_seq(view, model.config(), cache_r, -dm, gview);
  }

  NamedTensorMap grad_map;
  for (const auto& [name, tensor] : model.params()) {
    Tensor g;
    g.shape = tensor.shape;
    const std::vector<double>& src = grads.at(name);
    g.data.resize(src.size());
    for (size_t i = 0; i < src.size(); ++i) g.data[i] = static_cast<float>(src[i]);
    grad_map.add(name, std::move(g));
  }
  return {total * inv_b, std::move(grad_map)};
}

ToyRM train_toy(const ToyRMConfig& config, const std::vector<PreferenceExample>& dataset,
                int64_t steps, double learning_rate) {
  if (dataset.empty()) {
    throw EmptyBatchError("training dataset is empty");
  }
  if (learning_rate <= 0.0) {
    throw RangeError("learning rate must be positive");
  }
  ToyRM model = ToyRM::init(config);
  for (int64_t step = 0; step < steps; ++step) {
    auto [loss, grads] = loss_and_grad(model, dataset);
    if (!std::isfinite(loss)) {
      throw DivergenceError("loss became non-finite at step " + std::to_string(step));
    }
    NamedTensorMap updated;
    bool finite = true;
    for (const auto& [name, tensor] : model.params()) {
      const Tensor& g = grads.at(name);
      Tensor p;
      p.shape = tensor.shape;
      p.data.resize(tensor.data.size());
      for (size_t i = 0; i < p.data.size(); ++i) {
        p.data[i] = static_cast<float>(static_cast<double>(tensor.data[i]) -
                                       learning_rate * static_cast<double>(g.data[i]));
        finite = finite && std::isfinite(p.data[i]);
      }
      updated.add(name, std::move(p));
    }
    if (!finite) {
      throw DivergenceError("parameters became non-finite after step " +
                            std::to_string(step));
    }
    model = ToyRM::from_params(config, std::move(updated));
  }
  return model;
}

}  // namespace dogerm
