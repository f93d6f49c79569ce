#include "memaudit/micro_transformer.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "memaudit/rng.hpp"

namespace memaudit {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_deriv(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// y = W x (+ y0), W row-major [out][in], float params, double activations.
inline void matvec(const float* w, const double* x, double* y, int out, int in) {
  for (int o = 0; o < out; ++o) {
    const float* row = w + static_cast<std::size_t>(o) * in;
    double acc = 0.0;
    for (int i = 0; i < in; ++i) acc += static_cast<double>(row[i]) * x[i];
    y[o] = acc;
  }
}

// y += W^T g
inline void matvec_transposed_add(const float* w, const double* g, double* y, int out, int in) {
  for (int o = 0; o < out; ++o) {
    const double go = g[o];
    if (go == 0.0) continue;
    const float* row = w + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) y[i] += go * static_cast<double>(row[i]);
  }
}

// dW += g (x) x
inline void outer_add(double* dw, const double* g, const double* x, int out, int in) {
  for (int o = 0; o < out; ++o) {
    const double go = g[o];
    if (go == 0.0) continue;
    double* row = dw + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) row[i] += go * x[i];
  }
}

// Layer-norm forward; writes xhat and the normalized-scaled output.
inline void ln_forward(const double* x, int d, const float* gain, const float* bias, double* xhat, double* out,
                       double* inv_std) {
  double mean = 0.0;
  for (int i = 0; i < d; ++i) mean += x[i];
  mean /= d;
  double var = 0.0;
  for (int i = 0; i < d; ++i) {
    const double c = x[i] - mean;
    var += c * c;
  }
  var /= d;
  const double inv = 1.0 / std::sqrt(var + kLnEps);
  for (int i = 0; i < d; ++i) {
    const double h = (x[i] - mean) * inv;
    xhat[i] = h;
    out[i] = h * static_cast<double>(gain[i]) + static_cast<double>(bias[i]);
  }
  *inv_std = inv;
}

// dx += LN backward of dy; accumulates dgain/dbias when given.
inline void ln_backward_add(const double* dy, const double* xhat, double inv_std, int d, const float* gain,
                            double* dgain, double* dbias, double* dx) {
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (int i = 0; i < d; ++i) {
    const double dxh = dy[i] * static_cast<double>(gain[i]);
    mean_dxhat += dxh;
    mean_dxhat_xhat += dxh * xhat[i];
  }
  mean_dxhat /= d;
  mean_dxhat_xhat /= d;
  for (int i = 0; i < d; ++i) {
    const double dxh = dy[i] * static_cast<double>(gain[i]);
    dx[i] += inv_std * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
    if (dgain) dgain[i] += dy[i] * xhat[i];
    if (dbias) dbias[i] += dy[i];
  }
}

inline double log_sum_exp(const double* logits, int n) {
  double m = logits[0];
  for (int i = 1; i < n; ++i) m = std::max(m, logits[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(logits[i] - m);
  return m + std::log(s);
}

}  // namespace

void MicroTransformerConfig::validate() const {
  if (vocab_size < 2) throw AuditError("config: vocab_size must be >= 2");
  if (embed_dim < 1 || layers < 1 || heads < 1 || context_len < 2) {
    throw AuditError("config: embed_dim, layers, heads, context_len must be positive (context_len >= 2)");
  }
  if (embed_dim % heads != 0) throw AuditError("config: embed_dim must be divisible by heads");
  if (learning_rate <= 0.0) throw AuditError("config: learning_rate must be positive");
  if (epochs < 1) throw AuditError("config: epochs must be >= 1");
}

// Tensor registration order (fixed; checkpoints and init depend on it):
//   0 wte, 1 wpe,
//   per layer l at 2+12l: ln1_g ln1_b wq wk wv wo ln2_g ln2_b w1 b1 w2 b2,
//   then lnf_g lnf_b head_w head_b.
namespace {
constexpr std::size_t kPerLayerTensors = 12;
inline std::size_t layer_base(int l) { return 2 + kPerLayerTensors * static_cast<std::size_t>(l); }
}  // namespace

void MicroTransformer::build_layout() {
  const auto d = static_cast<std::size_t>(cfg_.embed_dim);
  const auto f = 4 * d;
  const auto v = static_cast<std::size_t>(cfg_.vocab_size);
  const auto tmax = static_cast<std::size_t>(cfg_.context_len) + 1;

  std::size_t offset = 0;
  const auto add = [&](const std::string& name, std::vector<std::size_t> shape) {
    std::size_t count = 1;
    for (std::size_t s : shape) count *= s;
    tensors_.push_back({name, std::move(shape), offset, count});
    offset += count;
  };

  add("wte", {v + 1, d});
  add("wpe", {tmax, d});
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    add(p + "ln1_g", {d});
    add(p + "ln1_b", {d});
    add(p + "wq", {d, d});
    add(p + "wk", {d, d});
    add(p + "wv", {d, d});
    add(p + "wo", {d, d});
    add(p + "ln2_g", {d});
    add(p + "ln2_b", {d});
    add(p + "w1", {f, d});
    add(p + "b1", {f});
    add(p + "w2", {d, f});
    add(p + "b2", {d});
  }
  add("lnf_g", {d});
  add("lnf_b", {d});
  add("head_w", {v, d});
  add("head_b", {v});

  params_.assign(offset, 0.0f);
}

void MicroTransformer::init_parameters() {
  Rng rng(splitmix64(cfg_.seed ^ 0x7261696e69740aULL));
  const auto fill_gauss = [&](const TensorInfo& t, double stddev) {
    float* p = params_.data() + t.offset;
    for (std::size_t i = 0; i < t.count; ++i) p[i] = static_cast<float>(stddev * rng.gauss());
  };
  const auto fill_const = [&](const TensorInfo& t, float value) {
    std::fill_n(params_.data() + t.offset, t.count, value);
  };
  for (const TensorInfo& t : tensors_) {
    const bool is_gain = t.name.size() >= 2 && t.name.compare(t.name.size() - 2, 2, "_g") == 0;
    const bool is_bias = (t.name.size() >= 2 && t.name.compare(t.name.size() - 2, 2, "_b") == 0) ||
                         t.name == "head_b" || t.name.find(".b") != std::string::npos;
    if (is_gain) {
      fill_const(t, 1.0f);
    } else if (is_bias) {
      fill_const(t, 0.0f);
    } else {
      fill_gauss(t, 0.02);
    }
  }
}

MicroTransformer::MicroTransformer(const MicroTransformerConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  caps_ = {true, cfg_.vocab_size, cfg_.context_len, cfg_.embed_dim};
  build_layout();
  init_parameters();
}

MicroTransformer::MicroTransformer(const MicroTransformerConfig& cfg, std::vector<float> params) : cfg_(cfg) {
  cfg_.validate();
  caps_ = {true, cfg_.vocab_size, cfg_.context_len, cfg_.embed_dim};
  build_layout();
  if (params.size() != params_.size()) {
    throw DataFormatError("parameter count mismatch: expected " + std::to_string(params_.size()) + ", got " +
                          std::to_string(params.size()));
  }
  params_ = std::move(params);
}

void MicroTransformer::accumulate_embedding_row(Token t, std::vector<double>& acc) const {
  const int d = cfg_.embed_dim;
  const float* row = tensor(0) + static_cast<std::size_t>(t) * d;
  for (int i = 0; i < d; ++i) acc[static_cast<std::size_t>(i)] += static_cast<double>(row[i]);
}

// ---------------------------------------------------------------------------
// Incremental forward (position at a time, per-layer KV buffers)
// ---------------------------------------------------------------------------

namespace {

// Scratch for one incremental pass; capacity is the number of positions.
struct IncState {
  const MicroTransformerConfig* cfg;
  const std::vector<float>* params;
  const std::vector<MicroTransformer::TensorInfo>* tensors;
  int capacity = 0;
  int t = 0;                   // positions consumed so far
  std::vector<double> kbuf;    // layers * capacity * d
  std::vector<double> vbuf;
  std::vector<double> x, a, xhat, q, merged, hp;

  IncState(const MicroTransformerConfig& c, const std::vector<float>& p,
           const std::vector<MicroTransformer::TensorInfo>& ts, int cap)
      : cfg(&c), params(&p), tensors(&ts), capacity(cap) {
    const auto d = static_cast<std::size_t>(c.embed_dim);
    kbuf.assign(static_cast<std::size_t>(c.layers) * cap * d, 0.0);
    vbuf.assign(kbuf.size(), 0.0);
    x.assign(d, 0.0);
    a.assign(d, 0.0);
    xhat.assign(d, 0.0);
    q.assign(d, 0.0);
    merged.assign(d, 0.0);
    hp.assign(4 * d, 0.0);
  }

  const float* tsr(std::size_t idx) const { return params->data() + (*tensors)[idx].offset; }

  // Consume a token; afterwards `x` holds the final-layer residual stream.
  void step(Token id) {
    const int d = cfg->embed_dim;
    const int heads = cfg->heads;
    const int dh = d / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const float* wte = tsr(0);
    const float* wpe = tsr(1);

    for (int i = 0; i < d; ++i) {
      x[static_cast<std::size_t>(i)] = static_cast<double>(wte[static_cast<std::size_t>(id) * d + i]) +
                                       static_cast<double>(wpe[static_cast<std::size_t>(t) * d + i]);
    }

    std::vector<double> scores(static_cast<std::size_t>(t) + 1);
    for (int l = 0; l < cfg->layers; ++l) {
      const std::size_t base = layer_base(l);
      double inv_std = 0.0;
      ln_forward(x.data(), d, tsr(base + 0), tsr(base + 1), xhat.data(), a.data(), &inv_std);

      double* krow = kbuf.data() + (static_cast<std::size_t>(l) * capacity + t) * d;
      double* vrow = vbuf.data() + (static_cast<std::size_t>(l) * capacity + t) * d;
      matvec(tsr(base + 2), a.data(), q.data(), d, d);
      matvec(tsr(base + 3), a.data(), krow, d, d);
      matvec(tsr(base + 4), a.data(), vrow, d, d);

      for (int h = 0; h < heads; ++h) {
        const int ho = h * dh;
        double max_s = -1e300;
        for (int u = 0; u <= t; ++u) {
          const double* ku = kbuf.data() + (static_cast<std::size_t>(l) * capacity + u) * d + ho;
          double acc = 0.0;
          for (int i = 0; i < dh; ++i) acc += q[static_cast<std::size_t>(ho + i)] * ku[i];
          const double s = acc * inv_sqrt_dh;
          scores[static_cast<std::size_t>(u)] = s;
          max_s = std::max(max_s, s);
        }
        double denom = 0.0;
        for (int u = 0; u <= t; ++u) {
          const double e = std::exp(scores[static_cast<std::size_t>(u)] - max_s);
          scores[static_cast<std::size_t>(u)] = e;
          denom += e;
        }
        const double inv_denom = 1.0 / denom;
        for (int i = 0; i < dh; ++i) merged[static_cast<std::size_t>(ho + i)] = 0.0;
        for (int u = 0; u <= t; ++u) {
          const double p = scores[static_cast<std::size_t>(u)] * inv_denom;
          const double* vu = vbuf.data() + (static_cast<std::size_t>(l) * capacity + u) * d + ho;
          for (int i = 0; i < dh; ++i) merged[static_cast<std::size_t>(ho + i)] += p * vu[i];
        }
      }
      // x += Wo merged
      {
        const float* wo = tsr(base + 5);
        for (int o = 0; o < d; ++o) {
          const float* row = wo + static_cast<std::size_t>(o) * d;
          double acc = 0.0;
          for (int i = 0; i < d; ++i) acc += static_cast<double>(row[i]) * merged[static_cast<std::size_t>(i)];
          x[static_cast<std::size_t>(o)] += acc;
        }
      }

      ln_forward(x.data(), d, tsr(base + 6), tsr(base + 7), xhat.data(), a.data(), &inv_std);
      const int f = 4 * d;
      const float* b1 = tsr(base + 9);
      matvec(tsr(base + 8), a.data(), hp.data(), f, d);
      for (int i = 0; i < f; ++i) hp[static_cast<std::size_t>(i)] = gelu(hp[static_cast<std::size_t>(i)] + static_cast<double>(b1[i]));
      const float* w2 = tsr(base + 10);
      const float* b2 = tsr(base + 11);
      for (int o = 0; o < d; ++o) {
        const float* row = w2 + static_cast<std::size_t>(o) * f;
        double acc = static_cast<double>(b2[o]);
        for (int i = 0; i < f; ++i) acc += static_cast<double>(row[i]) * hp[static_cast<std::size_t>(i)];
        x[static_cast<std::size_t>(o)] += acc;
      }
    }
    ++t;
  }

  // Log-softmax over the vocabulary at the current position.
  void last_logprobs(std::vector<double>& out) const {
    const int d = cfg->embed_dim;
    const int v = cfg->vocab_size;
    const std::size_t base = tensors->size() - 4;
    std::vector<double> xh(static_cast<std::size_t>(d)), y(static_cast<std::size_t>(d));
    double inv_std = 0.0;
    ln_forward(x.data(), d, params->data() + (*tensors)[base].offset, params->data() + (*tensors)[base + 1].offset,
               xh.data(), y.data(), &inv_std);
    out.resize(static_cast<std::size_t>(v));
    const float* head_w = params->data() + (*tensors)[base + 2].offset;
    const float* head_b = params->data() + (*tensors)[base + 3].offset;
    for (int o = 0; o < v; ++o) {
      const float* row = head_w + static_cast<std::size_t>(o) * d;
      double acc = static_cast<double>(head_b[o]);
      for (int i = 0; i < d; ++i) acc += static_cast<double>(row[i]) * y[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(o)] = acc;
    }
    const double lse = log_sum_exp(out.data(), v);
    for (int o = 0; o < v; ++o) out[static_cast<std::size_t>(o)] -= lse;
  }
};

}  // namespace

double MicroTransformer::forward_incremental(const TokenSeq& input_ids, const TokenSeq& targets, int first_loss_pos,
                                             double abandon_above, std::vector<double>* out_last_logprobs) const {
  IncState st(cfg_, params_, tensors_, static_cast<int>(input_ids.size()));
  double nll = 0.0;
  std::vector<double> lp;
  const int n = static_cast<int>(input_ids.size());
  for (int t = 0; t < n; ++t) {
    st.step(input_ids[static_cast<std::size_t>(t)]);
    if (!targets.empty() && t >= first_loss_pos) {
      const int j = t - first_loss_pos;
      if (j < static_cast<int>(targets.size())) {
        st.last_logprobs(lp);
        nll -= lp[static_cast<std::size_t>(targets[static_cast<std::size_t>(j)])];
        if (nll > abandon_above) return std::numeric_limits<double>::infinity();
      }
    }
  }
  if (out_last_logprobs) st.last_logprobs(*out_last_logprobs);
  return nll;
}

std::vector<double> MicroTransformer::next_token_logprobs(const TokenSeq& context) const {
  if (context.empty()) throw AuditError("next_token_logprobs: micro-transformer requires a non-empty context");
  check_tokens(context);
  check_context_len(context.size());
  TokenSeq ids;
  ids.reserve(context.size() + 1);
  ids.push_back(bos_token());
  ids.insert(ids.end(), context.begin(), context.end());
  std::vector<double> lp;
  forward_incremental(ids, {}, 0, std::numeric_limits<double>::infinity(), &lp);
  return lp;
}

TokenSeq MicroTransformer::greedy_continue(const TokenSeq& prefix, int n) const {
  if (n < 0) throw AuditError("greedy_continue: negative count");
  if (prefix.empty()) throw AuditError("greedy_continue: empty prefix");
  check_tokens(prefix);
  check_context_len(prefix.size() + static_cast<std::size_t>(n));

  IncState st(cfg_, params_, tensors_, static_cast<int>(prefix.size()) + n);
  st.step(bos_token());
  for (Token t : prefix) st.step(t);
  TokenSeq out;
  out.reserve(static_cast<std::size_t>(n));
  std::vector<double> lp;
  for (int k = 0; k < n; ++k) {
    st.last_logprobs(lp);
    Token best = 0;
    for (Token t = 1; t < static_cast<Token>(lp.size()); ++t) {
      if (lp[static_cast<std::size_t>(t)] > lp[static_cast<std::size_t>(best)]) best = t;
    }
    out.push_back(best);
    if (k + 1 < n) st.step(best);
  }
  return out;
}

bool MicroTransformer::greedy_matches(const TokenSeq& prefix, const TokenSeq& target) const {
  if (prefix.empty()) throw AuditError("greedy_matches: empty prefix");
  if (target.empty()) throw AuditError("greedy_matches: empty target");
  check_tokens(prefix);
  check_tokens(target);
  check_context_len(prefix.size() + target.size());

  IncState st(cfg_, params_, tensors_, static_cast<int>(prefix.size() + target.size()));
  st.step(bos_token());
  for (Token t : prefix) st.step(t);
  std::vector<double> lp;
  for (std::size_t k = 0; k < target.size(); ++k) {
    st.last_logprobs(lp);
    Token best = 0;
    for (Token t = 1; t < static_cast<Token>(lp.size()); ++t) {
      if (lp[static_cast<std::size_t>(t)] > lp[static_cast<std::size_t>(best)]) best = t;
    }
    if (best != target[k]) return false;
    if (k + 1 < target.size()) st.step(best);
  }
  return true;
}

double MicroTransformer::target_nll(const TokenSeq& prefix, const TokenSeq& target, double abandon_above) const {
  if (prefix.empty()) throw AuditError("target_nll: empty prefix");
  if (target.empty()) throw AuditError("target_nll: empty target");
  check_tokens(prefix);
  check_tokens(target);
  check_context_len(prefix.size() + target.size());

  // Positions |prefix| .. |prefix|+|target|-1 of [BOS]+prefix+target[:-1]
  // predict target[0..]; the final target token never enters the input.
  TokenSeq ids;
  ids.reserve(prefix.size() + target.size());
  ids.push_back(bos_token());
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  ids.insert(ids.end(), target.begin(), target.end() - 1);
  return forward_incremental(ids, target, static_cast<int>(prefix.size()), abandon_above, nullptr);
}

// ---------------------------------------------------------------------------
// Staged forward + backward
// ---------------------------------------------------------------------------

double MicroTransformer::forward_backward(const TokenSeq& input_ids, const TokenSeq& targets, int first_loss_pos,
                                          double loss_scale, std::vector<double>* param_grads,
                                          std::vector<double>* input_grads,
                                          const std::vector<std::vector<double>>* mixed_rows,
                                          int mixed_first_pos) const {
  const int n = static_cast<int>(input_ids.size());
  const int d = cfg_.embed_dim;
  const int f = 4 * d;
  const int v = cfg_.vocab_size;
  const int heads = cfg_.heads;
  const int dh = d / heads;
  const int layers = cfg_.layers;
  const int n_loss = static_cast<int>(targets.size());
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto nd = static_cast<std::size_t>(n) * d;
  const float* wte = tensor(0);
  const float* wpe = tensor(1);

  assert(first_loss_pos + n_loss <= n);

  struct LayerCache {
    std::vector<double> xhat1, inv1, a1, q, k, vv, probs, merged, xhat2, inv2, a2, hp, ha;
  };
  std::vector<LayerCache> cache(static_cast<std::size_t>(layers));
  for (LayerCache& c : cache) {
    c.xhat1.assign(nd, 0.0);
    c.inv1.assign(static_cast<std::size_t>(n), 0.0);
    c.a1.assign(nd, 0.0);
    c.q.assign(nd, 0.0);
    c.k.assign(nd, 0.0);
    c.vv.assign(nd, 0.0);
    c.probs.assign(static_cast<std::size_t>(heads) * n * n, 0.0);
    c.merged.assign(nd, 0.0);
    c.xhat2.assign(nd, 0.0);
    c.inv2.assign(static_cast<std::size_t>(n), 0.0);
    c.a2.assign(nd, 0.0);
    c.hp.assign(static_cast<std::size_t>(n) * f, 0.0);
    c.ha.assign(static_cast<std::size_t>(n) * f, 0.0);
  }

  // --- forward ---
  std::vector<double> x(nd, 0.0);
  for (int t = 0; t < n; ++t) {
    double* xt = x.data() + static_cast<std::size_t>(t) * d;
    const bool mixed = mixed_rows && t >= mixed_first_pos && t < mixed_first_pos + static_cast<int>(mixed_rows->size());
    if (mixed) {
      const std::vector<double>& mix = (*mixed_rows)[static_cast<std::size_t>(t - mixed_first_pos)];
      for (int i = 0; i < d; ++i) xt[i] = 0.0;
      for (int w = 0; w < v; ++w) {
        const double c = mix[static_cast<std::size_t>(w)];
        if (c == 0.0) continue;
        const float* row = wte + static_cast<std::size_t>(w) * d;
        for (int i = 0; i < d; ++i) xt[i] += c * static_cast<double>(row[i]);
      }
    } else {
      const float* row = wte + static_cast<std::size_t>(input_ids[static_cast<std::size_t>(t)]) * d;
      for (int i = 0; i < d; ++i) xt[i] = static_cast<double>(row[i]);
    }
    const float* prow = wpe + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) xt[i] += static_cast<double>(prow[i]);
  }

  for (int l = 0; l < layers; ++l) {
    LayerCache& c = cache[static_cast<std::size_t>(l)];
    const std::size_t base = layer_base(l);
    for (int t = 0; t < n; ++t) {
      ln_forward(x.data() + static_cast<std::size_t>(t) * d, d, tensor(base + 0), tensor(base + 1),
                 c.xhat1.data() + static_cast<std::size_t>(t) * d, c.a1.data() + static_cast<std::size_t>(t) * d,
                 &c.inv1[static_cast<std::size_t>(t)]);
      matvec(tensor(base + 2), c.a1.data() + static_cast<std::size_t>(t) * d,
             c.q.data() + static_cast<std::size_t>(t) * d, d, d);
      matvec(tensor(base + 3), c.a1.data() + static_cast<std::size_t>(t) * d,
             c.k.data() + static_cast<std::size_t>(t) * d, d, d);
      matvec(tensor(base + 4), c.a1.data() + static_cast<std::size_t>(t) * d,
             c.vv.data() + static_cast<std::size_t>(t) * d, d, d);
    }
    for (int h = 0; h < heads; ++h) {
      const int ho = h * dh;
      for (int t = 0; t < n; ++t) {
        double* prow = c.probs.data() + (static_cast<std::size_t>(h) * n + t) * n;
        double max_s = -1e300;
        for (int u = 0; u <= t; ++u) {
          const double* qu = c.q.data() + static_cast<std::size_t>(t) * d + ho;
          const double* ku = c.k.data() + static_cast<std::size_t>(u) * d + ho;
          double acc = 0.0;
          for (int i = 0; i < dh; ++i) acc += qu[i] * ku[i];
          prow[u] = acc * inv_sqrt_dh;
          max_s = std::max(max_s, prow[u]);
        }
        double denom = 0.0;
        for (int u = 0; u <= t; ++u) {
          prow[u] = std::exp(prow[u] - max_s);
          denom += prow[u];
        }
        const double inv_denom = 1.0 / denom;
        for (int u = 0; u <= t; ++u) prow[u] *= inv_denom;
        double* mt = c.merged.data() + static_cast<std::size_t>(t) * d + ho;
        for (int i = 0; i < dh; ++i) mt[i] = 0.0;
        for (int u = 0; u <= t; ++u) {
          const double p = prow[u];
          const double* vu = c.vv.data() + static_cast<std::size_t>(u) * d + ho;
          for (int i = 0; i < dh; ++i) mt[i] += p * vu[i];
        }
      }
    }
    for (int t = 0; t < n; ++t) {
      double* xt = x.data() + static_cast<std::size_t>(t) * d;
      const float* wo = tensor(base + 5);
      for (int o = 0; o < d; ++o) {
        const float* row = wo + static_cast<std::size_t>(o) * d;
        double acc = 0.0;
        for (int i = 0; i < d; ++i) acc += static_cast<double>(row[i]) * c.merged[static_cast<std::size_t>(t) * d + i];
        xt[o] += acc;
      }
      ln_forward(xt, d, tensor(base + 6), tensor(base + 7), c.xhat2.data() + static_cast<std::size_t>(t) * d,
                 c.a2.data() + static_cast<std::size_t>(t) * d, &c.inv2[static_cast<std::size_t>(t)]);
      double* hpt = c.hp.data() + static_cast<std::size_t>(t) * f;
      double* hat = c.ha.data() + static_cast<std::size_t>(t) * f;
      matvec(tensor(base + 8), c.a2.data() + static_cast<std::size_t>(t) * d, hpt, f, d);
      const float* b1 = tensor(base + 9);
      for (int i = 0; i < f; ++i) {
        hpt[i] += static_cast<double>(b1[i]);
        hat[i] = gelu(hpt[i]);
      }
      const float* w2 = tensor(base + 10);
      const float* b2 = tensor(base + 11);
      for (int o = 0; o < d; ++o) {
        const float* row = w2 + static_cast<std::size_t>(o) * f;
        double acc = static_cast<double>(b2[o]);
        for (int i = 0; i < f; ++i) acc += static_cast<double>(row[i]) * hat[i];
        xt[o] += acc;
      }
    }
  }

  const std::size_t fin = tensors_.size() - 4;
  std::vector<double> xhatf(nd, 0.0), yf(nd, 0.0), invf(static_cast<std::size_t>(n), 0.0);
  std::vector<double> probs_out(static_cast<std::size_t>(n_loss) * v, 0.0);
  double loss = 0.0;
  for (int j = 0; j < n_loss; ++j) {
    const int t = first_loss_pos + j;
    ln_forward(x.data() + static_cast<std::size_t>(t) * d, d, tensor(fin), tensor(fin + 1),
               xhatf.data() + static_cast<std::size_t>(t) * d, yf.data() + static_cast<std::size_t>(t) * d,
               &invf[static_cast<std::size_t>(t)]);
    double* po = probs_out.data() + static_cast<std::size_t>(j) * v;
    const float* head_w = tensor(fin + 2);
    const float* head_b = tensor(fin + 3);
    for (int o = 0; o < v; ++o) {
      const float* row = head_w + static_cast<std::size_t>(o) * d;
      double acc = static_cast<double>(head_b[o]);
      for (int i = 0; i < d; ++i) acc += static_cast<double>(row[i]) * yf[static_cast<std::size_t>(t) * d + i];
      po[o] = acc;
    }
    const double lse = log_sum_exp(po, v);
    loss += loss_scale * (lse - po[targets[static_cast<std::size_t>(j)]]);
    for (int o = 0; o < v; ++o) po[o] = std::exp(po[o] - lse);
  }

  if (!param_grads && !input_grads) return loss;

  // --- backward ---
  const auto g = [&](std::size_t idx) -> double* {
    return param_grads ? param_grads->data() + tensors_[idx].offset : nullptr;
  };

  std::vector<double> dx(nd, 0.0);
  {
    std::vector<double> dy(static_cast<std::size_t>(d), 0.0);
    std::vector<double> dlogit(static_cast<std::size_t>(v), 0.0);
    for (int j = 0; j < n_loss; ++j) {
      const int t = first_loss_pos + j;
      const double* po = probs_out.data() + static_cast<std::size_t>(j) * v;
      for (int o = 0; o < v; ++o) dlogit[static_cast<std::size_t>(o)] = loss_scale * po[o];
      dlogit[static_cast<std::size_t>(targets[static_cast<std::size_t>(j)])] -= loss_scale;
      std::fill(dy.begin(), dy.end(), 0.0);
      matvec_transposed_add(tensor(fin + 2), dlogit.data(), dy.data(), v, d);
      if (param_grads) {
        outer_add(g(fin + 2), dlogit.data(), yf.data() + static_cast<std::size_t>(t) * d, v, d);
        double* dhb = g(fin + 3);
        for (int o = 0; o < v; ++o) dhb[o] += dlogit[static_cast<std::size_t>(o)];
      }
      ln_backward_add(dy.data(), xhatf.data() + static_cast<std::size_t>(t) * d, invf[static_cast<std::size_t>(t)], d,
                      tensor(fin), param_grads ? g(fin) : nullptr, param_grads ? g(fin + 1) : nullptr,
                      dx.data() + static_cast<std::size_t>(t) * d);
    }
  }

  std::vector<double> da(nd, 0.0), dq(nd, 0.0), dk(nd, 0.0), dv(nd, 0.0), dmerged(nd, 0.0);
  std::vector<double> dhp(static_cast<std::size_t>(f), 0.0);
  for (int l = layers - 1; l >= 0; --l) {
    const LayerCache& c = cache[static_cast<std::size_t>(l)];
    const std::size_t base = layer_base(l);

    // FFN branch: upstream dx is d(x_out); accumulate LN2-input gradient back
    // into dx so it becomes d(x_mid).
    std::fill(da.begin(), da.end(), 0.0);
    for (int t = 0; t < n; ++t) {
      const double* dxt = dx.data() + static_cast<std::size_t>(t) * d;
      const double* hat = c.ha.data() + static_cast<std::size_t>(t) * f;
      const double* hpt = c.hp.data() + static_cast<std::size_t>(t) * f;
      std::fill(dhp.begin(), dhp.end(), 0.0);
      matvec_transposed_add(tensor(base + 10), dxt, dhp.data(), d, f);
      if (param_grads) {
        outer_add(g(base + 10), dxt, hat, d, f);
        double* db2 = g(base + 11);
        for (int o = 0; o < d; ++o) db2[o] += dxt[o];
      }
      for (int i = 0; i < f; ++i) dhp[static_cast<std::size_t>(i)] *= gelu_deriv(hpt[i]);
      if (param_grads) {
        outer_add(g(base + 8), dhp.data(), c.a2.data() + static_cast<std::size_t>(t) * d, f, d);
        double* db1 = g(base + 9);
        for (int i = 0; i < f; ++i) db1[i] += dhp[static_cast<std::size_t>(i)];
      }
      matvec_transposed_add(tensor(base + 8), dhp.data(), da.data() + static_cast<std::size_t>(t) * d, f, d);
    }
    for (int t = 0; t < n; ++t) {
      ln_backward_add(da.data() + static_cast<std::size_t>(t) * d, c.xhat2.data() + static_cast<std::size_t>(t) * d,
                      c.inv2[static_cast<std::size_t>(t)], d, tensor(base + 6), param_grads ? g(base + 6) : nullptr,
                      param_grads ? g(base + 7) : nullptr, dx.data() + static_cast<std::size_t>(t) * d);
    }

    // Attention branch: dx currently holds d(x_mid).
    std::fill(dmerged.begin(), dmerged.end(), 0.0);
    for (int t = 0; t < n; ++t) {
      matvec_transposed_add(tensor(base + 5), dx.data() + static_cast<std::size_t>(t) * d,
                            dmerged.data() + static_cast<std::size_t>(t) * d, d, d);
      if (param_grads) {
        outer_add(g(base + 5), dx.data() + static_cast<std::size_t>(t) * d,
                  c.merged.data() + static_cast<std::size_t>(t) * d, d, d);
      }
    }
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (int h = 0; h < heads; ++h) {
      const int ho = h * dh;
      std::vector<double> dp(static_cast<std::size_t>(n), 0.0);
      for (int t = 0; t < n; ++t) {
        const double* prow = c.probs.data() + (static_cast<std::size_t>(h) * n + t) * n;
        const double* dm = dmerged.data() + static_cast<std::size_t>(t) * d + ho;
        double dot = 0.0;
        for (int u = 0; u <= t; ++u) {
          const double* vu = c.vv.data() + static_cast<std::size_t>(u) * d + ho;
          double acc = 0.0;
          for (int i = 0; i < dh; ++i) acc += dm[i] * vu[i];
          dp[static_cast<std::size_t>(u)] = acc;
          dot += acc * prow[u];
          double* dvu = dv.data() + static_cast<std::size_t>(u) * d + ho;
          for (int i = 0; i < dh; ++i) dvu[i] += prow[u] * dm[i];
        }
        for (int u = 0; u <= t; ++u) {
          const double ds = prow[u] * (dp[static_cast<std::size_t>(u)] - dot) * inv_sqrt_dh;
          if (ds == 0.0) continue;
          const double* ku = c.k.data() + static_cast<std::size_t>(u) * d + ho;
          const double* qt = c.q.data() + static_cast<std::size_t>(t) * d + ho;
          double* dqt = dq.data() + static_cast<std::size_t>(t) * d + ho;
          double* dku = dk.data() + static_cast<std::size_t>(u) * d + ho;
          for (int i = 0; i < dh; ++i) {
            dqt[i] += ds * ku[i];
            dku[i] += ds * qt[i];
          }
        }
      }
    }
    std::fill(da.begin(), da.end(), 0.0);
    for (int t = 0; t < n; ++t) {
      const std::size_t td = static_cast<std::size_t>(t) * d;
      matvec_transposed_add(tensor(base + 2), dq.data() + td, da.data() + td, d, d);
      matvec_transposed_add(tensor(base + 3), dk.data() + td, da.data() + td, d, d);
      matvec_transposed_add(tensor(base + 4), dv.data() + td, da.data() + td, d, d);
      if (param_grads) {
        outer_add(g(base + 2), dq.data() + td, c.a1.data() + td, d, d);
        outer_add(g(base + 3), dk.data() + td, c.a1.data() + td, d, d);
        outer_add(g(base + 4), dv.data() + td, c.a1.data() + td, d, d);
      }
    }
    for (int t = 0; t < n; ++t) {
      ln_backward_add(da.data() + static_cast<std::size_t>(t) * d, c.xhat1.data() + static_cast<std::size_t>(t) * d,
                      c.inv1[static_cast<std::size_t>(t)], d, tensor(base + 0), param_grads ? g(base + 0) : nullptr,
                      param_grads ? g(base + 1) : nullptr, dx.data() + static_cast<std::size_t>(t) * d);
    }
  }

  if (param_grads) {
    double* dwte = g(0);
    double* dwpe = g(1);
    for (int t = 0; t < n; ++t) {
      const double* dxt = dx.data() + static_cast<std::size_t>(t) * d;
      double* erow = dwte + static_cast<std::size_t>(input_ids[static_cast<std::size_t>(t)]) * d;
      double* prow = dwpe + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) {
        erow[i] += dxt[i];
        prow[i] += dxt[i];
      }
    }
  }
  if (input_grads) *input_grads = dx;
  return loss;
}

std::vector<std::vector<double>> MicroTransformer::input_token_gradient(const TokenSeq& prefix,
                                                                        const TokenSeq& target) const {
  if (prefix.empty()) throw AuditError("input_token_gradient: empty prefix");
  if (target.empty()) throw AuditError("input_token_gradient: empty target");
  check_tokens(prefix);
  check_tokens(target);
  check_context_len(prefix.size() + target.size());

  TokenSeq ids;
  ids.reserve(prefix.size() + target.size());
  ids.push_back(bos_token());
  ids.insert(ids.end(), prefix.begin(), prefix.end());
  ids.insert(ids.end(), target.begin(), target.end() - 1);

  std::vector<double> input_grads;
  forward_backward(ids, target, static_cast<int>(prefix.size()), 1.0, nullptr, &input_grads, nullptr, 0);

  // d(NLL)/d(one-hot[i][w]) = <d(NLL)/d(embedding at prefix position i), wte_w>
  const int d = cfg_.embed_dim;
  const int v = cfg_.vocab_size;
  const float* wte = tensor(0);
  std::vector<std::vector<double>> grad(prefix.size(), std::vector<double>(static_cast<std::size_t>(v), 0.0));
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    const double* dxt = input_grads.data() + (i + 1) * static_cast<std::size_t>(d);  // +1 skips BOS
    for (int w = 0; w < v; ++w) {
      const float* row = wte + static_cast<std::size_t>(w) * d;
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += dxt[j] * static_cast<double>(row[j]);
      grad[i][static_cast<std::size_t>(w)] = acc;
    }
  }
  return grad;
}

double MicroTransformer::target_nll_mixed(const std::vector<std::vector<double>>& prefix_mix,
                                          const TokenSeq& target) const {
  if (prefix_mix.empty()) throw AuditError("target_nll_mixed: empty prefix");
  if (target.empty()) throw AuditError("target_nll_mixed: empty target");
  check_tokens(target);
  check_context_len(prefix_mix.size() + target.size());
  for (const auto& row : prefix_mix) {
    if (static_cast<int>(row.size()) != cfg_.vocab_size) {
      throw AuditError("target_nll_mixed: mix row size must equal vocab_size");
    }
  }

  TokenSeq ids(prefix_mix.size() + target.size(), 0);  // mixed positions ignore ids
  ids[0] = bos_token();
  for (std::size_t j = 0; j + 1 < target.size(); ++j) ids[1 + prefix_mix.size() + j] = target[j];
  ids.resize(prefix_mix.size() + target.size());
  return forward_backward(ids, target, static_cast<int>(prefix_mix.size()), 1.0, nullptr, nullptr, &prefix_mix, 1);
}

double MicroTransformer::train_step(const TokenSeq& tokens, AdamState& opt) {
  if (tokens.empty()) throw AuditError("train_step: empty sequence");
  check_tokens(tokens);
  check_context_len(tokens.size());
  if (opt.m.size() != params_.size()) {
    opt.m.assign(params_.size(), 0.0);
    opt.v.assign(params_.size(), 0.0);
  }

  TokenSeq ids;
  ids.reserve(tokens.size());
  ids.push_back(bos_token());
  ids.insert(ids.end(), tokens.begin(), tokens.end() - 1);

  std::vector<double> grads(params_.size(), 0.0);
  const double loss =
      forward_backward(ids, tokens, 0, 1.0 / static_cast<double>(tokens.size()), &grads, nullptr, nullptr, 0);

  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const double gi = grads[i];
    opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * gi;
    opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * gi * gi;
    const double mhat = opt.m[i] / bc1;
    const double vhat = opt.v[i] / bc2;
    params_[i] = static_cast<float>(static_cast<double>(params_[i]) - opt.lr * mhat / (std::sqrt(vhat) + opt.eps));
  }
  return loss;
}

MicroTransformer train_micro_transformer(const MicroTransformerConfig& cfg, const Corpus& corpus,
                                         std::uint64_t train_seed, TrainingMeta* meta, const EpochCallback& on_epoch) {
  cfg.validate();
  if (corpus.empty()) throw EmptyCorpusError("train: empty corpus");
  for (const Record& rec : corpus.records) {
    if (rec.tokens.empty()) throw AuditError("train: record \"" + rec.id + "\" has no tokens");
    if (static_cast<int>(rec.tokens.size()) > cfg.context_len) {
      throw ContextOverflowError("train: record \"" + rec.id + "\" of length " + std::to_string(rec.tokens.size()) +
                                 " exceeds context_len " + std::to_string(cfg.context_len));
    }
    for (Token t : rec.tokens) {
      if (t < 0 || t >= cfg.vocab_size) {
        throw InvalidTokenError("train: record \"" + rec.id + "\" has token " + std::to_string(t) +
                                " outside vocabulary");
      }
    }
  }

  MicroTransformer model(cfg);
  AdamState opt;
  opt.lr = cfg.learning_rate;

  // Weight acts as a repetition multiplier: the visit schedule contains each
  // record `weight` times per epoch, reshuffled per epoch.
  std::vector<std::size_t> schedule;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    for (int w = 0; w < corpus.records[i].weight; ++w) schedule.push_back(i);
  }

  TrainingMeta local;
  local.corpus_hash = corpus_hash(corpus);
  local.epochs = cfg.epochs;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_run_seed(train_seed, "train-epoch", static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = schedule.size(); i > 1; --i) {
      const std::size_t j = rng.below(i);
      std::swap(schedule[i - 1], schedule[j]);
    }
    double sum_loss = 0.0;
    for (std::size_t idx : schedule) {
      sum_loss += model.train_step(corpus.records[idx].tokens, opt);
    }
    const double mean_loss = sum_loss / static_cast<double>(schedule.size());
    local.epoch_losses.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  local.final_loss = local.epoch_losses.empty() ? 0.0 : local.epoch_losses.back();
  if (meta) *meta = local;
  return model;
}

}  // namespace memaudit
