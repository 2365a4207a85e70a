#include "grapam/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace grapam {

using nlohmann::json;

std::string to_string(ToyArch a) {
  return a == ToyArch::LINEAR ? "LINEAR" : "TINY_TRANSFORMER";
}

ToyArch toy_arch_from_string(const std::string& s) {
  if (s == "LINEAR") return ToyArch::LINEAR;
  if (s == "TINY_TRANSFORMER") return ToyArch::TINY_TRANSFORMER;
  throw Error("unknown toy architecture: \"" + s + "\"");
}

void ToyConfig::validate() const {
  if (vocab < 1) throw Error("vocab must be >= 1");
  if (architecture == ToyArch::TINY_TRANSFORMER) {
    if (width < 1 || layers < 1 || heads < 1)
      throw Error("transformer dims must be >= 1");
    if (width % heads != 0) throw Error("width must be divisible by head count");
  }
}

void SynthSpec::validate() const {
  if (group_count < 1) throw Error("group count must be >= 1");
  if (vocab < 2) throw Error("synthetic vocab must be >= 2");
  if (label_noise < 0.0 || label_noise >= 1.0)
    throw Error("label noise rate must be in [0,1)");
  if (seq_len_min < 1 || seq_len_max < seq_len_min)
    throw Error("bad sequence length range");
  if (samples_per_group < 1) throw Error("samples per group must be >= 1");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw Error("learning rate must be >= 0");
  if (batch_size < 1) throw Error("batch size must be >= 1");
  if (epochs < 1) throw Error("epochs must be >= 1");
}

namespace {

std::string meta_arch_key = "toy.arch";

std::vector<std::pair<std::string, std::vector<uint64_t>>> param_schema(
    const ToyConfig& cfg) {
  std::vector<std::pair<std::string, std::vector<uint64_t>>> out;
  size_t V = cfg.vocab, W = cfg.width;
  if (cfg.architecture == ToyArch::LINEAR) {
    out.push_back({"embed.tok", {V, V}});
    out.push_back({"head.out", {V}});
  } else {
    out.push_back({"embed.tok", {V, W}});
    for (const char* stack : {"enc", "dec"}) {
      for (size_t l = 0; l < cfg.layers; ++l) {
        std::string base = std::string(stack) + "." + std::to_string(l);
        for (const char* proj : {"q", "k", "v", "o"}) {
          out.push_back({base + ".attn." + proj + ".w", {W, W}});
          out.push_back({base + ".attn." + proj + ".b", {W}});
        }
        out.push_back({base + ".ffn.w1.w", {W, W}});
        out.push_back({base + ".ffn.w1.b", {W}});
        out.push_back({base + ".ffn.w2.w", {W, W}});
        out.push_back({base + ".ffn.w2.b", {W}});
      }
    }
    out.push_back({"head.out.w", {W, V}});
    out.push_back({"head.out.b", {V}});
  }
  std::sort(out.begin(), out.end());
  return out;
}

// y[T x n] += x[T x m] . w[m x n]
void matmul_add(const double* x, const double* w, double* y, size_t T, size_t m,
                size_t n) {
  for (size_t t = 0; t < T; ++t)
    for (size_t i = 0; i < m; ++i) {
      double xv = x[t * m + i];
      const double* wr = w + i * n;
      double* yr = y + t * n;
      for (size_t j = 0; j < n; ++j) yr[j] += xv * wr[j];
    }
}

// grads of y = x.w: dx += dy.w^T, dw += x^T.dy
void matmul_back(const double* x, const double* w, const double* dy, double* dx,
                 double* dw, size_t T, size_t m, size_t n) {
  for (size_t t = 0; t < T; ++t)
    for (size_t i = 0; i < m; ++i) {
      const double* wr = w + i * n;
      const double* dyr = dy + t * n;
      double acc = 0.0;
      for (size_t j = 0; j < n; ++j) acc += dyr[j] * wr[j];
      if (dx) dx[t * m + i] += acc;
      double xv = x[t * m + i];
      double* dwr = dw + i * n;
      for (size_t j = 0; j < n; ++j) dwr[j] += xv * dyr[j];
    }
}

void add_bias(double* y, const double* b, size_t T, size_t n) {
  for (size_t t = 0; t < T; ++t)
    for (size_t j = 0; j < n; ++j) y[t * n + j] += b[j];
}

void bias_back(const double* dy, double* db, size_t T, size_t n) {
  for (size_t t = 0; t < T; ++t)
    for (size_t j = 0; j < n; ++j) db[j] += dy[t * n + j];
}

void softmax_row(double* row, size_t n) {
  double mx = row[0];
  for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  for (size_t j = 0; j < n; ++j) row[j] /= sum;
}

struct AttnCache {
  std::vector<double> q, k, v;      // T x W / S x W
  std::vector<double> probs;        // H x T x S
  std::vector<double> ctx;          // T x W
};

struct FfnCache {
  std::vector<double> pre;   // T x W, pre-relu
  std::vector<double> act;   // T x W
};

struct LayerCache {
  std::vector<double> in;        // stream input
  AttnCache attn;
  std::vector<double> post_attn;  // in + attn out
  FfnCache ffn;
  std::vector<double> out;       // post_attn + ffn out
};

}  // namespace

ToyObjective::ToyObjective(const ToyConfig& cfg_, std::vector<Utterance> batch_)
    : cfg(cfg_), batch(std::move(batch_)) {
  cfg.validate();
  auto schema = param_schema(cfg);
  size_t off = 0;
  for (const auto& [name, shape] : schema) {
    param_names.push_back(name);
    param_offsets.push_back(off);
    off += shape_element_count(shape);
  }
  param_count = off;
}

std::vector<double> ToyObjective::flatten(const Checkpoint& ckpt) const {
  std::vector<double> flat(param_count);
  auto schema = param_schema(cfg);
  for (size_t i = 0; i < param_names.size(); ++i) {
    const Tensor& t = ckpt.at(param_names[i]);
    if (t.shape != schema[i].second)
      throw Error("checkpoint tensor \"" + param_names[i] +
                  "\" does not match the configured architecture");
    for (size_t j = 0; j < t.data.size(); ++j)
      flat[param_offsets[i] + j] = double(t.data[j]);
  }
  return flat;
}

Checkpoint ToyObjective::unflatten(const std::vector<double>& flat,
                                   const Checkpoint& like) const {
  Checkpoint out;
  out.meta = like.meta;
  auto schema = param_schema(cfg);
  for (size_t i = 0; i < param_names.size(); ++i) {
    Tensor t;
    t.shape = schema[i].second;
    size_t n = shape_element_count(t.shape);
    t.data.resize(n);
    for (size_t j = 0; j < n; ++j)
      t.data[j] = float(flat[param_offsets[i] + j]);
    out.put(param_names[i], std::move(t));
  }
  return out;
}

namespace {

class TransformerPass {
 public:
  TransformerPass(const ToyConfig& cfg, const double* p,
                  const std::map<std::string, size_t>& off)
      : cfg_(cfg), p_(p), off_(off) {}

  const double* param(const std::string& name) const {
    return p_ + off_.at(name);
  }

  // attention with queries from x (T rows), keys/values from m (S rows)
  void attn_forward(const std::string& base, const double* x, size_t T,
                    const double* m, size_t S, AttnCache& c,
                    std::vector<double>& out) const {
    size_t W = cfg_.width, H = cfg_.heads, dh = W / H;
    double scale = 1.0 / std::sqrt(double(dh));
    c.q.assign(T * W, 0.0);
    c.k.assign(S * W, 0.0);
    c.v.assign(S * W, 0.0);
    matmul_add(x, param(base + ".q.w"), c.q.data(), T, W, W);
    add_bias(c.q.data(), param(base + ".q.b"), T, W);
    matmul_add(m, param(base + ".k.w"), c.k.data(), S, W, W);
    add_bias(c.k.data(), param(base + ".k.b"), S, W);
    matmul_add(m, param(base + ".v.w"), c.v.data(), S, W, W);
    add_bias(c.v.data(), param(base + ".v.b"), S, W);

    c.probs.assign(H * T * S, 0.0);
    c.ctx.assign(T * W, 0.0);
    for (size_t h = 0; h < H; ++h) {
      for (size_t t = 0; t < T; ++t) {
        double* prow = c.probs.data() + (h * T + t) * S;
        for (size_t s = 0; s < S; ++s) {
          double dot = 0.0;
          for (size_t j = 0; j < dh; ++j)
            dot += c.q[t * W + h * dh + j] * c.k[s * W + h * dh + j];
          prow[s] = dot * scale;
        }
        softmax_row(prow, S);
        for (size_t s = 0; s < S; ++s)
          for (size_t j = 0; j < dh; ++j)
            c.ctx[t * W + h * dh + j] += prow[s] * c.v[s * W + h * dh + j];
      }
    }
    out.assign(T * W, 0.0);
    matmul_add(c.ctx.data(), param(base + ".o.w"), out.data(), T, W, W);
    add_bias(out.data(), param(base + ".o.b"), T, W);
  }

  // dx/dm accumulate query-side and key/value-side input grads
  void attn_backward(const std::string& base, const double* x, size_t T,
                     const double* m, size_t S, const AttnCache& c,
                     const double* dout, double* dx, double* dm,
                     double* gp) const {
    size_t W = cfg_.width, H = cfg_.heads, dh = W / H;
    double scale = 1.0 / std::sqrt(double(dh));
    auto g = [&](const std::string& name) { return gp + off_.at(name); };

    std::vector<double> dctx(T * W, 0.0);
    matmul_back(c.ctx.data(), param(base + ".o.w"), dout, dctx.data(),
                g(base + ".o.w"), T, W, W);
    bias_back(dout, g(base + ".o.b"), T, W);

    std::vector<double> dq(T * W, 0.0), dk(S * W, 0.0), dv(S * W, 0.0);
    std::vector<double> dprow(S), dscore(S);
    for (size_t h = 0; h < H; ++h) {
      for (size_t t = 0; t < T; ++t) {
        const double* prow = c.probs.data() + (h * T + t) * S;
        for (size_t s = 0; s < S; ++s) {
          double acc = 0.0;
          for (size_t j = 0; j < dh; ++j)
            acc += dctx[t * W + h * dh + j] * c.v[s * W + h * dh + j];
          dprow[s] = acc;
          for (size_t j = 0; j < dh; ++j)
            dv[s * W + h * dh + j] += prow[s] * dctx[t * W + h * dh + j];
        }
        double dot = 0.0;
        for (size_t s = 0; s < S; ++s) dot += dprow[s] * prow[s];
        for (size_t s = 0; s < S; ++s) dscore[s] = prow[s] * (dprow[s] - dot);
        for (size_t s = 0; s < S; ++s) {
          double ds = dscore[s] * scale;
          for (size_t j = 0; j < dh; ++j) {
            dq[t * W + h * dh + j] += ds * c.k[s * W + h * dh + j];
            dk[s * W + h * dh + j] += ds * c.q[t * W + h * dh + j];
          }
        }
      }
    }
    matmul_back(x, param(base + ".q.w"), dq.data(), dx, g(base + ".q.w"), T, W, W);
    bias_back(dq.data(), g(base + ".q.b"), T, W);
    matmul_back(m, param(base + ".k.w"), dk.data(), dm, g(base + ".k.w"), S, W, W);
    bias_back(dk.data(), g(base + ".k.b"), S, W);
    matmul_back(m, param(base + ".v.w"), dv.data(), dm, g(base + ".v.w"), S, W, W);
    bias_back(dv.data(), g(base + ".v.b"), S, W);
  }

  void ffn_forward(const std::string& base, const double* x, size_t T,
                   FfnCache& c, std::vector<double>& out) const {
    size_t W = cfg_.width;
    c.pre.assign(T * W, 0.0);
    matmul_add(x, param(base + ".w1.w"), c.pre.data(), T, W, W);
    add_bias(c.pre.data(), param(base + ".w1.b"), T, W);
    c.act.resize(T * W);
    for (size_t i = 0; i < T * W; ++i) c.act[i] = std::max(0.0, c.pre[i]);
    out.assign(T * W, 0.0);
    matmul_add(c.act.data(), param(base + ".w2.w"), out.data(), T, W, W);
    add_bias(out.data(), param(base + ".w2.b"), T, W);
  }

  void ffn_backward(const std::string& base, const double* x, size_t T,
                    const FfnCache& c, const double* dout, double* dx,
                    double* gp) const {
    size_t W = cfg_.width;
    auto g = [&](const std::string& name) { return gp + off_.at(name); };
    std::vector<double> dact(T * W, 0.0);
    matmul_back(c.act.data(), param(base + ".w2.w"), dout, dact.data(),
                g(base + ".w2.w"), T, W, W);
    bias_back(dout, g(base + ".w2.b"), T, W);
    for (size_t i = 0; i < T * W; ++i)
      if (c.pre[i] <= 0.0) dact[i] = 0.0;
    matmul_back(x, param(base + ".w1.w"), dact.data(), dx, g(base + ".w1.w"), T, W, W);
    bias_back(dact.data(), g(base + ".w1.b"), T, W);
  }

 private:
  const ToyConfig& cfg_;
  const double* p_;
  const std::map<std::string, size_t>& off_;
};

}  // namespace

namespace {

struct Workspace {
  std::map<std::string, size_t> offsets;
};

double utterance_pass(const ToyConfig& cfg, const double* p,
                      const std::map<std::string, size_t>& off,
                      const Utterance& utt, double* gp,
                      std::vector<size_t>* decoded) {
  size_t V = cfg.vocab;
  size_t T = utt.input.size();
  if (T == 0) throw Error("empty utterance: \"" + utt.id + "\"");
  for (size_t t : utt.input)
    if (t >= V) throw Error("input token out of vocab in \"" + utt.id + "\"");
  if (!decoded) {
    if (utt.target.size() != T)
      throw Error("target length mismatch in \"" + utt.id + "\"");
    for (size_t t : utt.target)
      if (t >= V) throw Error("target token out of vocab in \"" + utt.id + "\"");
  }

  if (cfg.architecture == ToyArch::LINEAR) {
    const double* table = p + off.at("embed.tok");  // V x V
    const double* bias = p + off.at("head.out");    // V
    double* gtable = gp ? gp + off.at("embed.tok") : nullptr;
    double* gbias = gp ? gp + off.at("head.out") : nullptr;
    double loss = 0.0;
    std::vector<double> prob(V);
    if (decoded) decoded->resize(T);
    for (size_t t = 0; t < T; ++t) {
      size_t x = utt.input[t];
      for (size_t j = 0; j < V; ++j) prob[j] = table[x * V + j] + bias[j];
      if (decoded) {
        size_t arg = 0;
        for (size_t j = 1; j < V; ++j)
          if (prob[j] > prob[arg]) arg = j;
        (*decoded)[t] = arg;
        continue;
      }
      softmax_row(prob.data(), V);
      size_t y = utt.target[t];
      loss += -std::log(std::max(prob[y], 1e-300));
      if (gp) {
        for (size_t j = 0; j < V; ++j) {
          double d = (prob[j] - (j == y ? 1.0 : 0.0)) / double(T);
          gtable[x * V + j] += d;
          gbias[j] += d;
        }
      }
    }
    return decoded ? 0.0 : loss / double(T);
  }

  // TINY_TRANSFORMER
  size_t W = cfg.width, L = cfg.layers;
  TransformerPass net(cfg, p, off);

  std::vector<double> embedded(T * W);
  const double* embed = p + off.at("embed.tok");
  for (size_t t = 0; t < T; ++t)
    for (size_t j = 0; j < W; ++j)
      embedded[t * W + j] = embed[utt.input[t] * W + j];

  auto run_stack = [&](const char* stack, const std::vector<double>& in,
                       const double* memory, size_t mem_len,
                       std::vector<LayerCache>& caches) {
    std::vector<double> h = in;
    caches.resize(L);
    for (size_t l = 0; l < L; ++l) {
      LayerCache& c = caches[l];
      c.in = h;
      std::string base = std::string(stack) + "." + std::to_string(l);
      const double* kv = memory ? memory : c.in.data();
      size_t S = memory ? mem_len : T;
      std::vector<double> a;
      net.attn_forward(base + ".attn", c.in.data(), T, kv, S, c.attn, a);
      c.post_attn.resize(T * W);
      for (size_t i = 0; i < T * W; ++i) c.post_attn[i] = c.in[i] + a[i];
      std::vector<double> f;
      net.ffn_forward(base + ".ffn", c.post_attn.data(), T, c.ffn, f);
      c.out.resize(T * W);
      for (size_t i = 0; i < T * W; ++i) c.out[i] = c.post_attn[i] + f[i];
      h = c.out;
    }
    return h;
  };

  std::vector<LayerCache> enc_caches, dec_caches;
  std::vector<double> enc_out = run_stack("enc", embedded, nullptr, 0, enc_caches);
  std::vector<double> dec_out =
      run_stack("dec", embedded, enc_out.data(), T, dec_caches);

  const double* wh = p + off.at("head.out.w");  // W x V
  const double* bh = p + off.at("head.out.b");  // V
  std::vector<double> logits(T * V, 0.0);
  matmul_add(dec_out.data(), wh, logits.data(), T, W, V);
  add_bias(logits.data(), bh, T, V);

  if (decoded) {
    decoded->resize(T);
    for (size_t t = 0; t < T; ++t) {
      size_t arg = 0;
      for (size_t j = 1; j < V; ++j)
        if (logits[t * V + j] > logits[t * V + arg]) arg = j;
      (*decoded)[t] = arg;
    }
    return 0.0;
  }

  double loss = 0.0;
  std::vector<double> dlogits(T * V);
  for (size_t t = 0; t < T; ++t) {
    double* row = logits.data() + t * V;
    softmax_row(row, V);
    size_t y = utt.target[t];
    loss += -std::log(std::max(row[y], 1e-300));
    for (size_t j = 0; j < V; ++j)
      dlogits[t * V + j] = (row[j] - (j == y ? 1.0 : 0.0)) / double(T);
  }
  loss /= double(T);
  if (!gp) return loss;

  std::vector<double> d_dec(T * W, 0.0);
  matmul_back(dec_out.data(), wh, dlogits.data(), d_dec.data(),
              gp + off.at("head.out.w"), T, W, V);
  bias_back(dlogits.data(), gp + off.at("head.out.b"), T, V);

  auto back_stack = [&](const char* stack, std::vector<LayerCache>& caches,
                        std::vector<double>& dh, const double* memory,
                        double* dmemory) {
    for (size_t l = L; l-- > 0;) {
      LayerCache& c = caches[l];
      std::string base = std::string(stack) + "." + std::to_string(l);
      // out = post_attn + ffn(post_attn)
      std::vector<double> d_post(dh);
      net.ffn_backward(base + ".ffn", c.post_attn.data(), T, c.ffn, dh.data(),
                       d_post.data(), gp);
      // post_attn = in + attn(in, kv)
      std::vector<double> d_in(d_post);
      const double* kv = memory ? memory : c.in.data();
      double* dkv = memory ? dmemory : d_in.data();
      net.attn_backward(base + ".attn", c.in.data(), T, kv, T, c.attn,
                        d_post.data(), d_in.data(), dkv, gp);
      dh = std::move(d_in);
    }
  };

  std::vector<double> d_enc_out(T * W, 0.0);
  back_stack("dec", dec_caches, d_dec, enc_out.data(), d_enc_out.data());
  std::vector<double> d_emb_from_dec = d_dec;  // decoder stream starts at embedding

  back_stack("enc", enc_caches, d_enc_out, nullptr, nullptr);
  // encoder stream also starts at embedding
  double* gembed = gp + off.at("embed.tok");
  for (size_t t = 0; t < T; ++t)
    for (size_t j = 0; j < W; ++j)
      gembed[utt.input[t] * W + j] +=
          d_enc_out[t * W + j] + d_emb_from_dec[t * W + j];
  return loss;
}

}  // namespace

double ToyObjective::loss_grad(const std::vector<double>& params,
                               std::vector<double>& grad) const {
  if (params.size() != param_count) throw Error("bad parameter vector size");
  if (batch.empty()) throw Error("objective has no utterances");
  std::map<std::string, size_t> off;
  for (size_t i = 0; i < param_names.size(); ++i)
    off[param_names[i]] = param_offsets[i];

  grad.assign(param_count, 0.0);
  double total = 0.0;
  for (const auto& utt : batch)
    total += utterance_pass(cfg, params.data(), off, utt, grad.data(), nullptr);
  double inv = 1.0 / double(batch.size());
  for (double& g : grad) g *= inv;
  return total * inv;
}

double ToyObjective::loss(const std::vector<double>& params) const {
  if (params.size() != param_count) throw Error("bad parameter vector size");
  if (batch.empty()) throw Error("objective has no utterances");
  std::map<std::string, size_t> off;
  for (size_t i = 0; i < param_names.size(); ++i)
    off[param_names[i]] = param_offsets[i];
  double total = 0.0;
  for (const auto& utt : batch)
    total += utterance_pass(cfg, params.data(), off, utt, nullptr, nullptr);
  return total / double(batch.size());
}

std::vector<size_t> ToyObjective::greedy(const std::vector<double>& params,
                                         const std::vector<size_t>& input) const {
  std::map<std::string, size_t> off;
  for (size_t i = 0; i < param_names.size(); ++i)
    off[param_names[i]] = param_offsets[i];
  Utterance utt;
  utt.id = "<decode>";
  utt.input = input;
  std::vector<size_t> out;
  utterance_pass(cfg, params.data(), off, utt, nullptr, &out);
  return out;
}

Checkpoint init_model(const ToyConfig& cfg) {
  cfg.validate();
  Checkpoint ckpt;
  Rng rng(cfg.seed);
  auto schema = param_schema(cfg);
  for (const auto& [name, shape] : schema) {
    Tensor t;
    t.shape = shape;
    size_t n = shape_element_count(shape);
    t.data.resize(n);
    bool is_bias = shape.size() == 1 && name != "head.out";
    double scale = cfg.architecture == ToyArch::LINEAR
                       ? 0.01
                       : 0.5 / std::sqrt(double(cfg.width));
    for (size_t j = 0; j < n; ++j)
      t.data[j] = is_bias ? 0.0f : float(scale * rng.next_gaussian());
    ckpt.put(name, std::move(t));
  }
  ckpt.meta[meta_arch_key] = to_string(cfg.architecture);
  ckpt.meta["toy.vocab"] = std::to_string(cfg.vocab);
  ckpt.meta["toy.width"] = std::to_string(cfg.width);
  ckpt.meta["toy.layers"] = std::to_string(cfg.layers);
  ckpt.meta["toy.heads"] = std::to_string(cfg.heads);
  ckpt.meta["toy.seed"] = std::to_string(cfg.seed);
  return ckpt;
}

ToyConfig config_from_checkpoint(const Checkpoint& ckpt) {
  ToyConfig cfg;
  auto it = ckpt.meta.find(meta_arch_key);
  if (it != ckpt.meta.end()) {
    cfg.architecture = toy_arch_from_string(it->second);
    cfg.vocab = std::stoul(ckpt.meta.at("toy.vocab"));
    cfg.width = std::stoul(ckpt.meta.at("toy.width"));
    cfg.layers = std::stoul(ckpt.meta.at("toy.layers"));
    cfg.heads = std::stoul(ckpt.meta.at("toy.heads"));
    return cfg;
  }
  // fall back to inferring from tensor names/shapes
  if (ckpt.contains("head.out.w")) {
    cfg.architecture = ToyArch::TINY_TRANSFORMER;
    const Tensor& h = ckpt.at("head.out.w");
    cfg.width = h.shape[0];
    cfg.vocab = h.shape[1];
    size_t layers = 0;
    while (ckpt.contains("enc." + std::to_string(layers) + ".ffn.w1.w")) ++layers;
    cfg.layers = layers;
    cfg.heads = 1;
  } else {
    cfg.architecture = ToyArch::LINEAR;
    cfg.vocab = ckpt.at("head.out").shape[0];
  }
  cfg.validate();
  return cfg;
}

namespace {

std::vector<size_t> zipf_cdf_sample(Rng& rng, const std::vector<double>& cdf,
                                    size_t count) {
  std::vector<size_t> out(count);
  for (size_t i = 0; i < count; ++i) {
    double u = rng.next_double();
    out[i] = size_t(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    if (out[i] >= cdf.size()) out[i] = cdf.size() - 1;
  }
  return out;
}

json utterance_record(const Utterance& utt) {
  return json{{"id", utt.id},
              {"audio_ref", "synth://g" + std::to_string(utt.group) + "/" + utt.id},
              {"transcript_ref",
               "synth://g" + std::to_string(utt.group) + "/" + utt.id + "#ref"},
              {"group", utt.group},
              {"input", utt.input},
              {"target", utt.target}};
}

}  // namespace

SynthData gen_synth(const SynthSpec& spec) {
  spec.validate();
  size_t V = spec.vocab, G = spec.group_count;

  // shared base language: Zipf-like token distribution
  std::vector<double> cdf(V);
  {
    double z = 0.0;
    for (size_t i = 0; i < V; ++i) z += 1.0 / double(i + 1);
    double run = 0.0;
    for (size_t i = 0; i < V; ++i) {
      run += 1.0 / (double(i + 1) * z);
      cdf[i] = run;
    }
  }

  // per-group token-substitution ciphers
  std::vector<std::vector<size_t>> cipher(G);
  for (size_t g = 0; g < G; ++g) {
    cipher[g].resize(V);
    std::iota(cipher[g].begin(), cipher[g].end(), 0);
    Rng prng(spec.seed * 1000003ull + g + 1);
    for (size_t i = V; i-- > 1;)
      std::swap(cipher[g][i], cipher[g][prng.next_index(i + 1)]);
  }
  std::vector<std::vector<size_t>> inverse_cipher(G, std::vector<size_t>(V));
  for (size_t g = 0; g < G; ++g)
    for (size_t i = 0; i < V; ++i) inverse_cipher[g][cipher[g][i]] = i;

  // Group-indicative statistic: mean log-likelihood of the utterance's input
  // under each group's cipher, projected to 2-D with a seeded Gaussian matrix.
  std::vector<double> logp(V);
  {
    double z = 0.0;
    for (size_t i = 0; i < V; ++i) z += 1.0 / double(i + 1);
    for (size_t i = 0; i < V; ++i) logp[i] = -std::log(double(i + 1) * z);
  }
  // The centered profile lies in the sum-zero subspace (G-1 dims). Project
  // from that subspace through a seeded orthonormalized matrix so group
  // separation is not collapsed by an unlucky draw.
  const size_t M = G > 1 ? G - 1 : 1;
  std::vector<double> basis(M * G, 0.0);
  for (size_t r = 0; r + 1 < G; ++r) {
    basis[r * G + r] = 1.0;
    basis[r * G + r + 1] = -1.0;
    for (size_t p = 0; p < r; ++p) {
      double dot = 0.0;
      for (size_t j = 0; j < G; ++j) dot += basis[r * G + j] * basis[p * G + j];
      for (size_t j = 0; j < G; ++j) basis[r * G + j] -= dot * basis[p * G + j];
    }
    double nrm = 0.0;
    for (size_t j = 0; j < G; ++j) nrm += basis[r * G + j] * basis[r * G + j];
    nrm = std::sqrt(nrm);
    for (size_t j = 0; j < G; ++j) basis[r * G + j] /= nrm;
  }
  if (G == 1) basis[0] = 1.0;
  std::vector<double> proj(2 * M, 0.0);
  {
    Rng prng(spec.seed ^ 0x5DEECE66Dull);
    for (double& v : proj) v = prng.next_gaussian();
    for (size_t r = 0; r < 2 && r < M; ++r) {
      for (size_t p = 0; p < r; ++p) {
        double dot = 0.0;
        for (size_t m = 0; m < M; ++m) dot += proj[r * M + m] * proj[p * M + m];
        for (size_t m = 0; m < M; ++m) proj[r * M + m] -= dot * proj[p * M + m];
      }
      double nrm = 0.0;
      for (size_t m = 0; m < M; ++m) nrm += proj[r * M + m] * proj[r * M + m];
      nrm = std::sqrt(nrm);
      for (size_t m = 0; m < M; ++m) proj[r * M + m] /= nrm;
    }
    if (M < 2)
      for (size_t m = 0; m < M; ++m) proj[M + m] = 0.0;
  }

  Rng rng(spec.seed);
  SynthData out;
  out.embeddings.dim = 2;
  out.embeddings.kind = EmbeddingKind::GENERIC;

  auto make_utt = [&](size_t g, const std::string& id) {
    Utterance utt;
    utt.id = id;
    utt.group = g;
    size_t len = spec.seq_len_min +
                 rng.next_index(spec.seq_len_max - spec.seq_len_min + 1);
    utt.target = zipf_cdf_sample(rng, cdf, len);
    utt.input.resize(len);
    for (size_t t = 0; t < len; ++t) {
      utt.input[t] = cipher[g][utt.target[t]];
      if (spec.label_noise > 0.0 && rng.next_double() < spec.label_noise)
        utt.target[t] = rng.next_index(V);
    }
    return utt;
  };

  for (size_t g = 0; g < G; ++g) {
    for (size_t i = 0; i < spec.samples_per_group; ++i) {
      Utterance utt = make_utt(g, "g" + std::to_string(g) + "-train-" +
                                      std::to_string(i));
      // log-likelihood profile embedding
      std::vector<double> profile(G, 0.0);
      for (size_t g2 = 0; g2 < G; ++g2) {
        for (size_t t : utt.input) profile[g2] += logp[inverse_cipher[g2][t]];
        profile[g2] /= double(utt.input.size());
      }
      // drop the common-mode component so the group signal dominates
      double common = 0.0;
      for (double v : profile) common += v / double(G);
      for (double& v : profile) v -= common;
      std::vector<double> coords(M, 0.0);
      for (size_t m = 0; m < M; ++m)
        for (size_t g2 = 0; g2 < G; ++g2)
          coords[m] += basis[m * G + g2] * profile[g2];
      out.embeddings.ids.push_back(utt.id);
      for (size_t r = 0; r < 2; ++r) {
        double s = 0.0;
        for (size_t m = 0; m < M; ++m) s += proj[r * M + m] * coords[m];
        out.embeddings.vectors.push_back(s);
      }
      ManifestRecord rec;
      rec.id = utt.id;
      json j = utterance_record(utt);
      rec.audio_ref = j["audio_ref"];
      rec.transcript_ref = j["transcript_ref"];
      rec.raw_json = j.dump();
      out.train_manifest.records.push_back(std::move(rec));
    }
    for (size_t i = 0; i < spec.eval_samples_per_group; ++i) {
      Utterance utt =
          make_utt(g, "g" + std::to_string(g) + "-eval-" + std::to_string(i));
      ManifestRecord rec;
      rec.id = utt.id;
      json j = utterance_record(utt);
      rec.audio_ref = j["audio_ref"];
      rec.transcript_ref = j["transcript_ref"];
      rec.raw_json = j.dump();
      out.eval_manifest.records.push_back(std::move(rec));
    }
  }
  out.embeddings.validate();
  return out;
}

std::vector<Utterance> manifest_utterances(const Manifest& m) {
  std::vector<Utterance> out;
  out.reserve(m.records.size());
  for (const auto& rec : m.records) {
    json j = json::parse(rec.raw_json);
    Utterance utt;
    utt.id = rec.id;
    if (!j.contains("input") || !j.contains("target"))
      throw Error("manifest record \"" + rec.id +
                  "\" has no toy input/target tokens");
    utt.input = j["input"].get<std::vector<size_t>>();
    utt.target = j["target"].get<std::vector<size_t>>();
    utt.group = j.value("group", size_t(0));
    out.push_back(std::move(utt));
  }
  return out;
}

TrainResult train(const Checkpoint& model, const Manifest& data,
                  const TrainConfig& cfg) {
  cfg.validate();
  ToyConfig mcfg = config_from_checkpoint(model);
  std::vector<Utterance> utts = manifest_utterances(data);
  if (utts.empty()) throw Error("training manifest is empty");

  FreezeMask mask = resolve(cfg.mask, model);

  ToyObjective obj(mcfg, {});
  std::vector<double> params = obj.flatten(model);

  // per-offset trainable flags
  std::vector<char> trainable(obj.param_count, 0);
  auto schema_names = obj.param_names;
  for (size_t i = 0; i < schema_names.size(); ++i) {
    if (!mask.selected.count(schema_names[i])) continue;
    size_t begin = obj.param_offsets[i];
    size_t end = i + 1 < schema_names.size() ? obj.param_offsets[i + 1]
                                             : obj.param_count;
    std::fill(trainable.begin() + begin, trainable.begin() + end, 1);
  }

  std::vector<double> m1, m2;
  if (cfg.optimizer == ToyOptimizer::ADAM) {
    m1.assign(obj.param_count, 0.0);
    m2.assign(obj.param_count, 0.0);
  }
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  TrainResult result;
  Rng rng(cfg.seed);
  std::vector<size_t> order(utts.size());
  std::iota(order.begin(), order.end(), 0);
  size_t step = 0;
  std::vector<double> grad;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i-- > 1;)
      std::swap(order[i], order[rng.next_index(i + 1)]);
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<Utterance> batch;
      for (size_t i = start; i < stop; ++i) batch.push_back(utts[order[i]]);
      ToyObjective bobj(mcfg, std::move(batch));
      double loss = bobj.loss_grad(params, grad);
      ++step;
      if (!std::isfinite(loss))
        throw Error("non-finite training loss at step " + std::to_string(step));
      result.step_losses.push_back(loss);

      if (cfg.optimizer == ToyOptimizer::SGD) {
        for (size_t j = 0; j < params.size(); ++j)
          if (trainable[j]) params[j] -= cfg.learning_rate * grad[j];
      } else {
        double bc1 = 1.0 - std::pow(beta1, double(step));
        double bc2 = 1.0 - std::pow(beta2, double(step));
        for (size_t j = 0; j < params.size(); ++j) {
          if (!trainable[j]) continue;
          m1[j] = beta1 * m1[j] + (1.0 - beta1) * grad[j];
          m2[j] = beta2 * m2[j] + (1.0 - beta2) * grad[j] * grad[j];
          params[j] -= cfg.learning_rate * (m1[j] / bc1) /
                       (std::sqrt(m2[j] / bc2) + eps);
        }
      }
    }
  }

  Checkpoint out = obj.unflatten(params, model);
  // frozen tensors are carried over bit-identical
  for (const auto& name : mask.frozen) out.entries[name] = model.at(name);
  out.meta = model.meta;
  out.meta["train.steps"] = std::to_string(step);
  result.model = std::move(out);
  return result;
}

double eval_loss(const Checkpoint& model, const Manifest& data) {
  ToyConfig cfg = config_from_checkpoint(model);
  std::vector<Utterance> utts = manifest_utterances(data);
  if (utts.empty()) throw Error("evaluation manifest is empty");
  ToyObjective obj(cfg, std::move(utts));
  return obj.loss(obj.flatten(model));
}

std::vector<std::pair<std::string, std::string>> decode(const Checkpoint& model,
                                                        const Manifest& data) {
  ToyConfig cfg = config_from_checkpoint(model);
  std::vector<Utterance> utts = manifest_utterances(data);
  ToyObjective obj(cfg, {});
  std::vector<double> params = obj.flatten(model);
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& utt : utts) {
    std::vector<size_t> tokens = obj.greedy(params, utt.input);
    std::ostringstream os;
    for (size_t i = 0; i < tokens.size(); ++i) {
      if (i) os << ' ';
      os << tokens[i];
    }
    out.emplace_back(utt.id, os.str());
  }
  return out;
}

}  // namespace grapam
