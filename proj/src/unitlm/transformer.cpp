#include "dsu/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dsu/error.hpp"
#include "dsu/kernels.hpp"

namespace dsu {

namespace K = kernels::omp;

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

using Vec = std::vector<double>;

void layer_norm_fwd(const Vec& x, const Param& gain, const Param& bias, Vec& y, Vec& xhat, Vec& rstd,
                    std::size_t n, std::size_t d) {
    y.resize(n * d);
    xhat.resize(n * d);
    rstd.resize(n);
    const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * d > (1u << 15))
    for (std::ptrdiff_t i = 0; i < ni; ++i) {
        const double* xr = x.data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            mean += xr[j];
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (xr[j] - mean) * (xr[j] - mean);
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + kLnEps);
        rstd[i] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (xr[j] - mean) * rs;
            xhat[i * d + j] = xh;
            y[i * d + j] = xh * gain.value[j] + bias.value[j];
        }
    }
}

// dx += LN'(dy); parameter gradients only for trainable gain/bias.
void layer_norm_bwd(const Vec& dy, const Vec& xhat, const Vec& rstd, Param& gain, Param& bias, Vec& dx,
                    std::size_t n, std::size_t d) {
    if (gain.trainable() || bias.trainable()) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                gain.grad[j] += dy[i * d + j] * xhat[i * d + j];
                bias.grad[j] += dy[i * d + j];
            }
        }
    }
    const auto ni = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * d > (1u << 15))
    for (std::ptrdiff_t i = 0; i < ni; ++i) {
        const double* dyr = dy.data() + i * d;
        const double* xh = xhat.data() + i * d;
        double m1 = 0.0;
        double m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double g = dyr[j] * gain.value[j];
            m1 += g;
            m2 += g * xh[j];
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double g = dyr[j] * gain.value[j];
            dx[i * d + j] += rstd[i] * (g - m1 - xh[j] * m2);
        }
    }
}

// y[n x out] = x[n x in] W^T + b
void linear_fwd(const Vec& x, const Param& w, const Param& b, Vec& y, std::size_t n) {
    const std::size_t out = w.rows;
    const std::size_t in = w.cols;
    y.resize(n * out);
    K::matmul_nt(x.data(), w.value.data(), y.data(), n, out, in);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < out; ++j) {
            y[i * out + j] += b.value[j];
        }
    }
}

// dx = dy W (overwritten); dW += dy^T x; db += colsum(dy).
void linear_bwd(const Vec& dy, const Vec& x, Param& w, Param& b, Vec& dx, std::size_t n) {
    const std::size_t out = w.rows;
    const std::size_t in = w.cols;
    dx.resize(n * in);
    K::matmul_nn(dy.data(), w.value.data(), dx.data(), n, in, out);
    if (w.trainable()) {
        K::matmul_tn_acc(dy.data(), x.data(), w.grad.data(), out, in, n);
    }
    if (b.trainable()) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < out; ++j) {
                b.grad[j] += dy[i * out + j];
            }
        }
    }
}

struct Shape {
    std::size_t batch, seq, heads, dh, d;
};

void attention_fwd(const Vec& q, const Vec& k, const Vec& v, Vec& p, Vec& att, const Shape& s) {
    const std::size_t S = s.seq;
    p.assign(s.batch * s.heads * S * S, 0.0);
    att.assign(s.batch * S * s.d, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.dh));
    const auto nbh = static_cast<std::ptrdiff_t>(s.batch * s.heads);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bh = 0; bh < nbh; ++bh) {
        const std::size_t b = static_cast<std::size_t>(bh) / s.heads;
        const std::size_t h = static_cast<std::size_t>(bh) % s.heads;
        double* P = p.data() + bh * S * S;
        for (std::size_t i = 0; i < S; ++i) {
            const double* qi = q.data() + (b * S + i) * s.d + h * s.dh;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j <= i; ++j) {
                const double* kj = k.data() + (b * S + j) * s.d + h * s.dh;
                double dot = 0.0;
                for (std::size_t c = 0; c < s.dh; ++c) {
                    dot += qi[c] * kj[c];
                }
                P[i * S + j] = dot * scale;
                mx = std::max(mx, P[i * S + j]);
            }
            double sum = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                P[i * S + j] = std::exp(P[i * S + j] - mx);
                sum += P[i * S + j];
            }
            double* out = att.data() + (b * S + i) * s.d + h * s.dh;
            for (std::size_t j = 0; j <= i; ++j) {
                P[i * S + j] /= sum;
                const double* vj = v.data() + (b * S + j) * s.d + h * s.dh;
                for (std::size_t c = 0; c < s.dh; ++c) {
                    out[c] += P[i * S + j] * vj[c];
                }
            }
        }
    }
}

void attention_bwd(const Vec& datt, const Vec& q, const Vec& k, const Vec& v, const Vec& p, Vec& dq,
                   Vec& dk, Vec& dv, const Shape& s) {
    const std::size_t S = s.seq;
    const std::size_t n = s.batch * S * s.d;
    dq.assign(n, 0.0);
    dk.assign(n, 0.0);
    dv.assign(n, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(s.dh));
    const auto nbh = static_cast<std::ptrdiff_t>(s.batch * s.heads);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bh = 0; bh < nbh; ++bh) {
        const std::size_t b = static_cast<std::size_t>(bh) / s.heads;
        const std::size_t h = static_cast<std::size_t>(bh) % s.heads;
        const double* P = p.data() + bh * S * S;
        std::vector<double> dp(S);
        for (std::size_t i = 0; i < S; ++i) {
            const std::size_t ri = (b * S + i) * s.d + h * s.dh;
            const double* doi = datt.data() + ri;
            double weighted = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                const std::size_t rj = (b * S + j) * s.d + h * s.dh;
                const double pij = P[i * S + j];
                double dot = 0.0;
                for (std::size_t c = 0; c < s.dh; ++c) {
                    dot += doi[c] * v[rj + c];
                    dv[rj + c] += pij * doi[c];
                }
                dp[j] = dot;
                weighted += pij * dot;
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const std::size_t rj = (b * S + j) * s.d + h * s.dh;
                const double ds = P[i * S + j] * (dp[j] - weighted) * scale;
                for (std::size_t c = 0; c < s.dh; ++c) {
                    dq[ri + c] += ds * k[rj + c];
                    dk[rj + c] += ds * q[ri + c];
                }
            }
        }
    }
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
    const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void make_mask(Vec& mask, std::size_t n, double p, Rng& rng) {
    mask.resize(n);
    const double keep = 1.0 / (1.0 - p);
    for (auto& m : mask) {
        m = rng.uniform() >= p ? keep : 0.0;
    }
}

// Adds the LoRA path s * (x A^T) B^T to y; stores x A^T in xa.
void lora_fwd(const Vec& x, const Param& a, const Param& b, double scale, Vec& xa, Vec& y,
              std::size_t n) {
    const std::size_t r = a.rows;
    const std::size_t in = a.cols;
    const std::size_t out = b.rows;
    xa.resize(n * r);
    K::matmul_nt(x.data(), a.value.data(), xa.data(), n, r, in);
    Vec tmp(n * out);
    K::matmul_nt(xa.data(), b.value.data(), tmp.data(), n, out, r);
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] += scale * tmp[i];
    }
}

// Gradients of the LoRA path given dy; adds the input gradient to dx.
void lora_bwd(const Vec& dy, const Vec& x, const Vec& xa, Param& a, Param& b, double scale, Vec& dx,
              std::size_t n) {
    const std::size_t r = a.rows;
    const std::size_t in = a.cols;
    const std::size_t out = b.rows;
    Vec dys(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) {
        dys[i] = scale * dy[i];
    }
    if (b.trainable()) {
        K::matmul_tn_acc(dys.data(), xa.data(), b.grad.data(), out, r, n);
    }
    Vec dxa(n * r);
    K::matmul_nn(dys.data(), b.value.data(), dxa.data(), n, r, out);
    if (a.trainable()) {
        K::matmul_tn_acc(dxa.data(), x.data(), a.grad.data(), r, in, n);
    }
    Vec tmp(n * in);
    K::matmul_nn(dxa.data(), a.value.data(), tmp.data(), n, in, r);
    for (std::size_t i = 0; i < tmp.size(); ++i) {
        dx[i] += tmp[i];
    }
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

struct TransformerModel::Cache {
    struct Layer {
        Vec h_in, ln1_xhat, ln1_rstd, ln1, q, k, v, qa, va, p, att, mask1;
        Vec ln2_xhat, ln2_rstd, ln2, f1, g, mask2;
    };
    std::vector<Layer> layers;
    Vec lnf_xhat, lnf_rstd, lnf, logits, lse;
};

void TransformerConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || context_len == 0) {
        fail("transformer dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        fail("d_model must be divisible by n_heads");
    }
    if (vocab_size == 0) {
        fail("vocab_size must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        fail("dropout must be in [0, 1)");
    }
    if (!(init_std > 0.0)) {
        fail("init_std must be positive");
    }
    if (lora && (lora->rank == 0 || !(lora->alpha > 0.0))) {
        fail("LoRA rank and alpha must be positive");
    }
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
    if (batch_size == 0) {
        fail("batch_size must be positive");
    }
    if (!(lr > 0.0) || !(weight_decay >= 0.0) || !(eps > 0.0)) {
        fail("lr and eps must be positive, weight_decay non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        fail("Adam betas must be in [0, 1)");
    }
    if (grad_clip && !(*grad_clip > 0.0)) {
        fail("grad_clip must be positive");
    }
}

std::size_t TransformerModel::add_param(std::string name, std::size_t rows, std::size_t cols,
                                        bool decay) {
    Param p;
    p.name = std::move(name);
    p.rows = rows;
    p.cols = cols;
    p.value.assign(rows * cols, 0.0);
    p.grad.assign(rows * cols, 0.0);
    p.decay = decay;
    params_.push_back(std::move(p));
    return params_.size() - 1;
}

TransformerModel::TransformerModel(const TransformerConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    cfg_.lora.reset();
    const std::size_t d = cfg.d_model;
    const std::size_t V = cfg.vocab_size;
    const std::size_t F = cfg.d_ff;

    tok_emb_ = add_param("tok_emb", V, d, true);
    pos_emb_ = add_param("pos_emb", cfg.context_len, d, true);
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".";
        LayerIdx L;
        L.ln1_g = add_param(pre + "ln1.gain", d, 1, false);
        L.ln1_b = add_param(pre + "ln1.bias", d, 1, false);
        L.wq = add_param(pre + "attn.wq", d, d, true);
        L.bq = add_param(pre + "attn.bq", d, 1, false);
        L.wk = add_param(pre + "attn.wk", d, d, true);
        L.bk = add_param(pre + "attn.bk", d, 1, false);
        L.wv = add_param(pre + "attn.wv", d, d, true);
        L.bv = add_param(pre + "attn.bv", d, 1, false);
        L.wo = add_param(pre + "attn.wo", d, d, true);
        L.bo = add_param(pre + "attn.bo", d, 1, false);
        L.ln2_g = add_param(pre + "ln2.gain", d, 1, false);
        L.ln2_b = add_param(pre + "ln2.bias", d, 1, false);
        L.w1 = add_param(pre + "mlp.w1", F, d, true);
        L.b1 = add_param(pre + "mlp.b1", F, 1, false);
        L.w2 = add_param(pre + "mlp.w2", d, F, true);
        L.b2 = add_param(pre + "mlp.b2", d, 1, false);
        layers_.push_back(L);
    }
    lnf_g_ = add_param("lnf.gain", d, 1, false);
    lnf_b_ = add_param("lnf.bias", d, 1, false);
    wout_ = add_param("out.weight", V, d, true);
    bout_ = add_param("out.bias", V, 1, false);

    // Residual-branch output projections are scaled down with depth.
    const double resid_std = cfg.init_std / std::sqrt(2.0 * cfg.n_layers);
    Rng rng(cfg.seed);
    for (auto& p : params_) {
        if (ends_with(p.name, ".gain")) {
            std::fill(p.value.begin(), p.value.end(), 1.0);
        } else if (p.decay) {
            const bool resid = ends_with(p.name, "attn.wo") || ends_with(p.name, "mlp.w2");
            const double sd = resid ? resid_std : cfg.init_std;
            for (auto& v : p.value) {
                v = rng.normal(0.0, sd);
            }
        }
    }
    snap_to_binary32();
    if (cfg.lora) {
        attach_lora(*cfg.lora, derive_seed(cfg.seed, 1), cfg.vocab_size);
    }
}

Param& TransformerModel::param(std::string_view name) {
    for (auto& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw Error(ErrorCode::ShapeMismatch, "no parameter named '" + std::string(name) + "'");
}

const Param& TransformerModel::param(std::string_view name) const {
    return const_cast<TransformerModel*>(this)->param(name);
}

std::size_t TransformerModel::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.size();
    }
    return n;
}

std::size_t TransformerModel::trainable_parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.trainable_size();
    }
    return n;
}

void TransformerModel::snap_to_binary32() {
    for (auto& p : params_) {
        for (auto& v : p.value) {
            v = static_cast<double>(static_cast<float>(v));
        }
    }
}

void TransformerModel::extend_vocab(std::uint32_t new_vocab, std::uint64_t seed) {
    if (new_vocab < cfg_.vocab_size) {
        throw Error(ErrorCode::InvalidConfig, "vocabulary can only grow");
    }
    Rng rng(seed);
    for (const std::size_t idx : {tok_emb_, wout_, bout_}) {
        Param& p = params_[idx];
        const std::size_t old = p.size();
        p.rows = new_vocab;
        p.value.resize(p.size(), 0.0);
        p.grad.assign(p.size(), 0.0);
        if (p.decay) {
            for (std::size_t i = old; i < p.size(); ++i) {
                p.value[i] = static_cast<double>(static_cast<float>(rng.normal(0.0, cfg_.init_std)));
            }
        }
    }
    cfg_.vocab_size = new_vocab;
}

void TransformerModel::attach_lora(const LoraConfig& lc, std::uint64_t seed, std::uint32_t base_vocab) {
    if (cfg_.lora) {
        throw Error(ErrorCode::InvalidConfig, "LoRA adapters are already attached");
    }
    if (lc.rank == 0 || !(lc.alpha > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "LoRA rank and alpha must be positive");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Param& p = params_[i];
        const bool vocab_rows = i == tok_emb_ || i == wout_ || i == bout_;
        p.trainable_from_row = vocab_rows ? std::min<std::size_t>(base_vocab, p.rows) : p.rows;
    }
    const std::size_t d = cfg_.d_model;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    Rng rng(seed);
    for (std::uint32_t l = 0; l < cfg_.n_layers; ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".attn.";
        auto& L = layers_[l];
        L.qa = add_param(pre + "wq.lora_a", lc.rank, d, true);
        L.qb = add_param(pre + "wq.lora_b", d, lc.rank, true);
        L.va = add_param(pre + "wv.lora_a", lc.rank, d, true);
        L.vb = add_param(pre + "wv.lora_b", d, lc.rank, true);
        for (const std::size_t a : {L.qa, L.va}) {
            for (auto& v : params_[a].value) {
                v = static_cast<double>(static_cast<float>(rng.uniform(-bound, bound)));
            }
        }
    }
    cfg_.lora = lc;
}

double TransformerModel::forward(const Batch& b, Cache& cache, std::vector<double>* token_nll,
                                 Rng* drop) const {
    const std::size_t B = b.batch;
    const std::size_t S = b.seq;
    const std::size_t N = B * S;
    const std::size_t d = cfg_.d_model;
    const std::size_t V = cfg_.vocab_size;
    if (S == 0 || B == 0 || S > cfg_.context_len) {
        throw Error(ErrorCode::ShapeMismatch, "sequence length must be in [1, context_len]");
    }
    if (b.inputs.size() != N || b.targets.size() != N) {
        throw Error(ErrorCode::ShapeMismatch, "batch token arrays do not match batch x seq");
    }
    for (std::size_t n = 0; n < N; ++n) {
        if (b.inputs[n] >= V || b.targets[n] >= V) {
            throw Error(ErrorCode::TokenOutOfRange,
                        "token " + std::to_string(std::max(b.inputs[n], b.targets[n])) +
                            " >= V=" + std::to_string(V));
        }
    }
    const Shape shape{B, S, cfg_.n_heads, d / cfg_.n_heads, d};
    const bool dropout = drop != nullptr && cfg_.dropout > 0.0;
    const double lora_scale = cfg_.lora ? cfg_.lora->scale() : 0.0;

    Vec h(N * d);
    const auto& E = params_[tok_emb_].value;
    const auto& P = params_[pos_emb_].value;
    for (std::size_t n = 0; n < N; ++n) {
        const std::size_t tok = b.inputs[n];
        const std::size_t pos = n % S;
        for (std::size_t j = 0; j < d; ++j) {
            h[n * d + j] = E[tok * d + j] + P[pos * d + j];
        }
    }

    cache.layers.resize(layers_.size());
    Vec tmp;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        auto& c = cache.layers[l];
        const auto& I = layers_[l];
        c.h_in = h;
        layer_norm_fwd(h, params_[I.ln1_g], params_[I.ln1_b], c.ln1, c.ln1_xhat, c.ln1_rstd, N, d);
        linear_fwd(c.ln1, params_[I.wq], params_[I.bq], c.q, N);
        linear_fwd(c.ln1, params_[I.wk], params_[I.bk], c.k, N);
        linear_fwd(c.ln1, params_[I.wv], params_[I.bv], c.v, N);
        if (I.qa != npos) {
            lora_fwd(c.ln1, params_[I.qa], params_[I.qb], lora_scale, c.qa, c.q, N);
            lora_fwd(c.ln1, params_[I.va], params_[I.vb], lora_scale, c.va, c.v, N);
        }
        attention_fwd(c.q, c.k, c.v, c.p, c.att, shape);
        linear_fwd(c.att, params_[I.wo], params_[I.bo], tmp, N);
        if (dropout) {
            make_mask(c.mask1, N * d, cfg_.dropout, *drop);
        } else {
            c.mask1.clear();
        }
        for (std::size_t i = 0; i < N * d; ++i) {
            h[i] += dropout ? tmp[i] * c.mask1[i] : tmp[i];
        }

        layer_norm_fwd(h, params_[I.ln2_g], params_[I.ln2_b], c.ln2, c.ln2_xhat, c.ln2_rstd, N, d);
        linear_fwd(c.ln2, params_[I.w1], params_[I.b1], c.f1, N);
        c.g.resize(c.f1.size());
        for (std::size_t i = 0; i < c.f1.size(); ++i) {
            c.g[i] = gelu(c.f1[i]);
        }
        linear_fwd(c.g, params_[I.w2], params_[I.b2], tmp, N);
        if (dropout) {
            make_mask(c.mask2, N * d, cfg_.dropout, *drop);
        } else {
            c.mask2.clear();
        }
        for (std::size_t i = 0; i < N * d; ++i) {
            h[i] += dropout ? tmp[i] * c.mask2[i] : tmp[i];
        }
    }

    layer_norm_fwd(h, params_[lnf_g_], params_[lnf_b_], cache.lnf, cache.lnf_xhat, cache.lnf_rstd, N, d);
    linear_fwd(cache.lnf, params_[wout_], params_[bout_], cache.logits, N);

    cache.lse.resize(N);
    if (token_nll != nullptr) {
        token_nll->resize(N);
    }
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const double* row = cache.logits.data() + n * V;
        const double mx = *std::max_element(row, row + V);
        double sum = 0.0;
        for (std::size_t j = 0; j < V; ++j) {
            sum += std::exp(row[j] - mx);
        }
        cache.lse[n] = mx + std::log(sum);
        const double nll = cache.lse[n] - row[b.targets[n]];
        if (token_nll != nullptr) {
            (*token_nll)[n] = nll;
        }
        total += nll;
    }
    return total / static_cast<double>(N);
}

void TransformerModel::backward(const Batch& b, Cache& cache) {
    const std::size_t B = b.batch;
    const std::size_t S = b.seq;
    const std::size_t N = B * S;
    const std::size_t d = cfg_.d_model;
    const std::size_t V = cfg_.vocab_size;
    const Shape shape{B, S, cfg_.n_heads, d / cfg_.n_heads, d};
    const double lora_scale = cfg_.lora ? cfg_.lora->scale() : 0.0;

    // d(mean NLL) / d logits = (softmax - onehot) / N, written over the logits.
    Vec& dlogits = cache.logits;
    const double inv_n = 1.0 / static_cast<double>(N);
    for (std::size_t n = 0; n < N; ++n) {
        double* row = dlogits.data() + n * V;
        for (std::size_t j = 0; j < V; ++j) {
            row[j] = std::exp(row[j] - cache.lse[n]) * inv_n;
        }
        row[b.targets[n]] -= inv_n;
    }
    Vec dlnf;
    linear_bwd(dlogits, cache.lnf, params_[wout_], params_[bout_], dlnf, N);
    Vec dh(N * d, 0.0);
    layer_norm_bwd(dlnf, cache.lnf_xhat, cache.lnf_rstd, params_[lnf_g_], params_[lnf_b_], dh, N, d);

    Vec dx, dg, dln, dq, dk, dv, tmp;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        auto& c = cache.layers[li];
        const auto& I = layers_[li];

        // h_out = h_mid + drop(W2 gelu(W1 ln2(h_mid)))
        if (!c.mask2.empty()) {
            tmp.resize(N * d);
            for (std::size_t i = 0; i < N * d; ++i) {
                tmp[i] = dh[i] * c.mask2[i];
            }
        } else {
            tmp = dh;
        }
        linear_bwd(tmp, c.g, params_[I.w2], params_[I.b2], dg, N);
        for (std::size_t i = 0; i < dg.size(); ++i) {
            dg[i] *= gelu_grad(c.f1[i]);
        }
        linear_bwd(dg, c.ln2, params_[I.w1], params_[I.b1], dln, N);
        layer_norm_bwd(dln, c.ln2_xhat, c.ln2_rstd, params_[I.ln2_g], params_[I.ln2_b], dh, N, d);

        // h_mid = h_in + drop(Wo attn(ln1(h_in)))
        if (!c.mask1.empty()) {
            tmp.resize(N * d);
            for (std::size_t i = 0; i < N * d; ++i) {
                tmp[i] = dh[i] * c.mask1[i];
            }
        } else {
            tmp = dh;
        }
        Vec datt;
        linear_bwd(tmp, c.att, params_[I.wo], params_[I.bo], datt, N);
        attention_bwd(datt, c.q, c.k, c.v, c.p, dq, dk, dv, shape);

        linear_bwd(dq, c.ln1, params_[I.wq], params_[I.bq], dln, N);
        linear_bwd(dk, c.ln1, params_[I.wk], params_[I.bk], dx, N);
        for (std::size_t i = 0; i < dln.size(); ++i) {
            dln[i] += dx[i];
        }
        linear_bwd(dv, c.ln1, params_[I.wv], params_[I.bv], dx, N);
        for (std::size_t i = 0; i < dln.size(); ++i) {
            dln[i] += dx[i];
        }
        if (I.qa != npos) {
            lora_bwd(dq, c.ln1, c.qa, params_[I.qa], params_[I.qb], lora_scale, dln, N);
            lora_bwd(dv, c.ln1, c.va, params_[I.va], params_[I.vb], lora_scale, dln, N);
        }
        layer_norm_bwd(dln, c.ln1_xhat, c.ln1_rstd, params_[I.ln1_g], params_[I.ln1_b], dh, N, d);
    }

    Param& E = params_[tok_emb_];
    Param& P = params_[pos_emb_];
    for (std::size_t n = 0; n < N; ++n) {
        const std::size_t tok = b.inputs[n];
        const std::size_t pos = n % S;
        for (std::size_t j = 0; j < d; ++j) {
            if (E.trainable()) {
                E.grad[tok * d + j] += dh[n * d + j];
            }
            if (P.trainable()) {
                P.grad[pos * d + j] += dh[n * d + j];
            }
        }
    }
    // Frozen rows never receive gradient.
    for (auto& p : params_) {
        std::fill(p.grad.begin(), p.grad.begin() + static_cast<std::ptrdiff_t>(
                                                       std::min(p.trainable_from_row, p.rows) * p.cols),
                  0.0);
    }
}

double TransformerModel::loss(const Batch& b) const {
    Cache cache;
    return forward(b, cache, nullptr, nullptr);
}

double TransformerModel::loss_and_grad(const Batch& b, Rng* dropout_rng) {
    for (auto& p : params_) {
        std::fill(p.grad.begin(), p.grad.end(), 0.0);
    }
    Cache cache;
    const double l = forward(b, cache, nullptr, dropout_rng);
    backward(b, cache);
    return l;
}

std::vector<double> TransformerModel::logits(std::span<const Token> tokens) const {
    Batch b;
    b.batch = 1;
    b.seq = tokens.size();
    b.inputs.assign(tokens.begin(), tokens.end());
    b.targets.assign(tokens.size(), 0);
    Cache cache;
    forward(b, cache, nullptr, nullptr);
    return std::move(cache.logits);
}

std::vector<double> TransformerModel::token_nll(std::span<const Token> seq) const {
    std::vector<double> out;
    if (seq.size() < 2) {
        return out;
    }
    out.reserve(seq.size() - 1);
    const std::size_t preds = seq.size() - 1;
    std::vector<double> chunk;
    for (std::size_t s = 0; s < preds; s += cfg_.context_len) {
        const std::size_t len = std::min<std::size_t>(cfg_.context_len, preds - s);
        Batch b;
        b.batch = 1;
        b.seq = len;
        b.inputs.assign(seq.begin() + static_cast<std::ptrdiff_t>(s),
                        seq.begin() + static_cast<std::ptrdiff_t>(s + len));
        b.targets.assign(seq.begin() + static_cast<std::ptrdiff_t>(s + 1),
                         seq.begin() + static_cast<std::ptrdiff_t>(s + len + 1));
        Cache cache;
        forward(b, cache, &chunk, nullptr);
        out.insert(out.end(), chunk.begin(), chunk.end());
    }
    return out;
}

}  // namespace dsu
