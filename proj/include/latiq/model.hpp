#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "latiq/config.hpp"
#include "latiq/encoder.hpp"
#include "latiq/response.hpp"
#include "latiq/tensor.hpp"
#include "latiq/tokenizer.hpp"

namespace latiq {

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct LayerParams {
    Vec attn_rms_g;       // d
    Mat wq, wk, wv, wo;   // d x d
    Vec mlp_rms_g;        // d
    Mat w1;               // m x d
    Vec b1;               // m
    Mat w2;               // d x m
    Vec b2;               // d
};

struct DecoderParams {
    Mat tok_emb;          // vocab x d
    Mat pos_emb;          // max_seq x d
    std::vector<LayerParams> layers;
    Vec final_rms_g;      // d
    Mat head_w;           // vocab x d
    Vec head_b;           // vocab
    Mat lat_w;            // visual_dim x d  (latent head g)
    Vec lat_b;            // visual_dim
};

// Stable tensor naming shared by the optimizer, the checkpoint format, and
// the finite-difference prober.
template <class P, class F>
void for_each_tensor(P& p, F&& f) {
    f("tok_emb", p.tok_emb.a);
    f("pos_emb", p.pos_emb.a);
    for (size_t l = 0; l < p.layers.size(); ++l) {
        auto& lay = p.layers[l];
        std::string pre = "layer" + std::to_string(l) + ".";
        f(pre + "attn_rms_g", lay.attn_rms_g);
        f(pre + "wq", lay.wq.a);
        f(pre + "wk", lay.wk.a);
        f(pre + "wv", lay.wv.a);
        f(pre + "wo", lay.wo.a);
        f(pre + "mlp_rms_g", lay.mlp_rms_g);
        f(pre + "w1", lay.w1.a);
        f(pre + "b1", lay.b1);
        f(pre + "w2", lay.w2.a);
        f(pre + "b2", lay.b2);
    }
    f("final_rms_g", p.final_rms_g);
    f("head_w", p.head_w.a);
    f("head_b", p.head_b);
    f("lat_w", p.lat_w.a);
    f("lat_b", p.lat_b);
}

template <class F>
void for_each_tensor_pair(DecoderParams& a, DecoderParams& b, F&& f) {
    std::vector<Vec*> av, bv;
    for_each_tensor(a, [&](const std::string&, Vec& v) { av.push_back(&v); });
    for_each_tensor(b, [&](const std::string&, Vec& v) { bv.push_back(&v); });
    size_t i = 0;
    for_each_tensor(a, [&](const std::string& name, Vec&) {
        f(name, *av[i], *bv[i]);
        ++i;
    });
}

struct Model {
    ModelConfig cfg;
    DecoderParams dec;
    FrozenParams frozen;
    long train_steps = 0; // cumulative optimizer steps, carried by checkpoints
};

inline DecoderParams init_decoder(const ModelConfig& cfg) {
    DecoderParams p;
    Rng rng(derive_seed(cfg.seed, 0xD0));
    const int d = cfg.embed_dim;
    const int m = 4 * d;
    const double ws = 0.08;
    p.tok_emb = Mat(cfg.vocab_size, d);
    fill_normal(p.tok_emb, rng, ws);
    p.pos_emb = Mat(cfg.max_seq_len, d);
    fill_normal(p.pos_emb, rng, 0.02);
    p.layers.resize(size_t(cfg.num_layers));
    for (auto& lay : p.layers) {
        lay.attn_rms_g.assign(size_t(d), 1.0);
        lay.wq = Mat(d, d);
        lay.wk = Mat(d, d);
        lay.wv = Mat(d, d);
        lay.wo = Mat(d, d);
        fill_normal(lay.wq, rng, ws);
        fill_normal(lay.wk, rng, ws);
        fill_normal(lay.wv, rng, ws);
        fill_normal(lay.wo, rng, ws);
        lay.mlp_rms_g.assign(size_t(d), 1.0);
        lay.w1 = Mat(m, d);
        fill_normal(lay.w1, rng, ws);
        lay.b1.assign(size_t(m), 0.0);
        lay.w2 = Mat(d, m);
        fill_normal(lay.w2, rng, ws);
        lay.b2.assign(size_t(d), 0.0);
    }
    p.final_rms_g.assign(size_t(d), 1.0);
    p.head_w = Mat(cfg.vocab_size, d);
    fill_normal(p.head_w, rng, ws);
    p.head_b.assign(size_t(cfg.vocab_size), 0.0);
    p.lat_w = Mat(cfg.visual_dim, d);
    fill_normal(p.lat_w, rng, ws);
    p.lat_b.assign(size_t(cfg.visual_dim), 0.0);
    return p;
}

inline Model init_model(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.dec = init_decoder(cfg);
    m.frozen = make_frozen(cfg);
    return m;
}

inline DecoderParams make_grads(const DecoderParams& shape) {
    DecoderParams g = shape;
    for_each_tensor(g, [](const std::string&, Vec& v) { std::fill(v.begin(), v.end(), 0.0); });
    return g;
}

inline size_t count_params(const DecoderParams& p) {
    size_t n = 0;
    for_each_tensor(const_cast<DecoderParams&>(p), [&](const std::string&, Vec& v) { n += v.size(); });
    return n;
}

// ---------------------------------------------------------------------------
// Activation math
// ---------------------------------------------------------------------------

constexpr double kRmsEps = 1e-5;

inline double rms_inv(const double* x, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += x[i] * x[i];
    return 1.0 / std::sqrt(s / n + kRmsEps);
}

inline void rms_apply(const double* x, const double* g, double inv, double* out, int n) {
    for (int i = 0; i < n; ++i) out[i] = g[i] * x[i] * inv;
}

// dy is the gradient on the normalized output; accumulates into dg, writes dx.
inline void rms_backward(const double* dy, const double* x, const double* g, double inv,
                         double* dx, double* dg, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        dg[i] += dy[i] * x[i] * inv;
        s += dy[i] * g[i] * x[i];
    }
    const double k = inv * inv * inv * s / n;
    for (int i = 0; i < n; ++i) dx[i] = g[i] * dy[i] * inv - x[i] * k;
}

inline double gelu(double x) {
    const double c = 0.7978845608028654; // sqrt(2/pi)
    const double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

inline double gelu_deriv(double x) {
    const double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

inline void log_softmax_row(const double* z, double* out, int n) {
    double mx = z[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, z[i]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(z[i] - mx);
    const double lse = mx + std::log(s);
    for (int i = 0; i < n; ++i) out[i] = z[i] - lse;
}

// ---------------------------------------------------------------------------
// Sequences: what occupies each decoder position
// ---------------------------------------------------------------------------

struct InputElem {
    enum class Kind { token, constant, feedback } kind = Kind::token;
    int token = -1; // vocab id                          (kind == token)
    int cidx = -1;  // row into SequenceSpec::consts     (kind == constant)
    int fidx = -1;  // row into SequenceSpec::trace      (kind == feedback)
};

struct SequenceSpec {
    std::vector<InputElem> elems;
    Mat consts;               // frozen embeddings referenced by constant elems
    const Mat* trace = nullptr; // recorded latent hidden states (feedback inputs)

    int length() const { return int(elems.size()); }
};

// Input embedding at latent step t+1: the recorded hidden state fed through
// the latent head and the frozen projector.
inline void latent_feedback_embed(const Model& m, const double* h, double* out, Vec& scratch) {
    scratch.resize(size_t(m.cfg.visual_dim));
    matvec(m.dec.lat_w, h, scratch.data());
    for (int i = 0; i < m.cfg.visual_dim; ++i) scratch[i] += m.dec.lat_b[i];
    project_one(m.frozen, scratch.data(), out);
}

// ---------------------------------------------------------------------------
// Forward pass (sequential by position; rollout and replay share the math)
// ---------------------------------------------------------------------------

struct LayerCache {
    Mat n1, q, k, v, ctx, x1, n2; // cap x d
    Mat pre, hm;                  // cap x m
    Vec inv1, inv2;               // cap
    Vec att;                      // H * cap * cap attention probabilities
};

struct ForwardCache {
    int len = 0;
    int cap = 0;
    Mat x0;                  // inputs including position embedding
    std::vector<Mat> resid;  // L+1 residual streams; resid[0] == x0
    std::vector<LayerCache> layers;
    Mat nf;                  // final-norm output
    Vec invf;
    Mat logits;              // cap x vocab

    const double* hidden(int p) const { return resid.back().row(p); } // last-layer output
};

inline void fc_init(ForwardCache& fc, const ModelConfig& cfg, int cap) {
    const int d = cfg.embed_dim;
    const int m = 4 * d;
    fc.len = 0;
    fc.cap = cap;
    fc.x0 = Mat(cap, d);
    fc.resid.assign(size_t(cfg.num_layers) + 1, Mat(cap, d));
    fc.layers.assign(size_t(cfg.num_layers), LayerCache{});
    for (auto& lc : fc.layers) {
        lc.n1 = Mat(cap, d);
        lc.q = Mat(cap, d);
        lc.k = Mat(cap, d);
        lc.v = Mat(cap, d);
        lc.ctx = Mat(cap, d);
        lc.x1 = Mat(cap, d);
        lc.n2 = Mat(cap, d);
        lc.pre = Mat(cap, m);
        lc.hm = Mat(cap, m);
        lc.inv1.assign(size_t(cap), 0.0);
        lc.inv2.assign(size_t(cap), 0.0);
        lc.att.assign(size_t(cfg.num_heads) * cap * cap, 0.0);
    }
    fc.nf = Mat(cap, d);
    fc.invf.assign(size_t(cap), 0.0);
    fc.logits = Mat(cap, cfg.vocab_size);
}

// Appends one position. base_emb is the input embedding without the position
// embedding; the position index is fc.len.
inline void fc_push(const Model& m, ForwardCache& fc, const double* base_emb) {
    const ModelConfig& cfg = m.cfg;
    const int d = cfg.embed_dim;
    const int H = cfg.num_heads;
    const int hd = d / H;
    const int p = fc.len;
    if (p >= fc.cap) throw std::invalid_argument("fc_push: sequence exceeds max_seq_len");
    const double isq = 1.0 / std::sqrt(double(hd));

    double* x0 = fc.x0.row(p);
    const double* pe = m.dec.pos_emb.row(p);
    for (int i = 0; i < d; ++i) x0[i] = base_emb[i] + pe[i];
    std::copy(x0, x0 + d, fc.resid[0].row(p));

    for (int l = 0; l < cfg.num_layers; ++l) {
        const LayerParams& lp = m.dec.layers[size_t(l)];
        LayerCache& lc = fc.layers[size_t(l)];
        const double* x = fc.resid[size_t(l)].row(p);

        lc.inv1[size_t(p)] = rms_inv(x, d);
        rms_apply(x, lp.attn_rms_g.data(), lc.inv1[size_t(p)], lc.n1.row(p), d);
        matvec(lp.wq, lc.n1.row(p), lc.q.row(p));
        matvec(lp.wk, lc.n1.row(p), lc.k.row(p));
        matvec(lp.wv, lc.n1.row(p), lc.v.row(p));

        for (int h = 0; h < H; ++h) {
            const double* qh = lc.q.row(p) + h * hd;
            double* att = lc.att.data() + (size_t(h) * fc.cap + p) * fc.cap;
            double mx = -1e300;
            for (int j = 0; j <= p; ++j) {
                const double s = dot(qh, lc.k.row(j) + h * hd, hd) * isq;
                att[j] = s;
                mx = std::max(mx, s);
            }
            double sum = 0.0;
            for (int j = 0; j <= p; ++j) {
                att[j] = std::exp(att[j] - mx);
                sum += att[j];
            }
            double* ctx = lc.ctx.row(p) + h * hd;
            std::fill(ctx, ctx + hd, 0.0);
            for (int j = 0; j <= p; ++j) {
                att[j] /= sum;
                axpy(att[j], lc.v.row(j) + h * hd, ctx, hd);
            }
        }

        double* x1 = lc.x1.row(p);
        matvec(lp.wo, lc.ctx.row(p), x1);
        for (int i = 0; i < d; ++i) x1[i] += x[i];

        lc.inv2[size_t(p)] = rms_inv(x1, d);
        rms_apply(x1, lp.mlp_rms_g.data(), lc.inv2[size_t(p)], lc.n2.row(p), d);
        matvec(lp.w1, lc.n2.row(p), lc.pre.row(p));
        double* pre = lc.pre.row(p);
        double* hm = lc.hm.row(p);
        for (int i = 0; i < 4 * d; ++i) {
            pre[i] += lp.b1[size_t(i)];
            hm[i] = gelu(pre[i]);
        }
        double* out = fc.resid[size_t(l) + 1].row(p);
        matvec(lp.w2, hm, out);
        for (int i = 0; i < d; ++i) out[i] += lp.b2[size_t(i)] + x1[i];
    }

    const double* hl = fc.hidden(p);
    fc.invf[size_t(p)] = rms_inv(hl, d);
    rms_apply(hl, m.dec.final_rms_g.data(), fc.invf[size_t(p)], fc.nf.row(p), d);
    matvec(m.dec.head_w, fc.nf.row(p), fc.logits.row(p));
    for (int i = 0; i < cfg.vocab_size; ++i) fc.logits.at(p, i) += m.dec.head_b[size_t(i)];
    ++fc.len;
}

inline void build_base_emb(const Model& m, const SequenceSpec& seq, int p, double* out, Vec& scratch) {
    const InputElem& e = seq.elems[size_t(p)];
    const int d = m.cfg.embed_dim;
    switch (e.kind) {
        case InputElem::Kind::token:
            std::copy(m.dec.tok_emb.row(e.token), m.dec.tok_emb.row(e.token) + d, out);
            break;
        case InputElem::Kind::constant:
            std::copy(seq.consts.row(e.cidx), seq.consts.row(e.cidx) + d, out);
            break;
        case InputElem::Kind::feedback:
            latent_feedback_embed(m, seq.trace->row(e.fidx), out, scratch);
            break;
    }
}

// Teacher-forced / replayed full-sequence pass. Returns vocabulary logits at
// every position and last-layer hidden states (fc.hidden).
inline ForwardCache forward_teacher_forced(const Model& m, const SequenceSpec& seq) {
    if (seq.length() > m.cfg.max_seq_len)
        throw std::invalid_argument("forward_teacher_forced: sequence length " +
                                    std::to_string(seq.length()) + " exceeds max_seq_len " +
                                    std::to_string(m.cfg.max_seq_len));
    ForwardCache fc;
    fc_init(fc, m.cfg, seq.length());
    Vec base(size_t(m.cfg.embed_dim)), scratch;
    for (int p = 0; p < seq.length(); ++p) {
        build_base_emb(m, seq, p, base.data(), scratch);
        fc_push(m, fc, base.data());
    }
    return fc;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

// dlogits: len x vocab (zero rows where no loss applies). dhidden_extra, when
// present, is added to the gradient on the last-layer hidden states (used by
// the latent reconstruction loss). Accumulates into grads.
inline void backward(const Model& m, const SequenceSpec& seq, const ForwardCache& fc,
                     const Mat& dlogits, const Mat* dhidden_extra, DecoderParams& grads) {
    const ModelConfig& cfg = m.cfg;
    const int d = cfg.embed_dim;
    const int mm = 4 * d;
    const int H = cfg.num_heads;
    const int hd = d / H;
    const int S = fc.len;
    const double isq = 1.0 / std::sqrt(double(hd));

    Mat dresid(S, d);
    Vec tmp(size_t(std::max(mm, cfg.vocab_size)));

    // head
    for (int p = 0; p < S; ++p) {
        const double* dz = dlogits.row(p);
        bool any = false;
        for (int i = 0; i < cfg.vocab_size; ++i)
            if (dz[i] != 0.0) { any = true; break; }
        double* dr = dresid.row(p);
        if (any) {
            add_outer(grads.head_w, dz, fc.nf.row(p));
            for (int i = 0; i < cfg.vocab_size; ++i) grads.head_b[size_t(i)] += dz[i];
            matvec_t(m.dec.head_w, dz, tmp.data());
            rms_backward(tmp.data(), fc.hidden(p), m.dec.final_rms_g.data(), fc.invf[size_t(p)],
                         dr, grads.final_rms_g.data(), d);
        }
        if (dhidden_extra) {
            const double* ex = dhidden_extra->row(p);
            for (int i = 0; i < d; ++i) dr[i] += ex[i];
        }
    }

    Mat dx1(S, d), dctx(S, d), dq(S, d), dk(S, d), dv(S, d);
    Vec dn(size_t(d), 0.0), dpre(size_t(mm), 0.0);

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
        const LayerParams& lp = m.dec.layers[size_t(l)];
        LayerParams& gp = grads.layers[size_t(l)];
        const LayerCache& lc = fc.layers[size_t(l)];

        // MLP
        for (int p = 0; p < S; ++p) {
            const double* g = dresid.row(p);
            for (int i = 0; i < d; ++i) gp.b2[size_t(i)] += g[i];
            add_outer(gp.w2, g, lc.hm.row(p));
            matvec_t(lp.w2, g, dpre.data()); // d(hm)
            const double* pre = lc.pre.row(p);
            for (int i = 0; i < mm; ++i) dpre[size_t(i)] *= gelu_deriv(pre[i]);
            for (int i = 0; i < mm; ++i) gp.b1[size_t(i)] += dpre[size_t(i)];
            add_outer(gp.w1, dpre.data(), lc.n2.row(p));
            matvec_t(lp.w1, dpre.data(), dn.data());
            rms_backward(dn.data(), lc.x1.row(p), lp.mlp_rms_g.data(), lc.inv2[size_t(p)],
                         dx1.row(p), gp.mlp_rms_g.data(), d);
            for (int i = 0; i < d; ++i) dx1.at(p, i) += g[i];
        }

        // attention output projection
        for (int p = 0; p < S; ++p) {
            add_outer(gp.wo, dx1.row(p), lc.ctx.row(p));
            matvec_t(lp.wo, dx1.row(p), dctx.row(p));
        }

        dq.zero();
        dk.zero();
        dv.zero();
        std::vector<double> da(size_t(S), 0.0);
        for (int h = 0; h < H; ++h) {
            for (int p = 0; p < S; ++p) {
                const double* att = lc.att.data() + (size_t(h) * fc.cap + p) * fc.cap;
                const double* dch = dctx.row(p) + h * hd;
                double sum = 0.0;
                for (int j = 0; j <= p; ++j) {
                    da[size_t(j)] = dot(dch, lc.v.row(j) + h * hd, hd);
                    axpy(att[j], dch, dv.row(j) + h * hd, hd);
                    sum += da[size_t(j)] * att[j];
                }
                double* dqh = dq.row(p) + h * hd;
                for (int j = 0; j <= p; ++j) {
                    const double ds = att[j] * (da[size_t(j)] - sum);
                    axpy(ds * isq, lc.k.row(j) + h * hd, dqh, hd);
                    axpy(ds * isq, lc.q.row(p) + h * hd, dk.row(j) + h * hd, hd);
                }
            }
        }

        for (int p = 0; p < S; ++p) {
            add_outer(gp.wq, dq.row(p), lc.n1.row(p));
            add_outer(gp.wk, dk.row(p), lc.n1.row(p));
            add_outer(gp.wv, dv.row(p), lc.n1.row(p));
            matvec_t(lp.wq, dq.row(p), dn.data());
            matvec_t(lp.wk, dk.row(p), tmp.data());
            for (int i = 0; i < d; ++i) dn[size_t(i)] += tmp[size_t(i)];
            matvec_t(lp.wv, dv.row(p), tmp.data());
            for (int i = 0; i < d; ++i) dn[size_t(i)] += tmp[size_t(i)];
            // overwrite dresid[p] with the gradient entering this layer
            Vec dxp(size_t(d), 0.0);
            rms_backward(dn.data(), fc.resid[size_t(l)].row(p), lp.attn_rms_g.data(),
                         lc.inv1[size_t(p)], dxp.data(), gp.attn_rms_g.data(), d);
            double* dr = dresid.row(p);
            for (int i = 0; i < d; ++i) dr[i] = dx1.at(p, i) + dxp[size_t(i)];
        }
    }

    // route input-embedding gradients
    Vec dz(size_t(cfg.visual_dim));
    for (int p = 0; p < S; ++p) {
        const double* g = dresid.row(p);
        double* pg = grads.pos_emb.row(p);
        for (int i = 0; i < d; ++i) pg[i] += g[i];
        const InputElem& e = seq.elems[size_t(p)];
        switch (e.kind) {
            case InputElem::Kind::token: {
                double* tg = grads.tok_emb.row(e.token);
                for (int i = 0; i < d; ++i) tg[i] += g[i];
                break;
            }
            case InputElem::Kind::constant:
                break;
            case InputElem::Kind::feedback: {
                // input = proj(lat_w h + lat_b); the recorded hidden state is a
                // constant, so nothing propagates past the latent head.
                matvec_t(m.frozen.proj_w, g, dz.data());
                add_outer(grads.lat_w, dz.data(), seq.trace->row(e.fidx));
                for (int i = 0; i < cfg.visual_dim; ++i) grads.lat_b[size_t(i)] += dz[size_t(i)];
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Latent head as a standalone op
// ---------------------------------------------------------------------------

inline Vec latent_head(const Model& m, const double* h) {
    Vec out(size_t(m.cfg.visual_dim));
    matvec(m.dec.lat_w, h, out.data());
    for (int i = 0; i < m.cfg.visual_dim; ++i) out[size_t(i)] += m.dec.lat_b[size_t(i)];
    return out;
}

// ---------------------------------------------------------------------------
// Generation (two-mode decoding with per-layer KV reuse via the cache)
// ---------------------------------------------------------------------------

enum class DecodeMode { text, latent };

// Incremental decoding state: the cache holds per-layer K/V context.
struct DecoderState {
    ForwardCache fc;
    DecodeMode mode = DecodeMode::text;
    int latent_steps = 0;

    int position() const { return fc.len; }
};

struct DecodeConfig {
    bool greedy = true;
    double temperature = 1.0;
    uint64_t seed = 0;
    bool learnable_stop = true;
    bool record_attention = false;
    int latent_budget = -1; // -1: use model config
};

namespace detail {

inline int select_token(const double* logits, int vocab, const DecodeConfig& dc, Rng& rng) {
    if (dc.greedy) {
        int best = 0;
        for (int i = 1; i < vocab; ++i)
            if (logits[i] > logits[best]) best = i;
        return best;
    }
    Vec lp(size_t(vocab), 0.0);
    const double t = dc.temperature > 0 ? dc.temperature : 1.0;
    double mx = logits[0];
    for (int i = 1; i < vocab; ++i) mx = std::max(mx, logits[i]);
    double sum = 0.0;
    for (int i = 0; i < vocab; ++i) {
        lp[size_t(i)] = std::exp((logits[i] - mx) / t);
        sum += lp[size_t(i)];
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng) * sum;
    double acc = 0.0;
    for (int i = 0; i < vocab; ++i) {
        acc += lp[size_t(i)];
        if (r <= acc) return i;
    }
    return vocab - 1;
}

inline double token_logprob(const double* logits, int vocab, int tok) {
    double mx = logits[0];
    for (int i = 1; i < vocab; ++i) mx = std::max(mx, logits[i]);
    double s = 0.0;
    for (int i = 0; i < vocab; ++i) s += std::exp(logits[i] - mx);
    return logits[tok] - mx - std::log(s);
}

} // namespace detail

// Generates from pre-encoded visual embeddings. prompt must be nonempty.
inline Response generate_from_visual(const Model& m, const Mat& visual_embeds,
                                     const std::vector<int>& prompt, const DecodeConfig& dc) {
    if (prompt.empty()) throw std::invalid_argument("generate: prompt must be nonempty");
    const ModelConfig& cfg = m.cfg;
    const int budget = dc.latent_budget > 0 ? dc.latent_budget : cfg.latent_budget;
    Rng rng(dc.seed);

    DecoderState st;
    fc_init(st.fc, cfg, cfg.max_seq_len);
    Response r;
    r.latent_trace = Mat(budget, cfg.embed_dim);
    int trace_rows = 0;

    Vec base(size_t(cfg.embed_dim)), scratch;
    auto push_token = [&](int tok) {
        fc_push(m, st.fc, m.dec.tok_emb.row(tok));
    };

    for (int n = 0; n < visual_embeds.rows; ++n) fc_push(m, st.fc, visual_embeds.row(n));
    for (int tok : prompt) {
        if (st.position() >= cfg.max_seq_len) throw std::invalid_argument("generate: prompt overflows max_seq_len");
        push_token(tok);
    }

    const int n_visual = visual_embeds.rows;
    const int prompt_len = int(prompt.size());
    bool latent_done = false;
    const int vocab = cfg.vocab_size;

    while (true) {
        if (st.mode == DecodeMode::latent) {
            if (st.latent_steps >= budget) {
                // force-close; not a decoding step, no log-probability recorded
                if (st.position() >= cfg.max_seq_len) { r.truncated = true; break; }
                r.segment_end = int(r.token_ids.size());
                r.token_ids.push_back(TOK_LVR_END);
                r.lvr_end_forced = true;
                st.mode = DecodeMode::text;
                latent_done = true;
                push_token(TOK_LVR_END);
                continue;
            }
            if (st.position() >= cfg.max_seq_len) { r.truncated = true; break; }
            if (st.latent_steps == 0) {
                fc_push(m, st.fc, m.dec.tok_emb.row(TOK_LVR_SLOT));
            } else {
                latent_feedback_embed(m, r.latent_trace.row(trace_rows - 1), base.data(), scratch);
                fc_push(m, st.fc, base.data());
            }
            std::copy(st.fc.hidden(st.position() - 1), st.fc.hidden(st.position() - 1) + cfg.embed_dim,
                      r.latent_trace.row(trace_rows));
            ++trace_rows;
            ++st.latent_steps;
            if (dc.learnable_stop) {
                const double* lg = st.fc.logits.row(st.position() - 1);
                int tok = detail::select_token(lg, vocab, dc, rng);
                if (tok == TOK_LVR_END) {
                    r.per_token_logprobs.push_back(detail::token_logprob(lg, vocab, tok));
                    r.policy_elems.push_back(st.position());
                    r.policy_tokens.push_back(tok);
                    r.segment_end = int(r.token_ids.size());
                    r.token_ids.push_back(TOK_LVR_END);
                    st.mode = DecodeMode::text;
                    latent_done = true;
                    if (st.position() >= cfg.max_seq_len) { r.truncated = true; break; }
                    push_token(TOK_LVR_END);
                }
            }
            continue;
        }

        // text mode
        const double* lg = st.fc.logits.row(st.position() - 1);
        int tok = detail::select_token(lg, vocab, dc, rng);
        r.per_token_logprobs.push_back(detail::token_logprob(lg, vocab, tok));
        r.policy_elems.push_back(st.position());
        r.policy_tokens.push_back(tok);
        if (tok == TOK_LVR_START && !latent_done && r.segment_start < 0)
            r.segment_start = int(r.token_ids.size());
        r.token_ids.push_back(tok);
        if (tok == TOK_EOT) break;
        if (st.position() >= cfg.max_seq_len) { r.truncated = true; break; }
        push_token(tok);
        if (tok == TOK_LVR_START && !latent_done && r.segment_start == int(r.token_ids.size()) - 1) {
            st.mode = DecodeMode::latent;
            st.latent_steps = 0;
        }
    }

    r.latent_trace.rows = trace_rows; // shrink view; payload beyond rows unused
    r.latent_trace.a.resize(size_t(trace_rows) * cfg.embed_dim);
    r.parsed_score = parse_answer(r.token_ids);

    if (dc.record_attention) {
        // mean attention over layers and heads, per element over its context
        const int S = st.fc.len;
        Mat avg(S, S);
        const double norm = 1.0 / double(cfg.num_layers * cfg.num_heads);
        for (int l = 0; l < cfg.num_layers; ++l) {
            const LayerCache& lc = st.fc.layers[size_t(l)];
            for (int h = 0; h < cfg.num_heads; ++h)
                for (int p = 0; p < S; ++p) {
                    const double* att = lc.att.data() + (size_t(h) * st.fc.cap + p) * st.fc.cap;
                    for (int j = 0; j <= p; ++j) avg.at(p, j) += att[j] * norm;
                }
        }
        r.attn_avg = std::move(avg);
        r.has_attention = true;
    }
    r.n_visual = n_visual;
    r.prompt_len = prompt_len;
    r.n_elems = st.fc.len;
    return r;
}

inline Response generate(const Model& m, const Image& img, const std::vector<int>& prompt,
                         const DecodeConfig& dc) {
    VisualTokenGrid grid = encode_image(img, m.cfg, m.frozen);
    Mat vis = project_visual(grid, m.frozen);
    return generate_from_visual(m, vis, prompt, dc);
}

} // namespace latiq
