// Decoder-only transformer over packed multimodal streams, with explicit
// forward traces for hand-written backprop and an exact-equivalence KV
// cache for incremental decoding.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "unifluid/core.hpp"
#include "unifluid/sequence.hpp"

namespace unifluid::model {

struct ModelConfig {
    int vocab = 64;
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    int max_seq = 128;
    int n_img = 16;       // image tokens per sequence
    int grid_w = 4;       // token-grid width (n_img = grid_h * grid_w)
    int token_dim = 16;   // continuous token dimension
    int d_time = 64;      // sinusoidal timestep embedding dim
    int diff_hidden = 256;
    int t_train = 1000;
    int sample_steps = 100;

    int head_dim() const { return d_model / n_heads; }

    void validate() const {
        require(d_model % n_heads == 0, Err::ShapeMismatch, "d_model must divide n_heads");
        require(d_time % 2 == 0, Err::ShapeMismatch, "d_time must be even");
        require(n_img >= 1 && grid_w >= 1 && n_img % grid_w == 0, Err::ShapeMismatch, "bad token grid");
        require(max_seq >= n_img + 2, Err::ShapeMismatch, "max_seq too small for generation layout");
    }
};

template <typename T>
struct LayerParams {
    Tensor<T> wq, wk, wv, wo;  // [d, d]
    Tensor<T> norm1_g, norm2_g;
    Tensor<T> ffn_w1;  // [d_ff, d]
    Tensor<T> ffn_w2;  // [d, d_ff]
};

// All learnable tensors of backbone + heads, checkpointed together.
template <typename T>
struct ModelParams {
    ModelConfig cfg;
    Tensor<T> embed_tok;     // [V, d]
    Tensor<T> embed_img_in;  // [d, token_dim]
    Tensor<T> pos1d;         // [max_seq, d]
    Tensor<T> pos2d;         // [n_img, d]
    Tensor<T> target_pos;    // [n_img + 1, d], last row = sentinel
    std::vector<LayerParams<T>> layers;
    Tensor<T> final_norm_g;  // [d]
    Tensor<T> text_w;        // [V, d]
    Tensor<T> text_b;        // [V]
    Tensor<T> diff_w1;       // [hid, token_dim + d + d_time]
    Tensor<T> diff_b1;       // [hid]
    Tensor<T> diff_w2;       // [hid, hid]
    Tensor<T> diff_b2;       // [hid]
    Tensor<T> diff_w3;       // [token_dim, hid]
    Tensor<T> diff_b3;       // [token_dim]

    static ModelParams make(const ModelConfig& c) {
        c.validate();
        ModelParams p;
        p.cfg = c;
        p.embed_tok = Tensor<T>({c.vocab, c.d_model});
        p.embed_img_in = Tensor<T>({c.d_model, c.token_dim});
        p.pos1d = Tensor<T>({c.max_seq, c.d_model});
        p.pos2d = Tensor<T>({c.n_img, c.d_model});
        p.target_pos = Tensor<T>({c.n_img + 1, c.d_model});
        p.layers.resize(static_cast<size_t>(c.n_layers));
        for (auto& l : p.layers) {
            l.wq = Tensor<T>({c.d_model, c.d_model});
            l.wk = Tensor<T>({c.d_model, c.d_model});
            l.wv = Tensor<T>({c.d_model, c.d_model});
            l.wo = Tensor<T>({c.d_model, c.d_model});
            l.norm1_g = Tensor<T>({c.d_model});
            l.norm2_g = Tensor<T>({c.d_model});
            l.ffn_w1 = Tensor<T>({c.d_ff, c.d_model});
            l.ffn_w2 = Tensor<T>({c.d_model, c.d_ff});
        }
        p.final_norm_g = Tensor<T>({c.d_model});
        p.text_w = Tensor<T>({c.vocab, c.d_model});
        p.text_b = Tensor<T>({c.vocab});
        const int diff_in = c.token_dim + c.d_model + c.d_time;
        p.diff_w1 = Tensor<T>({c.diff_hidden, diff_in});
        p.diff_b1 = Tensor<T>({c.diff_hidden});
        p.diff_w2 = Tensor<T>({c.diff_hidden, c.diff_hidden});
        p.diff_b2 = Tensor<T>({c.diff_hidden});
        p.diff_w3 = Tensor<T>({c.token_dim, c.diff_hidden});
        p.diff_b3 = Tensor<T>({c.token_dim});
        return p;
    }
};

// Single source of truth for tensor naming and checkpoint order.
template <typename T, class F>
void for_each_tensor(ModelParams<T>& p, F&& fn) {
    fn("embed.tok", p.embed_tok);
    fn("embed.img_in", p.embed_img_in);
    fn("embed.pos1d", p.pos1d);
    fn("embed.pos2d", p.pos2d);
    fn("embed.target", p.target_pos);
    for (size_t i = 0; i < p.layers.size(); ++i) {
        const std::string base = "layer" + std::to_string(i) + ".";
        fn(base + "attn.wq", p.layers[i].wq);
        fn(base + "attn.wk", p.layers[i].wk);
        fn(base + "attn.wv", p.layers[i].wv);
        fn(base + "attn.wo", p.layers[i].wo);
        fn(base + "norm1.g", p.layers[i].norm1_g);
        fn(base + "norm2.g", p.layers[i].norm2_g);
        fn(base + "ffn.w1", p.layers[i].ffn_w1);
        fn(base + "ffn.w2", p.layers[i].ffn_w2);
    }
    fn("final_norm.g", p.final_norm_g);
    fn("text_head.w", p.text_w);
    fn("text_head.b", p.text_b);
    fn("diff_head.w1", p.diff_w1);
    fn("diff_head.b1", p.diff_b1);
    fn("diff_head.w2", p.diff_w2);
    fn("diff_head.b2", p.diff_b2);
    fn("diff_head.w3", p.diff_w3);
    fn("diff_head.b3", p.diff_b3);
}

template <typename T, class F>
void for_each_tensor(const ModelParams<T>& p, F&& fn) {
    for_each_tensor(const_cast<ModelParams<T>&>(p), [&](const std::string& n, Tensor<T>& t) {
        fn(n, static_cast<const Tensor<T>&>(t));
    });
}

template <typename T>
void init_params(ModelParams<T>& p, uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1217));
    auto fill = [&](Tensor<T>& t, double std) {
        for (auto& x : t.v) x = static_cast<T>(rng.normal() * std);
    };
    // Draw order is fixed by for_each_tensor, so init is reproducible.
    for_each_tensor(p, [&](const std::string& name, Tensor<T>& t) {
        if (name.find("norm") != std::string::npos) {
            std::fill(t.v.begin(), t.v.end(), T(1));
        } else if (name.ends_with(".b") || name.find(".b") == name.size() - 3) {
            t.zero();
        } else if (name == "diff_head.w1" || name == "diff_head.w2") {
            fill(t, 1.0 / std::sqrt(static_cast<double>(t.dims[1])));
        } else {
            fill(t, 0.02);
        }
    });
    p.text_b.zero();
    p.diff_b1.zero();
    p.diff_b2.zero();
    p.diff_b3.zero();
}

template <typename T>
void zero_grads(ModelParams<T>& g) {
    for_each_tensor(g, [](const std::string&, Tensor<T>& t) { t.zero(); });
}

// --------------------------------------------------------------- forward

inline constexpr double kNormEps = 1e-6;

template <typename T>
struct LayerTrace {
    Tensor<T> n1, q, k, v, ctx, xmid, n2;
    std::vector<T> inv1, inv2;
    Tensor<T> probs;  // [n_heads, n, n]
    Tensor<T> hpre, hact;
};

// Forward activations. xs[0] is the embedded input, xs[l+1] the residual
// stream after layer l. Reused between calls; reshape keeps allocations.
template <typename T>
struct Trace {
    int n = 0;
    std::vector<Tensor<T>> xs;
    std::vector<LayerTrace<T>> layers;
    std::vector<T> inv_f;
    Tensor<T> z;

    void ensure(int n_, const ModelConfig& c) {
        n = n_;
        xs.resize(static_cast<size_t>(c.n_layers) + 1);
        layers.resize(static_cast<size_t>(c.n_layers));
        for (auto& x : xs) x.reshape({n, c.d_model});
        for (auto& l : layers) {
            l.n1.reshape({n, c.d_model});
            l.q.reshape({n, c.d_model});
            l.k.reshape({n, c.d_model});
            l.v.reshape({n, c.d_model});
            l.ctx.reshape({n, c.d_model});
            l.xmid.reshape({n, c.d_model});
            l.n2.reshape({n, c.d_model});
            l.probs.reshape({c.n_heads, n, n});
            l.hpre.reshape({n, c.d_ff});
            l.hact.reshape({n, c.d_ff});
            l.inv1.resize(static_cast<size_t>(n));
            l.inv2.resize(static_cast<size_t>(n));
        }
        inv_f.resize(static_cast<size_t>(n));
        z.reshape({n, c.d_model});
    }
};

// Scratch for one backward pass; reused like the trace.
template <typename T>
struct BackwardScratch {
    Tensor<T> dx, dhact, dn2, dctx, dq, dk, dv, dn1;
    std::vector<T> dp;

    void ensure(int n, const ModelConfig& c) {
        dx.reshape({n, c.d_model});
        dhact.reshape({n, c.d_ff});
        dn2.reshape({n, c.d_model});
        dctx.reshape({n, c.d_model});
        dq.reshape({n, c.d_model});
        dk.reshape({n, c.d_model});
        dv.reshape({n, c.d_model});
        dn1.reshape({n, c.d_model});
        dp.resize(static_cast<size_t>(n));
    }
};

template <typename T>
void rmsnorm_fwd(const T* x, const T* g, T* y, T& inv, int d) {
    T ms = dot(x, x, d) / T(d) + T(kNormEps);
    inv = T(1) / std::sqrt(ms);
    for (int i = 0; i < d; ++i) y[i] = g[i] * x[i] * inv;
}

template <typename T>
void rmsnorm_bwd(const T* dy, const T* x, const T* g, T inv, T* dx, T* dg, int d) {
    T du_x = T(0);
    for (int i = 0; i < d; ++i) du_x += dy[i] * g[i] * x[i];
    const T coeff = du_x * inv * inv * inv / T(d);
    for (int i = 0; i < d; ++i) {
        dx[i] += dy[i] * g[i] * inv - coeff * x[i];
        dg[i] += dy[i] * x[i] * inv;
    }
}

// Input embedding for one entry at global stream position `pos`.
template <typename T>
void embed_entry(const ModelParams<T>& p, const seq::Entry<T>& e, int pos, T* out) {
    const ModelConfig& c = p.cfg;
    std::fill(out, out + c.d_model, T(0));
    switch (e.modality) {
        case seq::Modality::Text:
            require(e.token_id >= 0 && e.token_id < c.vocab, Err::ShapeMismatch, "token id out of range");
            axpy(T(1), p.embed_tok.row(e.token_id), out, c.d_model);
            axpy(T(1), p.pos1d.row(pos), out, c.d_model);
            break;
        case seq::Modality::Boi:
            axpy(T(1), p.embed_tok.row(e.token_id), out, c.d_model);
            axpy(T(1), p.pos1d.row(pos), out, c.d_model);
            require(e.target_pos2d >= 0 && e.target_pos2d <= c.n_img, Err::ShapeMismatch, "bad target cell");
            axpy(T(1), p.target_pos.row(e.target_pos2d), out, c.d_model);
            break;
        case seq::Modality::Image: {
            require(static_cast<int>(e.vec.size()) == c.token_dim, Err::ShapeMismatch, "image token dim");
            require(e.pos2d >= 0 && e.pos2d < c.n_img, Err::ShapeMismatch, "bad grid cell");
            require(e.target_pos2d >= 0 && e.target_pos2d <= c.n_img, Err::ShapeMismatch, "bad target cell");
            for (int o = 0; o < c.d_model; ++o)
                out[o] = dot(p.embed_img_in.row(o), e.vec.data(), c.token_dim);
            axpy(T(1), p.pos2d.row(e.pos2d), out, c.d_model);
            axpy(T(1), p.target_pos.row(e.target_pos2d), out, c.d_model);
            break;
        }
        case seq::Modality::EncFeat:
            require(static_cast<int>(e.vec.size()) == c.d_model, Err::ShapeMismatch, "encoder feature dim");
            axpy(T(1), e.vec.data(), out, c.d_model);
            axpy(T(1), p.pos1d.row(pos), out, c.d_model);
            break;
    }
}

template <typename T>
void embed_entry_bwd(const ModelParams<T>& p, ModelParams<T>& g, const seq::Entry<T>& e, int pos, const T* dout) {
    const ModelConfig& c = p.cfg;
    switch (e.modality) {
        case seq::Modality::Text:
            axpy(T(1), dout, g.embed_tok.row(e.token_id), c.d_model);
            axpy(T(1), dout, g.pos1d.row(pos), c.d_model);
            break;
        case seq::Modality::Boi:
            axpy(T(1), dout, g.embed_tok.row(e.token_id), c.d_model);
            axpy(T(1), dout, g.pos1d.row(pos), c.d_model);
            axpy(T(1), dout, g.target_pos.row(e.target_pos2d), c.d_model);
            break;
        case seq::Modality::Image:
            for (int o = 0; o < c.d_model; ++o) axpy(dout[o], e.vec.data(), g.embed_img_in.row(o), c.token_dim);
            axpy(T(1), dout, g.pos2d.row(e.pos2d), c.d_model);
            axpy(T(1), dout, g.target_pos.row(e.target_pos2d), c.d_model);
            break;
        case seq::Modality::EncFeat:
            axpy(T(1), dout, g.pos1d.row(pos), c.d_model);
            break;
    }
}

// Full forward over a stream. Fills the trace; trace.z holds per-position
// outputs after the final norm.
template <typename T>
void forward(const ModelParams<T>& p, const seq::TokenStream<T>& stream, const seq::AttentionMask& mask,
             Trace<T>& tr) {
    const ModelConfig& c = p.cfg;
    const int n = stream.size();
    require(n >= 1, Err::ShapeMismatch, "empty stream");
    require(n <= c.max_seq, Err::ShapeMismatch, "stream longer than max_seq");
    require(mask.n == n, Err::ShapeMismatch, "mask size != stream size");
    const int d = c.d_model, nh = c.n_heads, hd = c.head_dim(), dff = c.d_ff;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    tr.ensure(n, c);
    for (int i = 0; i < n; ++i) embed_entry(p, stream.entries[static_cast<size_t>(i)], i, tr.xs[0].row(i));

    for (int li = 0; li < c.n_layers; ++li) {
        const LayerParams<T>& L = p.layers[static_cast<size_t>(li)];
        LayerTrace<T>& t = tr.layers[static_cast<size_t>(li)];
        const Tensor<T>& xin = tr.xs[static_cast<size_t>(li)];
        Tensor<T>& xout = tr.xs[static_cast<size_t>(li) + 1];

        for (int i = 0; i < n; ++i)
            rmsnorm_fwd(xin.row(i), L.norm1_g.data(), t.n1.row(i), t.inv1[static_cast<size_t>(i)], d);

        linear_fwd(t.n1.data(), L.wq.data(), t.q.data(), n, d, d);
        linear_fwd(t.n1.data(), L.wk.data(), t.k.data(), n, d, d);
        linear_fwd(t.n1.data(), L.wv.data(), t.v.data(), n, d, d);

        t.ctx.zero();
        std::vector<T> row(static_cast<size_t>(n));
        for (int h = 0; h < nh; ++h) {
            const int off = h * hd;
            for (int i = 0; i < n; ++i) {
                T mx = std::numeric_limits<T>::lowest();
                for (int j = 0; j < n; ++j) {
                    if (!mask.at(i, j)) continue;
                    row[static_cast<size_t>(j)] = scale * dot(t.q.row(i) + off, t.k.row(j) + off, hd);
                    mx = std::max(mx, row[static_cast<size_t>(j)]);
                }
                T sum = T(0);
                for (int j = 0; j < n; ++j) {
                    if (!mask.at(i, j)) continue;
                    row[static_cast<size_t>(j)] = std::exp(row[static_cast<size_t>(j)] - mx);
                    sum += row[static_cast<size_t>(j)];
                }
                const T invs = T(1) / sum;
                T* pr = t.probs.data() + (static_cast<size_t>(h) * n + i) * n;
                T* cx = t.ctx.row(i) + off;
                for (int j = 0; j < n; ++j) {
                    if (!mask.at(i, j)) {
                        pr[j] = T(0);
                        continue;
                    }
                    pr[j] = row[static_cast<size_t>(j)] * invs;
                    axpy(pr[j], t.v.row(j) + off, cx, hd);
                }
            }
        }

        linear_fwd(t.ctx.data(), L.wo.data(), t.xmid.data(), n, d, d);
        for (int i = 0; i < n * d; ++i) t.xmid.v[static_cast<size_t>(i)] += xin.v[static_cast<size_t>(i)];

        for (int i = 0; i < n; ++i)
            rmsnorm_fwd(t.xmid.row(i), L.norm2_g.data(), t.n2.row(i), t.inv2[static_cast<size_t>(i)], d);

        linear_fwd(t.n2.data(), L.ffn_w1.data(), t.hpre.data(), n, dff, d);
        for (int i = 0; i < n * dff; ++i) t.hact.v[static_cast<size_t>(i)] = gelu(t.hpre.v[static_cast<size_t>(i)]);

        linear_fwd(t.hact.data(), L.ffn_w2.data(), xout.data(), n, d, dff);
        for (int i = 0; i < n * d; ++i) xout.v[static_cast<size_t>(i)] += t.xmid.v[static_cast<size_t>(i)];
        require(all_finite(xout.data(), xout.size()), Err::NonFiniteActivation,
                "layer " + std::to_string(li));
    }

    const Tensor<T>& xfinal = tr.xs[static_cast<size_t>(c.n_layers)];
    for (int i = 0; i < n; ++i)
        rmsnorm_fwd(xfinal.row(i), p.final_norm_g.data(), tr.z.row(i), tr.inv_f[static_cast<size_t>(i)], d);
}

// Backward through the trace given dL/dz; accumulates into g. The
// residual-stream gradient is updated in place in sc.dx.
template <typename T>
void backward(const ModelParams<T>& p, ModelParams<T>& g, const seq::TokenStream<T>& stream,
              const seq::AttentionMask& mask, const Trace<T>& tr, const Tensor<T>& dz,
              BackwardScratch<T>& sc) {
    const ModelConfig& c = p.cfg;
    const int n = tr.n, d = c.d_model, nh = c.n_heads, hd = c.head_dim(), dff = c.d_ff;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    sc.ensure(n, c);

    sc.dx.zero();
    const Tensor<T>& xfinal = tr.xs[static_cast<size_t>(c.n_layers)];
    for (int i = 0; i < n; ++i)
        rmsnorm_bwd(dz.row(i), xfinal.row(i), p.final_norm_g.data(), tr.inv_f[static_cast<size_t>(i)],
                    sc.dx.row(i), g.final_norm_g.data(), d);

    for (int li = c.n_layers - 1; li >= 0; --li) {
        const LayerParams<T>& L = p.layers[static_cast<size_t>(li)];
        LayerParams<T>& gL = g.layers[static_cast<size_t>(li)];
        const LayerTrace<T>& t = tr.layers[static_cast<size_t>(li)];
        const Tensor<T>& xin = tr.xs[static_cast<size_t>(li)];

        // FFN branch: xout = xmid + W2 gelu(W1 n2); dx becomes dxmid
        sc.dhact.zero();
        linear_bwd_input(sc.dx.data(), L.ffn_w2.data(), sc.dhact.data(), n, d, dff);
        linear_bwd_weight(sc.dx.data(), t.hact.data(), gL.ffn_w2.data(), n, d, dff);
        for (int i = 0; i < n * dff; ++i)
            sc.dhact.v[static_cast<size_t>(i)] *= gelu_grad(t.hpre.v[static_cast<size_t>(i)]);
        sc.dn2.zero();
        linear_bwd_input(sc.dhact.data(), L.ffn_w1.data(), sc.dn2.data(), n, dff, d);
        linear_bwd_weight(sc.dhact.data(), t.n2.data(), gL.ffn_w1.data(), n, dff, d);
        for (int i = 0; i < n; ++i)
            rmsnorm_bwd(sc.dn2.row(i), t.xmid.row(i), L.norm2_g.data(), t.inv2[static_cast<size_t>(i)],
                        sc.dx.row(i), gL.norm2_g.data(), d);

        // Attention branch: xmid = xin + Wo ctx; dx becomes dxin
        sc.dctx.zero();
        linear_bwd_input(sc.dx.data(), L.wo.data(), sc.dctx.data(), n, d, d);
        linear_bwd_weight(sc.dx.data(), t.ctx.data(), gL.wo.data(), n, d, d);

        sc.dq.zero();
        sc.dk.zero();
        sc.dv.zero();
        for (int h = 0; h < nh; ++h) {
            const int off = h * hd;
            for (int i = 0; i < n; ++i) {
                const T* pr = t.probs.data() + (static_cast<size_t>(h) * n + i) * n;
                const T* dcx = sc.dctx.row(i) + off;
                T dsum = T(0);
                for (int j = 0; j < n; ++j) {
                    if (!mask.at(i, j)) continue;
                    sc.dp[static_cast<size_t>(j)] = dot(dcx, t.v.row(j) + off, hd);
                    dsum += pr[j] * sc.dp[static_cast<size_t>(j)];
                    axpy(pr[j], dcx, sc.dv.row(j) + off, hd);
                }
                for (int j = 0; j < n; ++j) {
                    if (!mask.at(i, j)) continue;
                    const T ds = pr[j] * (sc.dp[static_cast<size_t>(j)] - dsum) * scale;
                    axpy(ds, t.k.row(j) + off, sc.dq.row(i) + off, hd);
                    axpy(ds, t.q.row(i) + off, sc.dk.row(j) + off, hd);
                }
            }
        }

        sc.dn1.zero();
        linear_bwd_input(sc.dq.data(), L.wq.data(), sc.dn1.data(), n, d, d);
        linear_bwd_input(sc.dk.data(), L.wk.data(), sc.dn1.data(), n, d, d);
        linear_bwd_input(sc.dv.data(), L.wv.data(), sc.dn1.data(), n, d, d);
        linear_bwd_weight(sc.dq.data(), t.n1.data(), gL.wq.data(), n, d, d);
        linear_bwd_weight(sc.dk.data(), t.n1.data(), gL.wk.data(), n, d, d);
        linear_bwd_weight(sc.dv.data(), t.n1.data(), gL.wv.data(), n, d, d);

        for (int i = 0; i < n; ++i)
            rmsnorm_bwd(sc.dn1.row(i), xin.row(i), L.norm1_g.data(), t.inv1[static_cast<size_t>(i)],
                        sc.dx.row(i), gL.norm1_g.data(), d);
    }

    for (int i = 0; i < n; ++i) embed_entry_bwd(p, g, stream.entries[static_cast<size_t>(i)], i, sc.dx.row(i));
}

// -------------------------------------------------------------- kv cache

enum class AppendPolicy { Prefix, Causal };

template <typename T>
struct KVCache {
    int fill = 0;
    bool prefix_done = false;
    std::vector<Tensor<T>> k, v;  // per layer, [max_seq, d]
    // decode scratch, reused across appends (single-writer per session)
    Tensor<T> x, n1, q, kx, vx, ctx, xmid, hpre, hact, z;
    std::vector<T> row;

    static KVCache make(const ModelConfig& c) {
        KVCache cache;
        cache.k.assign(static_cast<size_t>(c.n_layers), Tensor<T>({c.max_seq, c.d_model}));
        cache.v.assign(static_cast<size_t>(c.n_layers), Tensor<T>({c.max_seq, c.d_model}));
        return cache;
    }

    void ensure_scratch(int m, const ModelConfig& c) {
        x.reshape({m, c.d_model});
        n1.reshape({m, c.d_model});
        q.reshape({m, c.d_model});
        kx.reshape({m, c.d_model});
        vx.reshape({m, c.d_model});
        ctx.reshape({m, c.d_model});
        xmid.reshape({m, c.d_model});
        hpre.reshape({m, c.d_ff});
        hact.reshape({m, c.d_ff});
        z.reshape({m, c.d_model});
        row.resize(static_cast<size_t>(c.max_seq));
    }
};

// Appends `entries` to the cache and returns their z vectors. A Prefix
// append is bidirectional within the appended block and must come first;
// Causal entries attend to everything cached plus earlier new entries.
// Appending one entry at a time reproduces the full forward exactly.
template <typename T>
Tensor<T> forward_incremental(const ModelParams<T>& p, KVCache<T>& cache,
                              const std::vector<seq::Entry<T>>& entries, AppendPolicy policy) {
    const ModelConfig& c = p.cfg;
    const int m = static_cast<int>(entries.size());
    require(m >= 1, Err::ShapeMismatch, "no entries to append");
    require(cache.fill + m <= c.max_seq, Err::CacheOverflow,
            "cache fill " + std::to_string(cache.fill) + " + " + std::to_string(m));
    if (policy == AppendPolicy::Prefix)
        require(cache.fill == 0 && !cache.prefix_done, Err::PolicyViolation,
                "prefix must be the first append");
    const int d = c.d_model, nh = c.n_heads, hd = c.head_dim(), dff = c.d_ff;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    const int base = cache.fill;

    cache.ensure_scratch(m, c);
    Tensor<T>& x = cache.x;
    Tensor<T>& n1 = cache.n1;
    Tensor<T>& q = cache.q;
    Tensor<T>& kx = cache.kx;
    Tensor<T>& vx = cache.vx;
    Tensor<T>& ctx = cache.ctx;
    Tensor<T>& xmid = cache.xmid;
    Tensor<T>& hpre = cache.hpre;
    Tensor<T>& hact = cache.hact;
    std::vector<T>& row = cache.row;
    for (int i = 0; i < m; ++i) embed_entry(p, entries[static_cast<size_t>(i)], base + i, x.row(i));
    T inv;
    for (int li = 0; li < c.n_layers; ++li) {
        const LayerParams<T>& L = p.layers[static_cast<size_t>(li)];
        for (int i = 0; i < m; ++i) rmsnorm_fwd(x.row(i), L.norm1_g.data(), n1.row(i), inv, d);
        linear_fwd(n1.data(), L.wq.data(), q.data(), m, d, d);
        linear_fwd(n1.data(), L.wk.data(), kx.data(), m, d, d);
        linear_fwd(n1.data(), L.wv.data(), vx.data(), m, d, d);
        Tensor<T>& K = cache.k[static_cast<size_t>(li)];
        Tensor<T>& V = cache.v[static_cast<size_t>(li)];
        for (int i = 0; i < m; ++i) {
            std::copy(kx.row(i), kx.row(i) + d, K.row(base + i));
            std::copy(vx.row(i), vx.row(i) + d, V.row(base + i));
        }
        ctx.zero();
        for (int h = 0; h < nh; ++h) {
            const int off = h * hd;
            for (int i = 0; i < m; ++i) {
                // visible range in global positions
                const int hi = policy == AppendPolicy::Prefix ? base + m : base + i + 1;
                T mx = std::numeric_limits<T>::lowest();
                for (int j = 0; j < hi; ++j) {
                    row[static_cast<size_t>(j)] = scale * dot(q.row(i) + off, K.row(j) + off, hd);
                    mx = std::max(mx, row[static_cast<size_t>(j)]);
                }
                T sum = T(0);
                for (int j = 0; j < hi; ++j) {
                    row[static_cast<size_t>(j)] = std::exp(row[static_cast<size_t>(j)] - mx);
                    sum += row[static_cast<size_t>(j)];
                }
                const T invs = T(1) / sum;
                T* cx = ctx.row(i) + off;
                for (int j = 0; j < hi; ++j) axpy(row[static_cast<size_t>(j)] * invs, V.row(j) + off, cx, hd);
            }
        }
        linear_fwd(ctx.data(), L.wo.data(), xmid.data(), m, d, d);
        for (int i = 0; i < m * d; ++i) xmid.v[static_cast<size_t>(i)] += x.v[static_cast<size_t>(i)];
        for (int i = 0; i < m; ++i) rmsnorm_fwd(xmid.row(i), L.norm2_g.data(), n1.row(i), inv, d);
        linear_fwd(n1.data(), L.ffn_w1.data(), hpre.data(), m, dff, d);
        for (int i = 0; i < m * dff; ++i) hact.v[static_cast<size_t>(i)] = gelu(hpre.v[static_cast<size_t>(i)]);
        linear_fwd(hact.data(), L.ffn_w2.data(), x.data(), m, d, dff);
        for (int i = 0; i < m * d; ++i) x.v[static_cast<size_t>(i)] += xmid.v[static_cast<size_t>(i)];
        require(all_finite(x.data(), x.size()), Err::NonFiniteActivation, "layer " + std::to_string(li));
    }

    Tensor<T> z = cache.z;
    for (int i = 0; i < m; ++i) rmsnorm_fwd(x.row(i), p.final_norm_g.data(), z.row(i), inv, d);
    cache.fill += m;
    cache.prefix_done = true;
    return z;
}

}  // namespace unifluid::model
