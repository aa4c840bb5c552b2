// Modality-specific output heads: categorical text head with cross-entropy,
// and the per-token diffusion head (epsilon-prediction MLP, cosine noise
// schedule, ancestral DDPM sampler).
#pragma once

#include <vector>

#include "unifluid/backbone.hpp"
#include "unifluid/core.hpp"

namespace unifluid::heads {

using model::ModelParams;

// -------------------------------------------------------------- schedule

struct DiffusionSchedule {
    int t_train = 1000;
    int d_time = 64;
    std::vector<double> alpha_bar;   // [0..t_train], alpha_bar[0] = 1
    std::vector<int> sample_steps;   // strictly increasing timesteps in [1, t_train]
    std::vector<double> temb;        // (t_train+1) x d_time sinusoidal table
    double x0_clip = 8.0;            // sampler clamp on the implied x0 (standardized units)

    const double* temb_row(int t) const { return temb.data() + static_cast<size_t>(t) * d_time; }
};

// Cosine alpha_bar (offset 0.008) with the usual per-step beta clip at
// 0.999. sample_steps are n evenly strided timesteps ending at t_train;
// the sampler's final transition goes to t = 0 (clean data).
inline DiffusionSchedule make_cosine_schedule(int t_train, int n_sample_steps, int d_time = 64) {
    require(t_train >= 10, Err::ConfigError, "t_train must be >= 10");
    require(n_sample_steps >= 1 && n_sample_steps <= t_train, Err::ConfigError, "bad sample step count");
    DiffusionSchedule s;
    s.t_train = t_train;
    s.d_time = d_time;
    s.alpha_bar.resize(static_cast<size_t>(t_train) + 1);
    const double off = 0.008;
    auto f = [&](double t) {
        const double x = (t / t_train + off) / (1.0 + off) * 1.5707963267948966;
        const double c = std::cos(x);
        return c * c;
    };
    const double f0 = f(0.0);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= t_train; ++t) {
        const double raw = f(static_cast<double>(t)) / f0;
        const double beta = std::min(1.0 - raw / (f(static_cast<double>(t - 1)) / f0), 0.999);
        s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t) - 1] * (1.0 - beta);
    }
    s.sample_steps.resize(static_cast<size_t>(n_sample_steps));
    for (int i = 0; i < n_sample_steps; ++i)
        s.sample_steps[static_cast<size_t>(i)] =
            static_cast<int>(std::lround(static_cast<double>(i + 1) * t_train / n_sample_steps));

    const int half = d_time / 2;
    s.temb.resize((static_cast<size_t>(t_train) + 1) * d_time);
    for (int t = 0; t <= t_train; ++t) {
        double* row = s.temb.data() + static_cast<size_t>(t) * d_time;
        for (int k = 0; k < half; ++k) {
            const double omega = std::pow(10000.0, -static_cast<double>(k) / half);
            row[2 * k] = std::sin(t * omega);
            row[2 * k + 1] = std::cos(t * omega);
        }
    }
    return s;
}

// ------------------------------------------------------------- text head

template <typename T>
void text_logits(const ModelParams<T>& p, const T* z, T* logits) {
    const int v = p.cfg.vocab, d = p.cfg.d_model;
    for (int o = 0; o < v; ++o) logits[o] = dot(p.text_w.row(o), z, d) + p.text_b.at(o);
}

template <typename T>
int greedy_token(const ModelParams<T>& p, const T* z) {
    std::vector<T> logits(static_cast<size_t>(p.cfg.vocab));
    text_logits(p, z, logits.data());
    int best = 0;
    for (int i = 1; i < p.cfg.vocab; ++i)
        if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
    return best;
}

// Cross-entropy of one position; returns loss. When g is non-null, also
// accumulates head gradients scaled by `weight` and adds dL/dz into dz.
template <typename T>
T text_ce(const ModelParams<T>& p, ModelParams<T>* g, const T* z, int target, T weight, T* dz) {
    const int v = p.cfg.vocab, d = p.cfg.d_model;
    std::vector<T> logits(static_cast<size_t>(v));
    text_logits(p, z, logits.data());
    T mx = logits[0];
    for (int i = 1; i < v; ++i) mx = std::max(mx, logits[static_cast<size_t>(i)]);
    T sum = T(0);
    for (int i = 0; i < v; ++i) {
        logits[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(i)] - mx);
        sum += logits[static_cast<size_t>(i)];
    }
    const T invs = T(1) / sum;
    const T pt = std::max(logits[static_cast<size_t>(target)] * invs, std::numeric_limits<T>::min());
    const T loss = -std::log(pt);
    if (g) {
        for (int o = 0; o < v; ++o) {
            T dl = logits[static_cast<size_t>(o)] * invs;
            if (o == target) dl -= T(1);
            dl *= weight;
            axpy(dl, z, g->text_w.row(o), d);
            g->text_b.at(o) += dl;
            axpy(dl, p.text_w.row(o), dz, d);
        }
    }
    return loss;
}

// Mean cross-entropy over flagged positions of a pre-computed logit
// sequence.
template <typename T>
T text_loss(const std::vector<std::vector<T>>& logits_seq, const std::vector<int>& target_ids,
            const std::vector<bool>& loss_flags) {
    require(logits_seq.size() == target_ids.size() && target_ids.size() == loss_flags.size(),
            Err::ShapeMismatch, "text_loss input lengths differ");
    T sum = T(0);
    int n = 0;
    for (size_t i = 0; i < logits_seq.size(); ++i) {
        if (!loss_flags[i]) continue;
        const auto& lg = logits_seq[i];
        T mx = lg[0];
        for (const T x : lg) mx = std::max(mx, x);
        T se = T(0);
        for (const T x : lg) se += std::exp(x - mx);
        sum += -(lg[static_cast<size_t>(target_ids[i])] - mx - std::log(se));
        ++n;
    }
    require(n > 0, Err::NoLossPositions, "no flagged positions");
    return sum / T(n);
}

// -------------------------------------------------------- diffusion head

// Per-token forward bookkeeping kept for the backward pass.
template <typename T>
struct DiffEval {
    int t = 0;
    std::vector<T> input;  // [x_t, z, temb]
    std::vector<T> h1pre, h1, h2pre, h2, eps_hat, eps;
};

// eps-prediction MLP: (x_t, z, temb(t)) -> 256 -> 256 -> token_dim.
template <typename T>
void diff_eps_mlp(const ModelParams<T>& p, const DiffusionSchedule& sched, const T* x_t, const T* z,
                  int t, T* eps_hat, DiffEval<T>* ev = nullptr) {
    const model::ModelConfig& c = p.cfg;
    const int td = c.token_dim, d = c.d_model, dt = c.d_time, hid = c.diff_hidden;
    std::vector<T> input(static_cast<size_t>(td + d + dt));
    std::copy(x_t, x_t + td, input.data());
    std::copy(z, z + d, input.data() + td);
    const double* te = sched.temb_row(t);
    for (int i = 0; i < dt; ++i) input[static_cast<size_t>(td + d + i)] = static_cast<T>(te[i]);

    std::vector<T> h1pre(static_cast<size_t>(hid)), h1(static_cast<size_t>(hid));
    std::vector<T> h2pre(static_cast<size_t>(hid)), h2(static_cast<size_t>(hid));
    for (int o = 0; o < hid; ++o)
        h1pre[static_cast<size_t>(o)] = dot(p.diff_w1.row(o), input.data(), td + d + dt) + p.diff_b1.at(o);
    for (int o = 0; o < hid; ++o) h1[static_cast<size_t>(o)] = gelu(h1pre[static_cast<size_t>(o)]);
    for (int o = 0; o < hid; ++o)
        h2pre[static_cast<size_t>(o)] = dot(p.diff_w2.row(o), h1.data(), hid) + p.diff_b2.at(o);
    for (int o = 0; o < hid; ++o) h2[static_cast<size_t>(o)] = gelu(h2pre[static_cast<size_t>(o)]);
    for (int o = 0; o < td; ++o) eps_hat[o] = dot(p.diff_w3.row(o), h2.data(), hid) + p.diff_b3.at(o);

    if (ev) {
        ev->t = t;
        ev->input = std::move(input);
        ev->h1pre = std::move(h1pre);
        ev->h1 = std::move(h1);
        ev->h2pre = std::move(h2pre);
        ev->h2 = std::move(h2);
        ev->eps_hat.assign(eps_hat, eps_hat + td);
    }
}

template <typename T>
T eps_mse(const T* eps_hat, const T* eps, int dim) {
    T loss = T(0);
    for (int i = 0; i < dim; ++i) {
        const T d = eps_hat[i] - eps[i];
        loss += d * d;
    }
    return loss / T(dim);
}

// Diffusion loss for a single token at an explicit (t, eps):
// x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps, loss = ||eps_hat - eps||^2 / dim.
template <typename T>
T diffusion_loss_at(const ModelParams<T>& p, const DiffusionSchedule& sched, const T* x0, const T* z,
                    int t, const T* eps, DiffEval<T>* ev = nullptr) {
    const int td = p.cfg.token_dim;
    std::vector<T> x_t(static_cast<size_t>(td));
    const double ab = sched.alpha_bar[static_cast<size_t>(t)];
    const T sa = static_cast<T>(std::sqrt(ab)), sb = static_cast<T>(std::sqrt(1.0 - ab));
    for (int i = 0; i < td; ++i) x_t[static_cast<size_t>(i)] = sa * x0[i] + sb * eps[i];
    std::vector<T> eps_hat(static_cast<size_t>(td));
    diff_eps_mlp(p, sched, x_t.data(), z, t, eps_hat.data(), ev);
    const T loss = eps_mse(eps_hat.data(), eps, td);
    if (ev) ev->eps.assign(eps, eps + td);
    return loss;
}

// One-draw diffusion loss: t ~ U{1..T}, eps ~ N(0,I).
template <typename T>
T diffusion_loss_fwd(const ModelParams<T>& p, const DiffusionSchedule& sched, const T* x0, const T* z,
                     Rng& rng, DiffEval<T>* ev = nullptr) {
    const int td = p.cfg.token_dim;
    const int t = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(sched.t_train)));
    std::vector<T> eps(static_cast<size_t>(td));
    for (auto& e : eps) e = static_cast<T>(rng.normal());
    return diffusion_loss_at(p, sched, x0, z, t, eps.data(), ev);
}

// Backprop of one token's loss through the MLP; head grads scaled by
// `weight`, conditioning gradient added into dz.
template <typename T>
void diffusion_loss_bwd(const ModelParams<T>& p, ModelParams<T>& g, const DiffEval<T>& ev, T weight,
                        T* dz) {
    const model::ModelConfig& c = p.cfg;
    const int td = c.token_dim, d = c.d_model, dt = c.d_time, hid = c.diff_hidden;

    std::vector<T> deps(static_cast<size_t>(td));
    for (int i = 0; i < td; ++i)
        deps[static_cast<size_t>(i)] =
            T(2) * (ev.eps_hat[static_cast<size_t>(i)] - ev.eps[static_cast<size_t>(i)]) / T(td) * weight;

    std::vector<T> dh2(static_cast<size_t>(hid), T(0));
    for (int o = 0; o < td; ++o) {
        axpy(deps[static_cast<size_t>(o)], ev.h2.data(), g.diff_w3.row(o), hid);
        g.diff_b3.at(o) += deps[static_cast<size_t>(o)];
        axpy(deps[static_cast<size_t>(o)], p.diff_w3.row(o), dh2.data(), hid);
    }
    for (int o = 0; o < hid; ++o) dh2[static_cast<size_t>(o)] *= gelu_grad(ev.h2pre[static_cast<size_t>(o)]);

    std::vector<T> dh1(static_cast<size_t>(hid), T(0));
    for (int o = 0; o < hid; ++o) {
        axpy(dh2[static_cast<size_t>(o)], ev.h1.data(), g.diff_w2.row(o), hid);
        g.diff_b2.at(o) += dh2[static_cast<size_t>(o)];
        axpy(dh2[static_cast<size_t>(o)], p.diff_w2.row(o), dh1.data(), hid);
    }
    for (int o = 0; o < hid; ++o) dh1[static_cast<size_t>(o)] *= gelu_grad(ev.h1pre[static_cast<size_t>(o)]);

    const int in_dim = td + d + dt;
    for (int o = 0; o < hid; ++o) {
        axpy(dh1[static_cast<size_t>(o)], ev.input.data(), g.diff_w1.row(o), in_dim);
        g.diff_b1.at(o) += dh1[static_cast<size_t>(o)];
        // conditioning slice of the input
        axpy(dh1[static_cast<size_t>(o)], p.diff_w1.row(o) + td, dz, d);
    }
}

// ---------------------------------------------------------------- sample

// Ancestral DDPM over the strided sample_steps subsequence, posterior
// variance beta-tilde, no guidance. Each step forms the implied x0 from
// the predicted noise and clamps it to +-x0_clip before the posterior
// mean; near alpha_bar ~ 0 the unclamped update would amplify denoiser
// error without bound. eps_fn(x_t, t, eps_out) supplies the denoiser;
// tests inject analytic denoisers through this hook.
template <typename T, class EpsFn>
std::vector<T> ddpm_sample(const DiffusionSchedule& sched, int dim, EpsFn&& eps_fn, Rng& rng) {
    std::vector<T> x(static_cast<size_t>(dim)), eps_hat(static_cast<size_t>(dim));
    for (auto& v : x) v = static_cast<T>(rng.normal());
    const int n = static_cast<int>(sched.sample_steps.size());
    for (int idx = n - 1; idx >= 0; --idx) {
        const int t_cur = sched.sample_steps[static_cast<size_t>(idx)];
        const int t_prev = idx > 0 ? sched.sample_steps[static_cast<size_t>(idx) - 1] : 0;
        const double ab_cur = sched.alpha_bar[static_cast<size_t>(t_cur)];
        const double ab_prev = sched.alpha_bar[static_cast<size_t>(t_prev)];
        const double alpha = ab_cur / ab_prev;
        const double beta = 1.0 - alpha;
        eps_fn(x.data(), t_cur, eps_hat.data());
        const double inv_sab = 1.0 / std::sqrt(ab_cur);
        const double c_eps = std::sqrt(1.0 - ab_cur);
        const double w_x0 = std::sqrt(ab_prev) * beta / (1.0 - ab_cur);
        const double w_xt = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_cur);
        for (int i = 0; i < dim; ++i) {
            const double xt = static_cast<double>(x[static_cast<size_t>(i)]);
            double x0 = inv_sab * (xt - c_eps * static_cast<double>(eps_hat[static_cast<size_t>(i)]));
            x0 = std::min(sched.x0_clip, std::max(-sched.x0_clip, x0));
            x[static_cast<size_t>(i)] = static_cast<T>(t_prev > 0 ? w_x0 * x0 + w_xt * xt : x0);
        }
        if (t_prev > 0) {
            const double sd = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_cur));
            for (int i = 0; i < dim; ++i) x[static_cast<size_t>(i)] += static_cast<T>(sd * rng.normal());
        }
    }
    return x;
}

// Samples one continuous token conditioned on backbone output z.
template <typename T>
std::vector<T> diffusion_sample(const ModelParams<T>& p, const DiffusionSchedule& sched, const T* z,
                                Rng& rng) {
    return ddpm_sample<T>(
        sched, p.cfg.token_dim,
        [&](const T* x_t, int t, T* out) { diff_eps_mlp(p, sched, x_t, z, t, out); }, rng);
}

}  // namespace unifluid::heads
