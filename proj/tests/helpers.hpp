// Shared fixtures for the unit and acceptance suites.
#pragma once

#include "unifluid/io.hpp"
#include "unifluid/runner.hpp"
#include "unifluid/training.hpp"

namespace testutil {

using namespace unifluid;

// Minimal valid run config (required keys only differ per test).
inline io::RunConfig base_config(uint64_t seed = 1) {
    io::RunConfig cfg;
    cfg.seed = seed;
    cfg.codec_seed = 1;
    cfg.enc_seed = 2;
    return cfg;
}

// 1-layer d_model=16 config for gradient checking (64-bit core).
inline io::RunConfig tiny_config(uint64_t seed = 1) {
    io::RunConfig cfg = base_config(seed);
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_seq = 32;
    cfg.d_time = 16;
    cfg.diff_hidden = 32;
    cfg.oversample = 1;
    cfg.noise_sigma = 0.0;
    cfg.f64 = true;
    return cfg;
}

template <typename T>
struct TinyWorld {
    data::Corpus corpus;
    train::TrainContext<T> ctx;
    heads::DiffusionSchedule sched;
    model::ModelParams<T> params;
};

template <typename T>
TinyWorld<T> make_tiny_world(const io::RunConfig& cfg) {
    TinyWorld<T> w;
    w.corpus = data::build_corpus(cfg.corpus_config());
    if (cfg.corpus_limit > 0 && cfg.corpus_limit < static_cast<int>(w.corpus.train_idx.size()))
        w.corpus.train_idx.resize(static_cast<size_t>(cfg.corpus_limit));
    w.ctx = train::make_train_context<T>(w.corpus, cfg.codec_config(), codec::make_vocab(cfg.vocab));
    w.sched = heads::make_cosine_schedule(cfg.t_train, cfg.sample_steps, cfg.d_time);
    w.params = model::ModelParams<T>::make(cfg.model_config());
    model::init_params(w.params, derive_seed(cfg.seed, train::kStreamInit));
    return w;
}

// Mixed GEN+UND batch assembled deterministically from the corpus.
template <typename T>
train::Batch<T> mixed_batch(const TinyWorld<T>& w, const io::RunConfig& cfg, int size, int64_t step = 0) {
    train::TrainConfig tc = cfg.train_config();
    tc.batch_size = size;
    return train::assemble_batch(w.ctx, tc, step);
}

// ---- independent dense-matrix oracle for the Frechet distance ----
// Denman-Beavers sqrtm iteration + Gauss-Jordan inverses; a different
// algorithmic route than the Jacobi path under test.

inline std::vector<double> matmul_n(const std::vector<double>& a, const std::vector<double>& b, int n) {
    std::vector<double> c(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k)
            for (int j = 0; j < n; ++j)
                c[static_cast<size_t>(i) * n + j] +=
                    a[static_cast<size_t>(i) * n + k] * b[static_cast<size_t>(k) * n + j];
    return c;
}

inline std::vector<double> inverse_n(std::vector<double> a, int n) {
    std::vector<double> inv(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) inv[static_cast<size_t>(i) * n + i] = 1.0;
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[static_cast<size_t>(r) * n + col]) > std::abs(a[static_cast<size_t>(piv) * n + col]))
                piv = r;
        for (int j = 0; j < n; ++j) {
            std::swap(a[static_cast<size_t>(piv) * n + j], a[static_cast<size_t>(col) * n + j]);
            std::swap(inv[static_cast<size_t>(piv) * n + j], inv[static_cast<size_t>(col) * n + j]);
        }
        const double d = a[static_cast<size_t>(col) * n + col];
        require(std::abs(d) > 1e-14, Err::NumericalFailure, "singular matrix in oracle");
        for (int j = 0; j < n; ++j) {
            a[static_cast<size_t>(col) * n + j] /= d;
            inv[static_cast<size_t>(col) * n + j] /= d;
        }
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[static_cast<size_t>(r) * n + col];
            for (int j = 0; j < n; ++j) {
                a[static_cast<size_t>(r) * n + j] -= f * a[static_cast<size_t>(col) * n + j];
                inv[static_cast<size_t>(r) * n + j] -= f * inv[static_cast<size_t>(col) * n + j];
            }
        }
    }
    return inv;
}

inline std::vector<double> sqrtm_denman_beavers(const std::vector<double>& a, int n) {
    std::vector<double> y = a, z(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) z[static_cast<size_t>(i) * n + i] = 1.0;
    for (int it = 0; it < 80; ++it) {
        const auto zi = inverse_n(z, n), yi = inverse_n(y, n);
        std::vector<double> y2(y.size()), z2(z.size());
        for (size_t k = 0; k < y.size(); ++k) {
            y2[k] = 0.5 * (y[k] + zi[k]);
            z2[k] = 0.5 * (z[k] + yi[k]);
        }
        y = std::move(y2);
        z = std::move(z2);
    }
    return y;
}

inline double frechet_oracle(const eval::FeatureMoments& m1, const eval::FeatureMoments& m2) {
    const int n = m1.dim;
    double d2 = 0;
    for (int i = 0; i < n; ++i) {
        const double d = m1.mu[static_cast<size_t>(i)] - m2.mu[static_cast<size_t>(i)];
        d2 += d * d;
    }
    const auto prod = matmul_n(m1.sigma, m2.sigma, n);
    const auto root = sqrtm_denman_beavers(prod, n);
    double tr = 0;
    for (int i = 0; i < n; ++i)
        tr += m1.sigma[static_cast<size_t>(i) * n + i] + m2.sigma[static_cast<size_t>(i) * n + i] -
              2.0 * root[static_cast<size_t>(i) * n + i];
    return d2 + tr;
}

inline eval::FeatureMoments random_moments(int dim, Rng& rng) {
    eval::FeatureMoments m;
    m.dim = dim;
    m.mu.resize(static_cast<size_t>(dim));
    for (auto& x : m.mu) x = rng.normal();
    std::vector<double> a(static_cast<size_t>(dim) * dim);
    for (auto& x : a) x = rng.normal();
    m.sigma.assign(static_cast<size_t>(dim) * dim, 0.0);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) {
            for (int k = 0; k < dim; ++k)
                m.sigma[static_cast<size_t>(i) * dim + j] +=
                    a[static_cast<size_t>(i) * dim + k] * a[static_cast<size_t>(j) * dim + k];
            if (i == j) m.sigma[static_cast<size_t>(i) * dim + j] += 0.05;
        }
    return m;
}

}  // namespace testutil
