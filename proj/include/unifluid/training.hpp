// Joint training: batch assembly over both tasks, the unified loss
// L = L_Visual + lambda * L_Text with hand-written backprop, order-anneal
// and warmup schedules, AdamW, latent standardization, and the
// finite-difference gradient checker.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "unifluid/backbone.hpp"
#include "unifluid/codec.hpp"
#include "unifluid/data.hpp"
#include "unifluid/heads.hpp"
#include "unifluid/sequence.hpp"

namespace unifluid::train {

using model::ModelParams;

struct TrainConfig {
    double lambda_text = 0.005;
    int64_t total_steps = 20000;
    double warmup_frac = 0.065;
    double lr = 1e-4;
    int batch_size = 32;
    double task_mix_gen = 0.5;
    double order_random_frac = 0.3;
    double order_anneal_end_frac = 0.6;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.01;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    int64_t log_every = 100;
    int64_t save_every = 5000;
    double und_caption_frac = 0.5;  // understanding batches: caption vs QA mix

    void validate() const {
        require(lambda_text >= 0.0, Err::ConfigError, "lambda_text must be >= 0");
        require(order_random_frac >= 0.0 && order_random_frac <= order_anneal_end_frac &&
                    order_anneal_end_frac <= 1.0,
                Err::ConfigError, "order anneal fractions must satisfy 0 <= rf <= ae <= 1");
        require(warmup_frac >= 0.0 && warmup_frac <= 1.0, Err::ConfigError, "warmup_frac in [0,1]");
        require(task_mix_gen >= 0.0 && task_mix_gen <= 1.0, Err::ConfigError, "task_mix_gen in [0,1]");
        require(batch_size >= 1, Err::ConfigError, "batch_size >= 1");
    }
};

// ------------------------------------------------------------- schedules

inline double lr_at(int64_t step, const TrainConfig& cfg) {
    const int64_t warmup = std::llround(cfg.warmup_frac * static_cast<double>(cfg.total_steps));
    if (warmup <= 0 || step >= warmup) return cfg.lr;
    return cfg.lr * (static_cast<double>(step) / static_cast<double>(warmup));
}

// Probability that a generation example at this step uses a random order.
inline double order_random_prob(int64_t step, const TrainConfig& cfg) {
    const double frac = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
    if (frac < cfg.order_random_frac) return 1.0;
    if (frac >= cfg.order_anneal_end_frac) return 0.0;
    const double span = cfg.order_anneal_end_frac - cfg.order_random_frac;
    return (cfg.order_anneal_end_frac - frac) / span;
}

inline seq::OrderMode order_mode(int64_t step, const TrainConfig& cfg, Rng& rng) {
    return rng.bernoulli(order_random_prob(step, cfg)) ? seq::OrderMode::Random : seq::OrderMode::Raster;
}

// ----------------------------------------------------------- latent stats

struct LatentStats {
    std::vector<double> mean, stdev;  // per token dimension
};

inline LatentStats compute_latent_stats(const data::Corpus& corpus, const codec::CodecConfig& ccfg) {
    const int td = ccfg.token_dim();
    LatentStats st;
    st.mean.assign(static_cast<size_t>(td), 0.0);
    st.stdev.assign(static_cast<size_t>(td), 0.0);
    int64_t n = 0;
    for (int idx : corpus.train_idx) {
        const auto grid = codec::encode_image(corpus.examples[static_cast<size_t>(idx)].image, ccfg);
        for (const auto& tok : codec::merge_tokens(grid, ccfg)) {
            for (int i = 0; i < td; ++i) st.mean[static_cast<size_t>(i)] += tok[static_cast<size_t>(i)];
            ++n;
        }
    }
    require(n > 0, Err::EmptyBatch, "no train latents");
    for (auto& m : st.mean) m /= static_cast<double>(n);
    for (int idx : corpus.train_idx) {
        const auto grid = codec::encode_image(corpus.examples[static_cast<size_t>(idx)].image, ccfg);
        for (const auto& tok : codec::merge_tokens(grid, ccfg))
            for (int i = 0; i < td; ++i) {
                const double d = tok[static_cast<size_t>(i)] - st.mean[static_cast<size_t>(i)];
                st.stdev[static_cast<size_t>(i)] += d * d;
            }
    }
    for (auto& s : st.stdev) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-6);
    return st;
}

inline void standardize(std::vector<double>& tok, const LatentStats& st) {
    for (size_t i = 0; i < tok.size(); ++i) tok[i] = (tok[i] - st.mean[i]) / st.stdev[i];
}

inline void unstandardize(std::vector<double>& tok, const LatentStats& st) {
    for (size_t i = 0; i < tok.size(); ++i) tok[i] = tok[i] * st.stdev[i] + st.mean[i];
}

// ----------------------------------------------------------- train context
// Precomputed per-example model inputs: standardized latent tokens for
// generation and frozen encoder features for understanding.

template <typename T>
struct TrainContext {
    const data::Corpus* corpus = nullptr;
    codec::CodecConfig ccfg;
    codec::Vocab vocab;
    LatentStats stats;
    std::vector<std::vector<std::vector<T>>> latents;  // [example][cell][dim], standardized
    std::vector<codec::EncoderFeatures> features;      // [example]
};

template <typename T>
TrainContext<T> make_train_context(const data::Corpus& corpus, const codec::CodecConfig& ccfg,
                                   const codec::Vocab& vocab) {
    TrainContext<T> ctx;
    ctx.corpus = &corpus;
    ctx.ccfg = ccfg;
    ctx.vocab = vocab;
    ctx.stats = compute_latent_stats(corpus, ccfg);
    const size_t n = corpus.examples.size();
    ctx.latents.resize(n);
    ctx.features.resize(n);
    const int nthreads = env_threads();
    parallel_for(static_cast<int>(n), nthreads, [&](int i) {
        const auto& ex = corpus.examples[static_cast<size_t>(i)];
        const auto grid = codec::encode_image(ex.image, ccfg);
        auto tokens = codec::merge_tokens(grid, ccfg);
        auto& out = ctx.latents[static_cast<size_t>(i)];
        out.reserve(tokens.size());
        for (auto& tok : tokens) {
            standardize(tok, ctx.stats);
            std::vector<T> cast(tok.size());
            for (size_t k = 0; k < tok.size(); ++k) cast[k] = static_cast<T>(tok[k]);
            out.push_back(std::move(cast));
        }
        ctx.features[static_cast<size_t>(i)] = codec::encode_for_understanding(ex.image, ccfg);
    });
    return ctx;
}

// ---------------------------------------------------------------- batches

template <typename T>
struct BatchItem {
    seq::TokenStream<T> stream;
    seq::AttentionMask mask;
    bool is_gen = false;
    bool is_random_order = false;
};

template <typename T>
using Batch = std::vector<BatchItem<T>>;

inline constexpr uint64_t kStreamBatch = 0xBA7C;
inline constexpr uint64_t kStreamNoise = 0x4015;
inline constexpr uint64_t kStreamInit = 0x1217;

// One training batch, a pure function of (config, step). Generation
// examples use caption prompts; understanding examples mix the captioning
// question with the QA templates.
template <typename T>
Batch<T> assemble_batch(const TrainContext<T>& ctx, const TrainConfig& cfg, int64_t step) {
    Rng rng(derive_seed(cfg.seed, kStreamBatch, static_cast<uint64_t>(step)));
    Batch<T> batch;
    batch.reserve(static_cast<size_t>(cfg.batch_size));
    const auto& train_idx = ctx.corpus->train_idx;
    require(!train_idx.empty(), Err::EmptyBatch, "corpus has no train examples");
    const int n_img = ctx.ccfg.n_img();
    for (int b = 0; b < cfg.batch_size; ++b) {
        const bool is_gen = rng.bernoulli(cfg.task_mix_gen);
        const int idx = train_idx[rng.below(train_idx.size())];
        const auto& ex = ctx.corpus->examples[static_cast<size_t>(idx)];
        BatchItem<T> item;
        item.is_gen = is_gen;
        if (is_gen) {
            const seq::OrderMode mode = order_mode(step, cfg, rng);
            item.is_random_order = mode == seq::OrderMode::Random;
            const auto perm = seq::sample_permutation(mode, n_img, rng);
            const auto prompt = codec::tokenize_text(data::make_caption(ex.spec), ctx.vocab);
            auto [stream, mask] =
                seq::build_generation_sequence(prompt, ctx.latents[static_cast<size_t>(idx)], perm);
            item.stream = std::move(stream);
            item.mask = std::move(mask);
        } else {
            std::string q, a;
            if (rng.bernoulli(cfg.und_caption_frac)) {
                q = data::caption_question();
                a = data::make_caption(ex.spec);
            } else {
                const auto qa = data::make_qa(ex.spec);
                const auto& pick = qa[rng.below(qa.size())];
                q = pick.first;
                a = pick.second;
            }
            auto [stream, mask] = seq::build_understanding_sequence<T>(
                ctx.features[static_cast<size_t>(idx)], codec::tokenize_text(q, ctx.vocab),
                codec::tokenize_text(a, ctx.vocab));
            item.stream = std::move(stream);
            item.mask = std::move(mask);
        }
        batch.push_back(std::move(item));
    }
    return batch;
}

// ------------------------------------------------------------ unified loss

struct LossParts {
    double total = 0.0;
    double visual = 0.0;
    double text = 0.0;
    int64_t n_visual = 0;
    int64_t n_text = 0;
};

namespace detail {

// Reusable per-slot scratch for loss evaluation.
template <typename T>
struct LossWork {
    model::Trace<T> tr;
    model::BackwardScratch<T> bs;
    Tensor<T> dz;
};

// Per-example loss (and optionally gradients). Loss-flagged entries are
// prediction targets; the predictor is the previous stream position.
// Noise draws come from a per-example generator so results are identical
// between loss-only and gradient evaluations.
template <typename T>
void example_loss(const ModelParams<T>& p, ModelParams<T>* g, const BatchItem<T>& item,
                  const heads::DiffusionSchedule& sched, double lambda, uint64_t example_noise_seed,
                  int64_t n_visual, int64_t n_text, double& vis_sum, double& text_sum,
                  LossWork<T>& work) {
    model::forward(p, item.stream, item.mask, work.tr);
    Rng rng(example_noise_seed);

    const int n = item.stream.size();
    if (g) {
        work.dz.reshape({n, p.cfg.d_model});
        work.dz.zero();
    }
    heads::DiffEval<T> ev;

    for (int pos = 0; pos < n; ++pos) {
        const auto& e = item.stream.entries[static_cast<size_t>(pos)];
        if (!e.loss_flag) continue;
        require(pos >= 1, Err::ShapeMismatch, "flagged entry without predictor");
        const T* z = work.tr.z.row(pos - 1);
        if (e.modality == seq::Modality::Text) {
            const T w = static_cast<T>(lambda / static_cast<double>(n_text));
            T* dzrow = g ? work.dz.row(pos - 1) : nullptr;
            text_sum += static_cast<double>(heads::text_ce(p, g, z, e.token_id, w, dzrow));
        } else {
            const T loss = heads::diffusion_loss_fwd(p, sched, e.vec.data(), z, rng, g ? &ev : nullptr);
            vis_sum += static_cast<double>(loss);
            if (g)
                heads::diffusion_loss_bwd(p, *g, ev, static_cast<T>(1.0 / static_cast<double>(n_visual)),
                                          work.dz.row(pos - 1));
        }
    }
    if (g) model::backward(p, *g, item.stream, item.mask, work.tr, work.dz, work.bs);
}

}  // namespace detail

// L = L_Visual + lambda * L_Text, each term the mean over its flagged
// positions across the batch; absent terms contribute zero. When `grads`
// is non-null the full gradient is accumulated into it. Per-example
// contributions are computed into scratch buffers and reduced in example
// order, so results are bitwise identical for any thread count.
template <typename T>
LossParts unified_loss(const ModelParams<T>& p, ModelParams<T>* grads, const Batch<T>& batch,
                       const heads::DiffusionSchedule& sched, double lambda, uint64_t noise_seed,
                       int nthreads = 1) {
    require(!batch.empty(), Err::EmptyBatch, "empty batch");
    LossParts parts;
    for (const auto& item : batch)
        for (const auto& e : item.stream.entries)
            if (e.loss_flag) {
                if (e.modality == seq::Modality::Text)
                    ++parts.n_text;
                else
                    ++parts.n_visual;
            }

    const int nb = static_cast<int>(batch.size());
    std::vector<double> vis(static_cast<size_t>(nb), 0.0), txt(static_cast<size_t>(nb), 0.0);

    const int slots = std::max(1, std::min(nthreads, nb));
    std::vector<detail::LossWork<T>> works(static_cast<size_t>(slots));
    std::vector<ModelParams<T>> bufs;
    if (grads) {
        bufs.reserve(static_cast<size_t>(slots));
        for (int s = 0; s < slots; ++s) bufs.push_back(ModelParams<T>::make(p.cfg));
    }
    for (int lo = 0; lo < nb; lo += slots) {
        const int cnt = std::min(slots, nb - lo);
        parallel_for(cnt, cnt, [&](int s) {
            const int i = lo + s;
            ModelParams<T>* gbuf = nullptr;
            if (grads) {
                gbuf = &bufs[static_cast<size_t>(s)];
                model::zero_grads(*gbuf);
            }
            detail::example_loss<T>(p, gbuf, batch[static_cast<size_t>(i)], sched, lambda,
                                    derive_seed(noise_seed, kStreamNoise, static_cast<uint64_t>(i)),
                                    std::max<int64_t>(parts.n_visual, 1), std::max<int64_t>(parts.n_text, 1),
                                    vis[static_cast<size_t>(i)], txt[static_cast<size_t>(i)],
                                    works[static_cast<size_t>(s)]);
        });
        if (grads) {
            // reduce in example order per element: bitwise identical for
            // any slot count; parallel across tensors
            std::vector<Tensor<T>*> dst;
            for_each_tensor(*grads, [&](const std::string&, Tensor<T>& t) { dst.push_back(&t); });
            std::vector<std::vector<Tensor<T>*>> srcs(static_cast<size_t>(cnt));
            for (int s = 0; s < cnt; ++s)
                for_each_tensor(bufs[static_cast<size_t>(s)],
                                [&](const std::string&, Tensor<T>& t) { srcs[static_cast<size_t>(s)].push_back(&t); });
            parallel_for(static_cast<int>(dst.size()), nthreads, [&](int k) {
                for (int s = 0; s < cnt; ++s) {
                    const T* src = srcs[static_cast<size_t>(s)][static_cast<size_t>(k)]->data();
                    T* d = dst[static_cast<size_t>(k)]->data();
                    const int64_t sz = dst[static_cast<size_t>(k)]->size();
                    for (int64_t e = 0; e < sz; ++e) d[e] += src[e];
                }
            });
        }
    }

    double vis_sum = 0.0, txt_sum = 0.0;
    for (int i = 0; i < nb; ++i) {
        vis_sum += vis[static_cast<size_t>(i)];
        txt_sum += txt[static_cast<size_t>(i)];
    }
    parts.visual = parts.n_visual > 0 ? vis_sum / static_cast<double>(parts.n_visual) : 0.0;
    parts.text = parts.n_text > 0 ? txt_sum / static_cast<double>(parts.n_text) : 0.0;
    parts.total = parts.visual + lambda * parts.text;
    return parts;
}

// ---------------------------------------------------------------- adamw

template <typename T>
struct AdamState {
    ModelParams<T> m, v;
    int64_t step = 0;

    static AdamState make(const model::ModelConfig& cfg) {
        AdamState s;
        s.m = ModelParams<T>::make(cfg);
        s.v = ModelParams<T>::make(cfg);
        return s;
    }
};

template <typename T>
void adamw_step(ModelParams<T>& p, const ModelParams<T>& g, AdamState<T>& st, double lr,
                const TrainConfig& cfg) {
    st.step += 1;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
    std::vector<Tensor<T>*> tp, tg, tm, tv;
    for_each_tensor(p, [&](const std::string&, Tensor<T>& t) { tp.push_back(&t); });
    for_each_tensor(const_cast<ModelParams<T>&>(g), [&](const std::string&, Tensor<T>& t) { tg.push_back(&t); });
    for_each_tensor(st.m, [&](const std::string&, Tensor<T>& t) { tm.push_back(&t); });
    for_each_tensor(st.v, [&](const std::string&, Tensor<T>& t) { tv.push_back(&t); });
    for (size_t k = 0; k < tp.size(); ++k) {
        T* w = tp[k]->data();
        const T* gr = tg[k]->data();
        T* m = tm[k]->data();
        T* v = tv[k]->data();
        const int64_t n = tp[k]->size();
        for (int64_t i = 0; i < n; ++i) {
            const double gi = static_cast<double>(gr[i]);
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            const double upd = mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * static_cast<double>(w[i]);
            w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * upd);
        }
    }
}

// ------------------------------------------------------------ train loop

struct StepLog {
    int64_t step = 0;
    double loss = 0.0, visual = 0.0, text = 0.0, lr = 0.0, rnd_frac = 0.0;

    std::string line() const {
        return "step=" + std::to_string(step) + " L=" + g17(loss) + " Lv=" + g17(visual) +
               " Lt=" + g17(text) + " lr=" + g17(lr) + " rnd_frac=" + g17(rnd_frac);
    }
};

template <typename T>
struct TrainHooks {
    std::function<void(const StepLog&)> on_log;
    std::function<void(int64_t, const ModelParams<T>&, const AdamState<T>&)> on_save;
    int64_t halt_after = -1;  // stop early after this step (simulated interruption)
};

// Runs AdamW training from st.step to total_steps. Deterministic given
// config seed: batches and noise derive from (seed, step) alone, so a run
// resumed from a checkpoint continues the uninterrupted trajectory.
template <typename T>
void train_loop(ModelParams<T>& params, AdamState<T>& st, const TrainContext<T>& ctx,
                const TrainConfig& cfg, const heads::DiffusionSchedule& sched,
                const TrainHooks<T>& hooks, int nthreads) {
    cfg.validate();
    ModelParams<T> grads = ModelParams<T>::make(params.cfg);
    for (int64_t step = st.step; step < cfg.total_steps; ++step) {
        const Batch<T> batch = assemble_batch(ctx, cfg, step);
        model::zero_grads(grads);
        const LossParts parts = unified_loss(params, &grads, batch, sched, cfg.lambda_text,
                                             derive_seed(cfg.seed, kStreamNoise, static_cast<uint64_t>(step)),
                                             nthreads);
        if (!std::isfinite(parts.total))
            fail(Err::NonFiniteLoss, "step " + std::to_string(step) + " L=" + g17(parts.total) +
                                         " Lv=" + g17(parts.visual) + " Lt=" + g17(parts.text));
        const double lr = lr_at(step, cfg);
        if (hooks.on_log && (step % cfg.log_every == 0 || step + 1 == cfg.total_steps)) {
            StepLog log{step, parts.total, parts.visual, parts.text, lr, order_random_prob(step, cfg)};
            hooks.on_log(log);
        }
        adamw_step(params, grads, st, lr, cfg);
        if (hooks.on_save && (st.step % cfg.save_every == 0 || st.step == cfg.total_steps))
            hooks.on_save(st.step, params, st);
        if (hooks.halt_after >= 0 && st.step >= hooks.halt_after) break;
    }
}

// ------------------------------------------------------------- gradcheck

struct GradCheckEntry {
    std::string name;
    double max_rel = 0.0;
    double max_abs = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool pass = false;
    double worst = 0.0;
    std::string worst_name;
};

// Central finite differences (h = 1e-5) against the analytic gradient on
// >= `coords` random coordinates per tensor. Noise draws are fixed by
// noise_seed, so every loss evaluation sees identical (t, eps).
// Relative error uses an absolute floor so true-zero gradients compare
// cleanly.
template <typename T>
GradCheckReport grad_check(ModelParams<T>& p, const Batch<T>& batch,
                           const heads::DiffusionSchedule& sched, double lambda, uint64_t noise_seed,
                           int coords = 10, double h = 1e-5, double tol = 1e-4) {
    static_assert(std::is_same_v<T, double>, "grad_check requires the 64-bit core");
    ModelParams<T> grads = ModelParams<T>::make(p.cfg);
    model::zero_grads(grads);
    unified_loss(p, &grads, batch, sched, lambda, noise_seed);

    GradCheckReport report;
    Rng rng(derive_seed(noise_seed, 0x6C));
    std::vector<std::pair<std::string, Tensor<T>*>> plist, glist;
    for_each_tensor(p, [&](const std::string& n, Tensor<T>& t) { plist.emplace_back(n, &t); });
    for_each_tensor(grads, [&](const std::string& n, Tensor<T>& t) { glist.emplace_back(n, &t); });

    for (size_t k = 0; k < plist.size(); ++k) {
        GradCheckEntry entry;
        entry.name = plist[k].first;
        Tensor<T>& t = *plist[k].second;
        const int n_coords = static_cast<int>(std::min<int64_t>(coords, t.size()));
        for (int c = 0; c < n_coords; ++c) {
            const int64_t i = static_cast<int64_t>(rng.below(static_cast<uint64_t>(t.size())));
            const T orig = t.v[static_cast<size_t>(i)];
            t.v[static_cast<size_t>(i)] = orig + static_cast<T>(h);
            const double lp = unified_loss<T>(p, nullptr, batch, sched, lambda, noise_seed).total;
            t.v[static_cast<size_t>(i)] = orig - static_cast<T>(h);
            const double lm = unified_loss<T>(p, nullptr, batch, sched, lambda, noise_seed).total;
            t.v[static_cast<size_t>(i)] = orig;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = static_cast<double>(glist[k].second->v[static_cast<size_t>(i)]);
            const double abs_diff = std::abs(analytic - numeric);
            const double rel = abs_diff / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
            entry.max_abs = std::max(entry.max_abs, abs_diff);
            entry.max_rel = std::max(entry.max_rel, rel);
        }
        if (entry.max_rel > report.worst) {
            report.worst = entry.max_rel;
            report.worst_name = entry.name;
        }
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.worst < tol;
    return report;
}

}  // namespace unifluid::train
