// Evaluation metrics: Frechet distance over oracle feature moments
// (toy-FID), attribute-match scoring of generated images against their
// prompts, and exact-match / token-accuracy understanding metrics.
#pragma once

#include <string>
#include <vector>

#include "unifluid/codec.hpp"
#include "unifluid/data.hpp"
#include "unifluid/infer.hpp"

namespace unifluid::eval {

// -------------------------------------------------------------- moments

struct FeatureMoments {
    int dim = 0;
    std::vector<double> mu;     // dim
    std::vector<double> sigma;  // dim x dim, symmetric PSD
};

// Sample moments with unbiased covariance; rank-deficient sets (fewer than
// dim+1 samples) get a ridge of 1e-6 on the diagonal.
inline FeatureMoments compute_moments(const std::vector<std::vector<double>>& features) {
    require(features.size() >= 2, Err::ShapeMismatch, "need >= 2 feature vectors");
    const int n = static_cast<int>(features.size());
    const int d = static_cast<int>(features[0].size());
    FeatureMoments m;
    m.dim = d;
    m.mu.assign(static_cast<size_t>(d), 0.0);
    m.sigma.assign(static_cast<size_t>(d) * d, 0.0);
    for (const auto& f : features) {
        require(static_cast<int>(f.size()) == d, Err::ShapeMismatch, "feature dim mismatch");
        for (int i = 0; i < d; ++i) m.mu[static_cast<size_t>(i)] += f[static_cast<size_t>(i)];
    }
    for (auto& x : m.mu) x /= n;
    for (const auto& f : features)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                m.sigma[static_cast<size_t>(i) * d + j] +=
                    (f[static_cast<size_t>(i)] - m.mu[static_cast<size_t>(i)]) *
                    (f[static_cast<size_t>(j)] - m.mu[static_cast<size_t>(j)]);
    for (auto& x : m.sigma) x /= (n - 1);
    if (n < d + 1)
        for (int i = 0; i < d; ++i) m.sigma[static_cast<size_t>(i) * d + i] += 1e-6;
    return m;
}

// ---------------------------------------------------------------- jacobi

// Cyclic Jacobi eigendecomposition of a symmetric matrix. A is destroyed;
// eigenvectors are returned as columns of V.
inline void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigvals,
                         std::vector<double>& V, int max_sweeps = 64) {
    V.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) V[static_cast<size_t>(i) * n + i] = 1.0;
    auto at = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-24) break;
        if (sweep == max_sweeps - 1) fail(Err::NumericalFailure, "jacobi did not converge");
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(at(p, q)) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = V[static_cast<size_t>(k) * n + p];
                    const double vkq = V[static_cast<size_t>(k) * n + q];
                    V[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
                    V[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = at(i, i);
}

namespace detail {

// B = sqrt(S1) S2 sqrt(S1), symmetrized; returns tr sqrt(B).
inline double trace_sqrt_product(const std::vector<double>& s1, const std::vector<double>& s2, int n) {
    std::vector<double> evals, V;
    jacobi_eigen(s1, n, evals, V);
    std::vector<double> sq(static_cast<size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        const double root = std::sqrt(std::max(evals[static_cast<size_t>(k)], 0.0));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                sq[static_cast<size_t>(i) * n + j] +=
                    root * V[static_cast<size_t>(i) * n + k] * V[static_cast<size_t>(j) * n + k];
    }
    std::vector<double> tmp(static_cast<size_t>(n) * n, 0.0), b(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const double x = sq[static_cast<size_t>(i) * n + k];
            for (int j = 0; j < n; ++j) tmp[static_cast<size_t>(i) * n + j] += x * s2[static_cast<size_t>(k) * n + j];
        }
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const double x = tmp[static_cast<size_t>(i) * n + k];
            for (int j = 0; j < n; ++j) b[static_cast<size_t>(i) * n + j] += x * sq[static_cast<size_t>(k) * n + j];
        }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double avg = 0.5 * (b[static_cast<size_t>(i) * n + j] + b[static_cast<size_t>(j) * n + i]);
            b[static_cast<size_t>(i) * n + j] = avg;
            b[static_cast<size_t>(j) * n + i] = avg;
        }
    std::vector<double> bev, bV;
    jacobi_eigen(b, n, bev, bV);
    double tr = 0.0;
    for (double l : bev) tr += std::sqrt(std::max(l, 0.0));
    return tr;
}

}  // namespace detail

// d^2 = |mu1-mu2|^2 + tr(S1 + S2 - 2 sqrt(sqrt(S1) S2 sqrt(S1))).
inline double frechet_distance(const FeatureMoments& m1, const FeatureMoments& m2) {
    require(m1.dim == m2.dim, Err::ShapeMismatch, "moment dims differ");
    const int n = m1.dim;
    double d2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = m1.mu[static_cast<size_t>(i)] - m2.mu[static_cast<size_t>(i)];
        d2 += d * d;
    }
    double tr = 0.0;
    for (int i = 0; i < n; ++i)
        tr += m1.sigma[static_cast<size_t>(i) * n + i] + m2.sigma[static_cast<size_t>(i) * n + i];
    return d2 + tr - 2.0 * detail::trace_sqrt_product(m1.sigma, m2.sigma, n);
}

// ---------------------------------------------------------------- toy-FID

inline std::vector<std::vector<double>> image_features(const std::vector<codec::ToyImage>& imgs,
                                                       const codec::CodecConfig& ccfg, int d_feat) {
    std::vector<std::vector<double>> out(imgs.size());
    parallel_for(static_cast<int>(imgs.size()), env_threads(),
                 [&](int i) { out[static_cast<size_t>(i)] = codec::eval_features(imgs[static_cast<size_t>(i)], ccfg, d_feat); });
    return out;
}

inline double toy_fid(const std::vector<codec::ToyImage>& gen, const std::vector<codec::ToyImage>& ref,
                      const codec::CodecConfig& ccfg, int d_feat) {
    require(!gen.empty() && !ref.empty(), Err::EmptyBatch, "empty image set");
    return frechet_distance(compute_moments(image_features(gen, ccfg, d_feat)),
                            compute_moments(image_features(ref, ccfg, d_feat)));
}

// Same-distribution baseline: the mean toy-FID between random disjoint
// halves of the reference set.
inline double toy_fid_noise_floor(const std::vector<codec::ToyImage>& ref,
                                  const codec::CodecConfig& ccfg, int d_feat, uint64_t seed,
                                  int repeats = 16) {
    require(ref.size() >= 4, Err::EmptyBatch, "reference set too small");
    const auto feats = image_features(ref, ccfg, d_feat);
    Rng rng(derive_seed(seed, 0xF10));
    double acc = 0.0;
    for (int r = 0; r < repeats; ++r) {
        std::vector<int> idx(ref.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        for (size_t i = idx.size() - 1; i > 0; --i)
            std::swap(idx[i], idx[static_cast<size_t>(rng.below(i + 1))]);
        std::vector<std::vector<double>> a, b;
        for (size_t i = 0; i < idx.size(); ++i)
            (i < idx.size() / 2 ? a : b).push_back(feats[static_cast<size_t>(idx[i])]);
        acc += frechet_distance(compute_moments(a), compute_moments(b));
    }
    return acc / repeats;
}

// ------------------------------------------------------------ attr match

struct AttrAccuracy {
    double color = 0.0, shape = 0.0, position = 0.0, size = 0.0, all = 0.0;
    int count = 0;
};

inline AttrAccuracy attr_match(const std::vector<data::SceneSpec>& prompts,
                               const std::vector<codec::ToyImage>& images) {
    require(prompts.size() == images.size(), Err::LengthMismatch, "prompt/image count mismatch");
    require(!prompts.empty(), Err::EmptyBatch, "no prompts");
    AttrAccuracy acc;
    for (size_t i = 0; i < prompts.size(); ++i) {
        const auto res = data::extract_attributes(images[i]);
        const bool c = res.found && res.spec.color == prompts[i].color;
        const bool s = res.found && res.spec.shape == prompts[i].shape;
        const bool p = res.found && res.spec.position == prompts[i].position;
        const bool z = res.found && res.spec.size == prompts[i].size;
        acc.color += c;
        acc.shape += s;
        acc.position += p;
        acc.size += z;
        acc.all += c && s && p && z;
        ++acc.count;
    }
    acc.color /= acc.count;
    acc.shape /= acc.count;
    acc.position /= acc.count;
    acc.size /= acc.count;
    acc.all /= acc.count;
    return acc;
}

// --------------------------------------------------------- understanding

struct UnderstandingScore {
    double text_acc = 0.0;           // exact-match QA accuracy
    double caption_token_acc = 0.0;  // teacher-forced caption accuracy
    int n_questions = 0;
};

// QA exact-match over a decode callback; the production path binds greedy
// decoding, tests may stuff an oracle to validate the harness itself.
template <typename T, class DecodeFn>
double qa_exact_match(const train::TrainContext<T>& ctx, const std::vector<int>& example_indices,
                      DecodeFn&& decode) {
    require(!example_indices.empty(), Err::EmptyBatch, "no examples");
    int correct = 0, total = 0;
    for (int idx : example_indices) {
        const auto& ex = ctx.corpus->examples[static_cast<size_t>(idx)];
        for (const auto& [q, a] : data::make_qa(ex.spec)) {
            if (decode(idx, q) == a) ++correct;
            ++total;
        }
    }
    return static_cast<double>(correct) / total;
}

// Greedy decoding over the heldout split: every QA pair scored by exact
// string match, captions by teacher-forced token accuracy.
template <typename T>
UnderstandingScore eval_understanding(const model::ModelParams<T>& p,
                                      const train::TrainContext<T>& ctx,
                                      const std::vector<int>& example_indices) {
    require(!example_indices.empty(), Err::EmptyBatch, "no examples");
    UnderstandingScore score;
    score.n_questions = static_cast<int>(example_indices.size()) * 4;
    score.text_acc = qa_exact_match(ctx, example_indices, [&](int idx, const std::string& q) {
        const auto decoded = infer::greedy_decode_answer(p, ctx.features[static_cast<size_t>(idx)],
                                                         codec::tokenize_text(q, ctx.vocab));
        return codec::detokenize_text(decoded, ctx.vocab);
    });
    double cap_acc = 0.0;
    for (int idx : example_indices) {
        const auto& ex = ctx.corpus->examples[static_cast<size_t>(idx)];
        cap_acc += infer::teacher_forced_token_accuracy(
            p, ctx.features[static_cast<size_t>(idx)],
            codec::tokenize_text(data::caption_question(), ctx.vocab),
            codec::tokenize_text(data::make_caption(ex.spec), ctx.vocab));
    }
    score.caption_token_acc = cap_acc / static_cast<double>(example_indices.size());
    return score;
}

}  // namespace unifluid::eval
