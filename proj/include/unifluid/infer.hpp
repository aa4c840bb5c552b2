// Inference paths: KV-cached autoregressive image generation and greedy
// text decoding for captioning / VQA.
#pragma once

#include <string>
#include <vector>

#include "unifluid/backbone.hpp"
#include "unifluid/codec.hpp"
#include "unifluid/heads.hpp"
#include "unifluid/training.hpp"

namespace unifluid::infer {

using model::ModelParams;

// Generates the n_img standardized latent tokens for one prompt with the
// KV cache: prefix [BOS, prompt] is bidirectional, then BOI and image
// tokens are appended causally, sampling each token from the diffusion
// head conditioned on the previous output.
template <typename T>
std::vector<std::vector<T>> generate_latent_tokens(const ModelParams<T>& p,
                                                   const heads::DiffusionSchedule& sched,
                                                   const std::vector<int>& prompt_ids,
                                                   const seq::Permutation& perm, Rng& rng) {
    const int n_img = p.cfg.n_img;
    require(perm.size() == n_img, Err::LengthMismatch, "permutation size != n_img");
    require(perm.valid(), Err::InvalidPermutation, "not a bijection");
    auto cache = model::KVCache<T>::make(p.cfg);

    std::vector<seq::Entry<T>> prefix;
    seq::Entry<T> bos;
    bos.modality = seq::Modality::Text;
    bos.token_id = codec::Vocab::BOS;
    prefix.push_back(bos);
    for (int id : prompt_ids) {
        seq::Entry<T> e;
        e.modality = seq::Modality::Text;
        e.token_id = id;
        prefix.push_back(e);
    }
    model::forward_incremental(p, cache, prefix, model::AppendPolicy::Prefix);

    seq::Entry<T> boi;
    boi.modality = seq::Modality::Boi;
    boi.token_id = codec::Vocab::BOI;
    boi.target_pos2d = perm.order[0];
    Tensor<T> z = model::forward_incremental(p, cache, {boi}, model::AppendPolicy::Causal);

    std::vector<std::vector<T>> grid_tokens(static_cast<size_t>(n_img));
    for (int k = 0; k < n_img; ++k) {
        const auto tok = heads::diffusion_sample(p, sched, z.row(0), rng);
        grid_tokens[static_cast<size_t>(perm.order[static_cast<size_t>(k)])] = tok;
        seq::Entry<T> e;
        e.modality = seq::Modality::Image;
        e.vec = tok;
        e.pos2d = perm.order[static_cast<size_t>(k)];
        e.target_pos2d = k + 1 < n_img ? perm.order[static_cast<size_t>(k) + 1] : n_img;
        z = model::forward_incremental(p, cache, {e}, model::AppendPolicy::Causal);
    }
    return grid_tokens;
}

// Full text-to-image sample: latent tokens -> unstandardize -> decode.
template <typename T>
codec::ToyImage generate_image(const ModelParams<T>& p, const heads::DiffusionSchedule& sched,
                               const codec::CodecConfig& ccfg, const train::LatentStats& stats,
                               const std::vector<int>& prompt_ids, const seq::Permutation& perm,
                               Rng& rng) {
    const auto tokens = generate_latent_tokens(p, sched, prompt_ids, perm, rng);
    std::vector<std::vector<double>> raw;
    raw.reserve(tokens.size());
    for (const auto& t : tokens) {
        std::vector<double> d(t.begin(), t.end());
        train::unstandardize(d, stats);
        raw.push_back(std::move(d));
    }
    return codec::decode_image(codec::unmerge_tokens(raw, ccfg), ccfg);
}

// Greedy answer decoding from an understanding prefix; stops at EOS or
// after max_new tokens. Returns answer token ids (EOS excluded).
template <typename T>
std::vector<int> greedy_decode_answer(const ModelParams<T>& p, const codec::EncoderFeatures& feats,
                                      const std::vector<int>& question_ids, int max_new = 16) {
    auto [stream, mask] = seq::build_understanding_sequence<T>(feats, question_ids, {});
    auto cache = model::KVCache<T>::make(p.cfg);
    Tensor<T> z = model::forward_incremental(p, cache, stream.entries, model::AppendPolicy::Prefix);

    std::vector<int> out;
    const T* last = z.row(z.dims[0] - 1);
    for (int k = 0; k < max_new && cache.fill < p.cfg.max_seq; ++k) {
        const int tok = heads::greedy_token(p, last);
        if (tok == codec::Vocab::EOS) break;
        out.push_back(tok);
        seq::Entry<T> e;
        e.modality = seq::Modality::Text;
        e.token_id = tok;
        z = model::forward_incremental(p, cache, {e}, model::AppendPolicy::Causal);
        last = z.row(0);
    }
    return out;
}

// Fraction of caption positions where the greedy token matches the
// reference under teacher forcing (predictions shifted by one).
template <typename T>
double teacher_forced_token_accuracy(const ModelParams<T>& p, const codec::EncoderFeatures& feats,
                                     const std::vector<int>& question_ids,
                                     const std::vector<int>& answer_ids) {
    auto [stream, mask] = seq::build_understanding_sequence<T>(feats, question_ids, answer_ids);
    model::Trace<T> tr;
    model::forward(p, stream, mask, tr);
    int correct = 0, total = 0;
    const int n = stream.size();
    for (int pos = 0; pos < n; ++pos) {
        if (!stream.entries[static_cast<size_t>(pos)].loss_flag) continue;
        const int pred = heads::greedy_token(p, tr.z.row(pos - 1));
        if (pred == stream.entries[static_cast<size_t>(pos)].token_id) ++correct;
        ++total;
    }
    return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

}  // namespace unifluid::infer
