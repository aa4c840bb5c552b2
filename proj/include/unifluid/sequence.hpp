// Packed multimodal sequences: entry metadata, prefix-LM attention masks,
// and image-token permutations for both task layouts.
#pragma once

#include <vector>

#include "unifluid/codec.hpp"
#include "unifluid/core.hpp"

namespace unifluid::seq {

enum class Modality { Text, Image, Boi, EncFeat };
enum class Task { Gen, Und };

// Flattened token-grid cell index; kSentinel-style sentinel is grid size
// (one past the last cell) and only valid as a target.
template <typename T>
struct Entry {
    Modality modality = Modality::Text;
    int token_id = -1;          // Text / Boi
    std::vector<T> vec;         // Image (token_dim) / EncFeat (d_model)
    int pos2d = -1;             // Image only
    int target_pos2d = -1;      // Image and Boi in Gen
    bool loss_flag = false;
    Task task = Task::Gen;
};

template <typename T>
struct TokenStream {
    std::vector<Entry<T>> entries;
    int size() const { return static_cast<int>(entries.size()); }
};

struct AttentionMask {
    int n = 0;
    std::vector<uint8_t> allow;  // n*n, allow[i*n+j]: i may attend to j

    explicit AttentionMask(int n_ = 0) : n(n_), allow(static_cast<size_t>(n_) * n_, 0) {}
    bool at(int i, int j) const { return allow[static_cast<size_t>(i) * n + j] != 0; }
    void set(int i, int j, bool v) { allow[static_cast<size_t>(i) * n + j] = v ? 1 : 0; }
};

struct Permutation {
    std::vector<int> order;  // order[k] = grid cell generated at step k

    int size() const { return static_cast<int>(order.size()); }
    bool valid() const {
        std::vector<bool> seen(order.size(), false);
        for (int x : order) {
            if (x < 0 || x >= static_cast<int>(order.size()) || seen[static_cast<size_t>(x)]) return false;
            seen[static_cast<size_t>(x)] = true;
        }
        return true;
    }
    static Permutation identity(int n) {
        Permutation p;
        p.order.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) p.order[static_cast<size_t>(i)] = i;
        return p;
    }
};

enum class OrderMode { Raster, Random };

inline Permutation sample_permutation(OrderMode mode, int n_img, Rng& rng) {
    require(n_img >= 1, Err::LengthMismatch, "n_img must be >= 1");
    Permutation p = Permutation::identity(n_img);
    if (mode == OrderMode::Random) {
        for (int i = n_img - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
            std::swap(p.order[static_cast<size_t>(i)], p.order[static_cast<size_t>(j)]);
        }
    }
    return p;
}

// --------------------------------------------------------- gen sequences
// Layout: [BOS, prompt..., BOI, image tokens in permutation order].
// BOS+prompt attend within their block; BOI and image tokens are causal.
// Entry k carries pos2d = perm(k) and target_pos2d = perm(k+1); the last
// target is the sentinel cell n_img. BOI targets perm(0).

template <typename T>
std::pair<TokenStream<T>, AttentionMask> build_generation_sequence(
    const std::vector<int>& prompt_ids, const std::vector<std::vector<T>>& latent_tokens,
    const Permutation& perm) {
    const int n_img = static_cast<int>(latent_tokens.size());
    require(perm.size() == n_img, Err::LengthMismatch, "permutation size != latent token count");
    require(perm.valid(), Err::InvalidPermutation, "not a bijection");

    TokenStream<T> stream;
    const int prefix = 1 + static_cast<int>(prompt_ids.size());
    const int n = prefix + 1 + n_img;
    stream.entries.reserve(static_cast<size_t>(n));

    Entry<T> bos;
    bos.modality = Modality::Text;
    bos.token_id = codec::Vocab::BOS;
    bos.task = Task::Gen;
    stream.entries.push_back(bos);
    for (int id : prompt_ids) {
        Entry<T> e;
        e.modality = Modality::Text;
        e.token_id = id;
        e.task = Task::Gen;
        stream.entries.push_back(e);
    }
    Entry<T> boi;
    boi.modality = Modality::Boi;
    boi.token_id = codec::Vocab::BOI;
    boi.target_pos2d = perm.order[0];
    boi.task = Task::Gen;
    stream.entries.push_back(boi);
    for (int k = 0; k < n_img; ++k) {
        Entry<T> e;
        e.modality = Modality::Image;
        e.vec = latent_tokens[static_cast<size_t>(perm.order[static_cast<size_t>(k)])];
        e.pos2d = perm.order[static_cast<size_t>(k)];
        e.target_pos2d = k + 1 < n_img ? perm.order[static_cast<size_t>(k) + 1] : n_img;
        e.loss_flag = true;
        e.task = Task::Gen;
        stream.entries.push_back(e);
    }

    AttentionMask mask(n);
    for (int i = 0; i < prefix; ++i)
        for (int j = 0; j < prefix; ++j) mask.set(i, j, true);
    for (int i = prefix; i < n; ++i)
        for (int j = 0; j <= i; ++j) mask.set(i, j, true);
    return {std::move(stream), std::move(mask)};
}

// --------------------------------------------------------- und sequences
// Layout: [features..., BOS, question..., SEP, answer..., EOS]. The prefix
// through SEP is bidirectional; answer tokens and EOS are causal and carry
// the loss flags. Empty answer builds the inference prefix.

template <typename T>
std::pair<TokenStream<T>, AttentionMask> build_understanding_sequence(
    const codec::EncoderFeatures& feats, const std::vector<int>& question_ids,
    const std::vector<int>& answer_ids) {
    require(!question_ids.empty(), Err::EmptyQuestion, "question is empty");

    TokenStream<T> stream;
    const int prefix = feats.n + 1 + static_cast<int>(question_ids.size()) + 1;
    const int n = prefix + (answer_ids.empty() ? 0 : static_cast<int>(answer_ids.size()) + 1);
    stream.entries.reserve(static_cast<size_t>(n));

    for (int i = 0; i < feats.n; ++i) {
        Entry<T> e;
        e.modality = Modality::EncFeat;
        e.vec.assign(feats.vec(i), feats.vec(i) + feats.dim);
        e.task = Task::Und;
        stream.entries.push_back(e);
    }
    auto push_text = [&](int id, bool flag) {
        Entry<T> e;
        e.modality = Modality::Text;
        e.token_id = id;
        e.loss_flag = flag;
        e.task = Task::Und;
        stream.entries.push_back(e);
    };
    push_text(codec::Vocab::BOS, false);
    for (int id : question_ids) push_text(id, false);
    push_text(codec::Vocab::SEP, false);
    for (int id : answer_ids) push_text(id, true);
    if (!answer_ids.empty()) push_text(codec::Vocab::EOS, true);

    AttentionMask mask(n);
    for (int i = 0; i < prefix; ++i)
        for (int j = 0; j < prefix; ++j) mask.set(i, j, true);
    for (int i = prefix; i < n; ++i)
        for (int j = 0; j <= i; ++j) mask.set(i, j, true);
    return {std::move(stream), std::move(mask)};
}

}  // namespace unifluid::seq
