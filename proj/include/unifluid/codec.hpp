// Deterministic tokenizer stand-ins: a closed word-level text vocabulary,
// a lossy orthonormal linear visual codec, and a frozen patch encoder used
// as the understanding prefix. All maps are pure functions of (input, seed).
#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "unifluid/core.hpp"

namespace unifluid::codec {

// ----------------------------------------------------------------- vocab

struct Vocab {
    static constexpr int PAD = 0;
    static constexpr int BOS = 1;
    static constexpr int EOS = 2;
    static constexpr int BOI = 3;
    static constexpr int SEP = 4;

    std::vector<std::string> tokens;  // id -> word, specials first

    int size() const { return static_cast<int>(tokens.size()); }

    int id(const std::string& word) const {
        for (int i = 0; i < size(); ++i)
            if (tokens[static_cast<size_t>(i)] == word) return i;
        fail(Err::UnknownWord, word);
    }

    bool contains(const std::string& word) const {
        for (const auto& t : tokens)
            if (t == word) return true;
        return false;
    }

    const std::string& word(int id) const { return tokens[static_cast<size_t>(id)]; }
};

// Closed vocabulary covering the synthetic corpus: scene attribute words,
// caption/question templates, and reserved filler up to V entries.
inline Vocab make_vocab(int v_size = 64) {
    Vocab v;
    v.tokens = {"<pad>", "<bos>", "<eos>", "<boi>", "<sep>",
                "a", "at", "the", "is", "in", "what", "where", "how", "big",
                "shape", "color", "image", "describe",
                "small", "large",
                "red", "green", "blue", "yellow",
                "square", "circle", "triangle",
                "top-left", "top-right", "bottom-left", "bottom-right", "center"};
    require(v_size >= static_cast<int>(v.tokens.size()), Err::ConfigError,
            "vocab size too small for word list");
    while (v.size() < v_size) v.tokens.push_back("unused" + std::to_string(v.size()));
    return v;
}

inline std::vector<int> tokenize_text(const std::string& text, const Vocab& vocab) {
    std::vector<int> ids;
    std::istringstream ss(text);
    std::string word;
    while (ss >> word) ids.push_back(vocab.id(word));
    return ids;
}

inline std::string detokenize_text(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += vocab.word(ids[i]);
    }
    return out;
}

// ---------------------------------------------------------------- images

struct ToyImage {
    int h = 0, w = 0;
    std::vector<double> px;  // h*w*3, values in [0,1]

    ToyImage() = default;
    ToyImage(int h_, int w_) : h(h_), w(w_), px(static_cast<size_t>(h_) * w_ * 3, 0.0) {}

    double& at(int y, int x, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }

    void clamp01() {
        for (auto& p : px) p = std::min(1.0, std::max(0.0, p));
    }
};

struct LatentGrid {
    int h = 0, w = 0, c = 0;
    std::vector<double> g;  // h*w*c

    LatentGrid() = default;
    LatentGrid(int h_, int w_, int c_) : h(h_), w(w_), c(c_), g(static_cast<size_t>(h_) * w_ * c_, 0.0) {}

    double* cell(int y, int x) { return g.data() + (static_cast<size_t>(y) * w + x) * c; }
    const double* cell(int y, int x) const { return g.data() + (static_cast<size_t>(y) * w + x) * c; }
};

struct EncoderFeatures {
    int n = 0, dim = 0;
    std::vector<double> f;  // n * dim

    const double* vec(int i) const { return f.data() + static_cast<size_t>(i) * dim; }
    double* vec(int i) { return f.data() + static_cast<size_t>(i) * dim; }
};

struct CodecConfig {
    int img_h = 16, img_w = 16;
    int latent_c = 4;       // channels per 2x2 patch cell
    int merge_patch = 2;    // latent cells merged per token side
    int enc_patch = 4;      // pixel patch side for the understanding encoder
    int enc_dim = 128;      // understanding feature dim (= backbone d_model)
    uint64_t codec_seed = 0;
    uint64_t enc_seed = 0;

    int grid_h() const { return img_h / 2; }
    int grid_w() const { return img_w / 2; }
    int token_grid_h() const { return grid_h() / merge_patch; }
    int token_grid_w() const { return grid_w() / merge_patch; }
    int n_img() const { return token_grid_h() * token_grid_w(); }
    int token_dim() const { return latent_c * merge_patch * merge_patch; }
    int n_enc() const { return (img_h / enc_patch) * (img_w / enc_patch); }
};

// ------------------------------------------------- visual codec matrix E
// E: latent_c x 12, orthonormal rows. The first three rows average one RGB
// channel each over the 2x2 patch, so constant-color patches reconstruct
// exactly; remaining rows are seeded random directions orthonormalized
// against them.
inline std::vector<double> make_codec_matrix(uint64_t codec_seed, int latent_c) {
    const int n = 12;
    std::vector<std::vector<double>> rows;
    for (int ch = 0; ch < 3 && static_cast<int>(rows.size()) < latent_c; ++ch) {
        std::vector<double> r(n, 0.0);
        for (int p = 0; p < 4; ++p) r[static_cast<size_t>(p * 3 + ch)] = 0.5;
        rows.push_back(r);
    }
    Rng rng(derive_seed(codec_seed, 0xC0DEC));
    while (static_cast<int>(rows.size()) < latent_c) {
        std::vector<double> r(n);
        for (auto& x : r) x = rng.normal();
        for (const auto& prev : rows) {
            const double d = dot(r.data(), prev.data(), n);
            for (int i = 0; i < n; ++i) r[static_cast<size_t>(i)] -= d * prev[static_cast<size_t>(i)];
        }
        const double nrm = std::sqrt(dot(r.data(), r.data(), n));
        require(nrm > 1e-8, Err::NumericalFailure, "degenerate codec row");
        for (auto& x : r) x /= nrm;
        rows.push_back(r);
    }
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return flat;
}

inline LatentGrid encode_image(const ToyImage& img, const CodecConfig& cfg) {
    require(img.h % 2 == 0 && img.w % 2 == 0, Err::DimensionMismatch, "image sides must be even");
    require(img.h == cfg.img_h && img.w == cfg.img_w, Err::DimensionMismatch, "image size != codec config");
    const auto E = make_codec_matrix(cfg.codec_seed, cfg.latent_c);
    LatentGrid grid(cfg.grid_h(), cfg.grid_w(), cfg.latent_c);
    double patch[12];
    for (int gy = 0; gy < grid.h; ++gy)
        for (int gx = 0; gx < grid.w; ++gx) {
            int k = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    for (int c = 0; c < 3; ++c) patch[k++] = img.at(gy * 2 + dy, gx * 2 + dx, c);
            double* cell = grid.cell(gy, gx);
            for (int r = 0; r < cfg.latent_c; ++r) cell[r] = dot(E.data() + r * 12, patch, 12);
        }
    return grid;
}

inline ToyImage decode_image(const LatentGrid& grid, const CodecConfig& cfg) {
    require(grid.h == cfg.grid_h() && grid.w == cfg.grid_w() && grid.c == cfg.latent_c,
            Err::DimensionMismatch, "grid size != codec config");
    const auto E = make_codec_matrix(cfg.codec_seed, cfg.latent_c);
    ToyImage img(cfg.img_h, cfg.img_w);
    for (int gy = 0; gy < grid.h; ++gy)
        for (int gx = 0; gx < grid.w; ++gx) {
            const double* cell = grid.cell(gy, gx);
            double patch[12] = {0};
            for (int r = 0; r < cfg.latent_c; ++r)
                for (int i = 0; i < 12; ++i) patch[i] += E[static_cast<size_t>(r) * 12 + i] * cell[r];
            int k = 0;
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    for (int c = 0; c < 3; ++c) img.at(gy * 2 + dy, gx * 2 + dx, c) = patch[k++];
        }
    img.clamp01();
    return img;
}

// ------------------------------------------------------ token merge/split
// Flattens the latent grid into n_img tokens: each token concatenates a
// merge_patch x merge_patch block of grid cells in row-major cell order.

inline std::vector<std::vector<double>> merge_tokens(const LatentGrid& grid, const CodecConfig& cfg) {
    const int m = cfg.merge_patch;
    std::vector<std::vector<double>> tokens;
    tokens.reserve(static_cast<size_t>(cfg.n_img()));
    for (int ty = 0; ty < cfg.token_grid_h(); ++ty)
        for (int tx = 0; tx < cfg.token_grid_w(); ++tx) {
            std::vector<double> tok;
            tok.reserve(static_cast<size_t>(cfg.token_dim()));
            for (int dy = 0; dy < m; ++dy)
                for (int dx = 0; dx < m; ++dx) {
                    const double* cell = grid.cell(ty * m + dy, tx * m + dx);
                    tok.insert(tok.end(), cell, cell + grid.c);
                }
            tokens.push_back(std::move(tok));
        }
    return tokens;
}

inline LatentGrid unmerge_tokens(const std::vector<std::vector<double>>& tokens, const CodecConfig& cfg) {
    require(static_cast<int>(tokens.size()) == cfg.n_img(), Err::DimensionMismatch, "token count != n_img");
    const int m = cfg.merge_patch;
    LatentGrid grid(cfg.grid_h(), cfg.grid_w(), cfg.latent_c);
    for (int t = 0; t < cfg.n_img(); ++t) {
        const int ty = t / cfg.token_grid_w(), tx = t % cfg.token_grid_w();
        require(static_cast<int>(tokens[static_cast<size_t>(t)].size()) == cfg.token_dim(),
                Err::DimensionMismatch, "token dim mismatch");
        int k = 0;
        for (int dy = 0; dy < m; ++dy)
            for (int dx = 0; dx < m; ++dx) {
                double* cell = grid.cell(ty * m + dy, tx * m + dx);
                for (int c = 0; c < grid.c; ++c) cell[c] = tokens[static_cast<size_t>(t)][static_cast<size_t>(k++)];
            }
    }
    return grid;
}

// ----------------------------------------------- understanding encoder
// Frozen random projection of non-overlapping enc_patch x enc_patch pixel
// patches. Never receives gradient; not part of the parameter store.

inline std::vector<double> make_enc_matrix(uint64_t enc_seed, int out_dim, int in_dim) {
    Rng rng(derive_seed(enc_seed, 0xE2C));
    std::vector<double> w(static_cast<size_t>(out_dim) * in_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& x : w) x = rng.normal() * scale;
    return w;
}

inline EncoderFeatures encode_for_understanding(const ToyImage& img, const CodecConfig& cfg) {
    require(img.h % cfg.enc_patch == 0 && img.w % cfg.enc_patch == 0, Err::DimensionMismatch,
            "image sides must divide enc_patch");
    require(img.h == cfg.img_h && img.w == cfg.img_w, Err::DimensionMismatch, "image size != codec config");
    const int p = cfg.enc_patch;
    const int in_dim = p * p * 3;
    const auto W = make_enc_matrix(cfg.enc_seed, cfg.enc_dim, in_dim);
    EncoderFeatures out;
    out.n = cfg.n_enc();
    out.dim = cfg.enc_dim;
    out.f.assign(static_cast<size_t>(out.n) * out.dim, 0.0);
    std::vector<double> patch(static_cast<size_t>(in_dim));
    const int py = img.h / p, pxn = img.w / p;
    for (int gy = 0; gy < py; ++gy)
        for (int gx = 0; gx < pxn; ++gx) {
            int k = 0;
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int c = 0; c < 3; ++c) patch[static_cast<size_t>(k++)] = img.at(gy * p + dy, gx * p + dx, c);
            double* f = out.vec(gy * pxn + gx);
            for (int o = 0; o < out.dim; ++o) f[o] = dot(W.data() + static_cast<size_t>(o) * in_dim, patch.data(), in_dim);
        }
    return out;
}

// Per-image feature map for the evaluation metrics: project each encoder
// patch to d_feat dims with a frozen map derived from enc_seed, then mean
// pool over patches.
inline std::vector<double> eval_features(const ToyImage& img, const CodecConfig& cfg, int d_feat) {
    const int p = cfg.enc_patch;
    const int in_dim = p * p * 3;
    const auto W = make_enc_matrix(derive_seed(cfg.enc_seed, 0xFEA7), d_feat, in_dim);
    std::vector<double> feat(static_cast<size_t>(d_feat), 0.0);
    std::vector<double> patch(static_cast<size_t>(in_dim));
    const int py = img.h / p, pxn = img.w / p;
    for (int gy = 0; gy < py; ++gy)
        for (int gx = 0; gx < pxn; ++gx) {
            int k = 0;
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int c = 0; c < 3; ++c) patch[static_cast<size_t>(k++)] = img.at(gy * p + dy, gx * p + dx, c);
            for (int o = 0; o < d_feat; ++o)
                feat[static_cast<size_t>(o)] += dot(W.data() + static_cast<size_t>(o) * in_dim, patch.data(), in_dim);
        }
    const double inv = 1.0 / (py * pxn);
    for (auto& x : feat) x *= inv;
    return feat;
}

inline double psnr(const ToyImage& a, const ToyImage& b) {
    require(a.h == b.h && a.w == b.w, Err::DimensionMismatch, "psnr size mismatch");
    double mse = 0.0;
    for (size_t i = 0; i < a.px.size(); ++i) {
        const double d = a.px[i] - b.px[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.px.size());
    if (mse <= 0.0) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace unifluid::codec
