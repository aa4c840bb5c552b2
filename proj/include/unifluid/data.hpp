// Procedural scene corpus: 120 symbolic scenes rendered to 16x16 images,
// template captions and QA pairs, train/heldout splits, and the analytic
// attribute oracle used to score generated images.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "unifluid/codec.hpp"
#include "unifluid/core.hpp"

namespace unifluid::data {

enum class Shape { Square, Circle, Triangle };
enum class Color { Red, Green, Blue, Yellow };
enum class Position { TopLeft, TopRight, BottomLeft, BottomRight, Center };
enum class SizeClass { Small, Large };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 4;
inline constexpr int kNumPositions = 5;
inline constexpr int kNumSizes = 2;
inline constexpr int kNumScenes = kNumShapes * kNumColors * kNumPositions * kNumSizes;  // 120

inline const char* shape_word(Shape s) {
    switch (s) {
        case Shape::Square: return "square";
        case Shape::Circle: return "circle";
        case Shape::Triangle: return "triangle";
    }
    return "";
}
inline const char* color_word(Color c) {
    switch (c) {
        case Color::Red: return "red";
        case Color::Green: return "green";
        case Color::Blue: return "blue";
        case Color::Yellow: return "yellow";
    }
    return "";
}
inline const char* position_word(Position p) {
    switch (p) {
        case Position::TopLeft: return "top-left";
        case Position::TopRight: return "top-right";
        case Position::BottomLeft: return "bottom-left";
        case Position::BottomRight: return "bottom-right";
        case Position::Center: return "center";
    }
    return "";
}
inline const char* size_word(SizeClass s) { return s == SizeClass::Small ? "small" : "large"; }

struct SceneSpec {
    Shape shape = Shape::Square;
    Color color = Color::Red;
    Position position = Position::Center;
    SizeClass size = SizeClass::Small;

    bool operator==(const SceneSpec&) const = default;
};

inline SceneSpec scene_from_index(int idx) {
    SceneSpec s;
    s.shape = static_cast<Shape>(idx % kNumShapes);
    idx /= kNumShapes;
    s.color = static_cast<Color>(idx % kNumColors);
    idx /= kNumColors;
    s.position = static_cast<Position>(idx % kNumPositions);
    idx /= kNumPositions;
    s.size = static_cast<SizeClass>(idx % kNumSizes);
    return s;
}

inline int scene_index(const SceneSpec& s) {
    return static_cast<int>(s.shape) + kNumShapes * (static_cast<int>(s.color) +
           kNumColors * (static_cast<int>(s.position) + kNumPositions * static_cast<int>(s.size)));
}

inline std::array<double, 3> color_rgb(Color c) {
    switch (c) {
        case Color::Red: return {1, 0, 0};
        case Color::Green: return {0, 1, 0};
        case Color::Blue: return {0, 0, 1};
        case Color::Yellow: return {1, 1, 0};
    }
    return {0, 0, 0};
}

// ---------------------------------------------------------------- render

inline int shape_side(SizeClass s) { return s == SizeClass::Small ? 6 : 8; }

inline std::pair<int, int> box_origin(Position p, int side, int canvas) {
    const int lo = 0, hi = canvas - side, mid = (canvas - side) / 2;
    switch (p) {
        case Position::TopLeft: return {lo, lo};
        case Position::TopRight: return {lo, hi};
        case Position::BottomLeft: return {hi, lo};
        case Position::BottomRight: return {hi, hi};
        case Position::Center: return {mid, mid};
    }
    return {mid, mid};
}

inline bool shape_covers(Shape shape, int side, int dy, int dx) {
    switch (shape) {
        case Shape::Square:
            return true;
        case Shape::Circle: {
            const double cy = (side - 1) * 0.5, cx = (side - 1) * 0.5, r = side * 0.5;
            const double ddy = dy - cy, ddx = dx - cx;
            return ddy * ddy + ddx * ddx <= r * r;
        }
        case Shape::Triangle: {
            const double halfw = (dy + 1) * 0.5;
            return std::abs(dx - (side - 1) * 0.5) <= halfw;
        }
    }
    return false;
}

inline codec::ToyImage render(const SceneSpec& spec, int canvas = 16) {
    codec::ToyImage img(canvas, canvas);
    for (auto& p : img.px) p = 1.0;  // white background
    const int side = shape_side(spec.size);
    const auto [oy, ox] = box_origin(spec.position, side, canvas);
    const auto rgb = color_rgb(spec.color);
    for (int dy = 0; dy < side; ++dy)
        for (int dx = 0; dx < side; ++dx)
            if (shape_covers(spec.shape, side, dy, dx))
                for (int c = 0; c < 3; ++c) img.at(oy + dy, ox + dx, c) = rgb[static_cast<size_t>(c)];
    return img;
}

// ------------------------------------------------------------- templates

inline std::string make_caption(const SceneSpec& s) {
    return std::string("a ") + size_word(s.size) + " " + color_word(s.color) + " " +
           shape_word(s.shape) + " at " + position_word(s.position);
}

inline std::vector<std::pair<std::string, std::string>> make_qa(const SceneSpec& s) {
    return {
        {"what color is the shape", color_word(s.color)},
        {"what shape is in the image", shape_word(s.shape)},
        {"where is the shape", position_word(s.position)},
        {"how big is the shape", size_word(s.size)},
    };
}

inline const char* caption_question() { return "describe the image"; }

// ---------------------------------------------------------------- oracle
// Analytic attribute extraction: dominant non-white color, bbox-center
// position, soft pixel-count size, shape via template matching against
// the rendered prototypes. Exact on clean renders. Generated images reach
// the oracle through the lossy codec, whose 2x2 patch blur preserves
// per-patch channel means exactly; size uses a fractional pixel count and
// templates are compared at 2x2-mean resolution so the oracle stays
// reliable on decoded images.

struct OracleResult {
    bool found = false;
    SceneSpec spec;
};

namespace detail {

// 2x2 patch means, (canvas/2)^2 x 3
inline std::vector<double> downsample2(const codec::ToyImage& img) {
    const int half = img.h / 2;
    std::vector<double> out(static_cast<size_t>(half) * half * 3, 0.0);
    for (int y = 0; y < half; ++y)
        for (int x = 0; x < half; ++x)
            for (int c = 0; c < 3; ++c)
                out[(static_cast<size_t>(y) * half + x) * 3 + c] =
                    0.25 * (img.at(2 * y, 2 * x, c) + img.at(2 * y, 2 * x + 1, c) +
                            img.at(2 * y + 1, 2 * x, c) + img.at(2 * y + 1, 2 * x + 1, c));
    return out;
}

}  // namespace detail

inline OracleResult extract_attributes(const codec::ToyImage& img) {
    OracleResult res;
    const int canvas = img.h;
    int min_y = canvas, max_y = -1, min_x = canvas, max_x = -1;
    double sum[3] = {0, 0, 0};
    int count = 0;
    for (int y = 0; y < canvas; ++y)
        for (int x = 0; x < canvas; ++x) {
            const double dr = 1.0 - img.at(y, x, 0), dg = 1.0 - img.at(y, x, 1), db = 1.0 - img.at(y, x, 2);
            if (dr * dr + dg * dg + db * db > 0.25) {
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                for (int c = 0; c < 3; ++c) sum[c] += img.at(y, x, c);
                ++count;
            }
        }
    if (count < 4) return res;

    // color: mean over colored pixels, nearest prototype
    double mean[3] = {sum[0] / count, sum[1] / count, sum[2] / count};
    double best_d = 1e30;
    Color best_c = Color::Red;
    for (int ci = 0; ci < kNumColors; ++ci) {
        const auto rgb = color_rgb(static_cast<Color>(ci));
        double d = 0;
        for (int c = 0; c < 3; ++c) d += (mean[c] - rgb[static_cast<size_t>(c)]) * (mean[c] - rgb[static_cast<size_t>(c)]);
        if (d < best_d) {
            best_d = d;
            best_c = static_cast<Color>(ci);
        }
    }

    // size: fractional colored area against the midpoint of the clean
    // small/large area ranges (36 vs 40 at defaults)
    const auto rgb_c = color_rgb(best_c);
    double cd = 0;
    for (int c = 0; c < 3; ++c) cd += (1.0 - rgb_c[static_cast<size_t>(c)]) * (1.0 - rgb_c[static_cast<size_t>(c)]);
    const double color_dist = std::sqrt(cd);
    double area = 0.0;
    for (int y = 0; y < canvas; ++y)
        for (int x = 0; x < canvas; ++x) {
            const double dr = 1.0 - img.at(y, x, 0), dg = 1.0 - img.at(y, x, 1), db = 1.0 - img.at(y, x, 2);
            area += std::min(std::sqrt(dr * dr + dg * dg + db * db) / color_dist, 1.0);
        }
    const SizeClass size = area >= 38.0 ? SizeClass::Large : SizeClass::Small;

    // position: bbox center nearest anchor, over both size hypotheses
    const double cy = 0.5 * (min_y + max_y), cx = 0.5 * (min_x + max_x);
    double best_pd = 1e30;
    Position best_p = Position::Center;
    for (int pi = 0; pi < kNumPositions; ++pi)
        for (int zi = 0; zi < kNumSizes; ++zi) {
            const int side = shape_side(static_cast<SizeClass>(zi));
            const auto [oy, ox] = box_origin(static_cast<Position>(pi), side, canvas);
            const double ay = oy + (side - 1) * 0.5, ax = ox + (side - 1) * 0.5;
            const double d = (cy - ay) * (cy - ay) + (cx - ax) * (cx - ax);
            if (d < best_pd) {
                best_pd = d;
                best_p = static_cast<Position>(pi);
            }
        }

    // shape: template match against the rendered prototypes at 2x2-mean
    // resolution
    const auto query = detail::downsample2(img);
    double best_sd = 1e30;
    Shape best_s = Shape::Square;
    for (int si = 0; si < kNumShapes; ++si) {
        SceneSpec cand{static_cast<Shape>(si), best_c, best_p, size};
        const auto proto = detail::downsample2(render(cand, canvas));
        double d = 0;
        for (size_t i = 0; i < query.size(); ++i) d += (query[i] - proto[i]) * (query[i] - proto[i]);
        if (d < best_sd) {
            best_sd = d;
            best_s = static_cast<Shape>(si);
        }
    }

    res.found = true;
    res.spec = SceneSpec{best_s, best_c, best_p, size};
    return res;
}

// ---------------------------------------------------------------- corpus

enum class Split { Train, Heldout };

struct Example {
    SceneSpec spec;
    codec::ToyImage image;  // noisy for train copies, clean for heldout
    Split split = Split::Train;
};

struct Corpus {
    std::vector<Example> examples;
    std::vector<int> train_idx;
    std::vector<int> heldout_idx;
    std::vector<SceneSpec> train_specs;    // distinct
    std::vector<SceneSpec> heldout_specs;  // distinct
};

struct CorpusConfig {
    uint64_t seed = 0;
    double holdout_frac = 0.1;
    int oversample = 4;        // noisy train copies per spec
    double noise_sigma = 0.02;
    bool compositional_holdout = false;
    int canvas = 16;
};

// All 120 scenes enumerated; holdout chosen by seeded draw (or, with the
// compositional flag, one whole color-shape pair plus seeded extras).
inline Corpus build_corpus(const CorpusConfig& cfg) {
    Corpus corpus;
    const int n_holdout = static_cast<int>(std::lround(cfg.holdout_frac * kNumScenes));
    std::vector<bool> held(kNumScenes, false);
    Rng rng(derive_seed(cfg.seed, 0xDA7A));
    if (cfg.compositional_holdout) {
        const int color = static_cast<int>(rng.below(kNumColors));
        const int shape = static_cast<int>(rng.below(kNumShapes));
        int marked = 0;
        for (int i = 0; i < kNumScenes; ++i) {
            const SceneSpec s = scene_from_index(i);
            if (static_cast<int>(s.color) == color && static_cast<int>(s.shape) == shape) {
                held[static_cast<size_t>(i)] = true;
                ++marked;
            }
        }
        while (marked < n_holdout) {
            const int i = static_cast<int>(rng.below(kNumScenes));
            if (!held[static_cast<size_t>(i)]) {
                held[static_cast<size_t>(i)] = true;
                ++marked;
            }
        }
    } else {
        int marked = 0;
        while (marked < n_holdout) {
            const int i = static_cast<int>(rng.below(kNumScenes));
            if (!held[static_cast<size_t>(i)]) {
                held[static_cast<size_t>(i)] = true;
                ++marked;
            }
        }
    }

    for (int i = 0; i < kNumScenes; ++i) {
        const SceneSpec spec = scene_from_index(i);
        if (held[static_cast<size_t>(i)]) {
            Example ex;
            ex.spec = spec;
            ex.image = render(spec, cfg.canvas);
            ex.split = Split::Heldout;
            corpus.heldout_idx.push_back(static_cast<int>(corpus.examples.size()));
            corpus.examples.push_back(std::move(ex));
            corpus.heldout_specs.push_back(spec);
        } else {
            corpus.train_specs.push_back(spec);
            for (int copy = 0; copy < cfg.oversample; ++copy) {
                Example ex;
                ex.spec = spec;
                ex.image = render(spec, cfg.canvas);
                if (cfg.noise_sigma > 0.0) {
                    Rng noise(derive_seed(cfg.seed, 0x4015E, static_cast<uint64_t>(i) * 10007u + static_cast<uint64_t>(copy)));
                    for (auto& p : ex.image.px) p += cfg.noise_sigma * noise.normal();
                    ex.image.clamp01();
                }
                ex.split = Split::Train;
                corpus.train_idx.push_back(static_cast<int>(corpus.examples.size()));
                corpus.examples.push_back(std::move(ex));
            }
        }
    }
    return corpus;
}

// Caption string -> SceneSpec, inverse of make_caption.
inline SceneSpec parse_prompt(const std::string& prompt) {
    std::istringstream ss(prompt);
    std::vector<std::string> w;
    std::string tok;
    while (ss >> tok) w.push_back(tok);
    if (w.size() != 6 || w[0] != "a" || w[4] != "at") fail(Err::UnparseablePrompt, prompt);
    SceneSpec s;
    bool ok_size = false, ok_color = false, ok_shape = false, ok_pos = false;
    for (int i = 0; i < kNumSizes; ++i)
        if (w[1] == size_word(static_cast<SizeClass>(i))) {
            s.size = static_cast<SizeClass>(i);
            ok_size = true;
        }
    for (int i = 0; i < kNumColors; ++i)
        if (w[2] == color_word(static_cast<Color>(i))) {
            s.color = static_cast<Color>(i);
            ok_color = true;
        }
    for (int i = 0; i < kNumShapes; ++i)
        if (w[3] == shape_word(static_cast<Shape>(i))) {
            s.shape = static_cast<Shape>(i);
            ok_shape = true;
        }
    for (int i = 0; i < kNumPositions; ++i)
        if (w[5] == position_word(static_cast<Position>(i))) {
            s.position = static_cast<Position>(i);
            ok_pos = true;
        }
    if (!(ok_size && ok_color && ok_shape && ok_pos)) fail(Err::UnparseablePrompt, prompt);
    return s;
}

}  // namespace unifluid::data
