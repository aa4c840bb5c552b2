#include <catch2/catch_amalgamated.hpp>

#include "unifluid/data.hpp"

using namespace unifluid;
using namespace unifluid::data;

TEST_CASE("scene index round-trips all 120 scenes", "[data]") {
    for (int i = 0; i < kNumScenes; ++i) REQUIRE(scene_index(scene_from_index(i)) == i);
}

TEST_CASE("large red square at top-left fills only the top-left quadrant", "[data]") {
    const SceneSpec spec{Shape::Square, Color::Red, Position::TopLeft, SizeClass::Large};
    const auto img = render(spec);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const bool red = img.at(y, x, 0) == 1.0 && img.at(y, x, 1) == 0.0 && img.at(y, x, 2) == 0.0;
            const bool inside = y <= 7 && x <= 7;
            REQUIRE(red == inside);
        }
}

TEST_CASE("render is idempotent and distinct specs render distinctly", "[data]") {
    std::vector<codec::ToyImage> renders;
    for (int i = 0; i < kNumScenes; ++i) {
        const auto spec = scene_from_index(i);
        const auto a = render(spec), b = render(spec);
        REQUIRE(a.px == b.px);  // bitwise
        renders.push_back(a);
    }
    // brute-force uniqueness sweep over all pairs
    for (int i = 0; i < kNumScenes; ++i)
        for (int j = i + 1; j < kNumScenes; ++j) REQUIRE(renders[static_cast<size_t>(i)].px != renders[static_cast<size_t>(j)].px);
}

TEST_CASE("caption and qa templates", "[data]") {
    const SceneSpec spec{Shape::Circle, Color::Blue, Position::Center, SizeClass::Small};
    REQUIRE(make_caption(spec) == "a small blue circle at center");
    const auto qa = make_qa(spec);
    REQUIRE(qa.size() == 4);
    REQUIRE(qa[0].first == "what color is the shape");
    REQUIRE(qa[0].second == "blue");
    REQUIRE(qa[1].second == "circle");
    REQUIRE(qa[2].second == "center");
    REQUIRE(qa[3].second == "small");
}

TEST_CASE("all captions and questions tokenize without UnknownWord", "[data]") {
    const auto vocab = codec::make_vocab();
    for (int i = 0; i < kNumScenes; ++i) {
        const auto spec = scene_from_index(i);
        REQUIRE_NOTHROW(codec::tokenize_text(make_caption(spec), vocab));
        for (const auto& [q, a] : make_qa(spec)) {
            REQUIRE_NOTHROW(codec::tokenize_text(q, vocab));
            REQUIRE_NOTHROW(codec::tokenize_text(a, vocab));
        }
    }
    REQUIRE_NOTHROW(codec::tokenize_text(caption_question(), vocab));
}

TEST_CASE("oracle recovers every clean scene exactly", "[data]") {
    for (int i = 0; i < kNumScenes; ++i) {
        const auto spec = scene_from_index(i);
        const auto res = extract_attributes(render(spec));
        REQUIRE(res.found);
        REQUIRE(res.spec == spec);
    }
}

TEST_CASE("corpus split sizes and determinism", "[data]") {
    CorpusConfig cfg;
    cfg.seed = 5;
    const auto c1 = build_corpus(cfg), c2 = build_corpus(cfg);
    REQUIRE(c1.heldout_specs.size() == 12);
    REQUIRE(c1.train_specs.size() == 108);
    REQUIRE(c1.train_idx.size() == 108 * 4);
    REQUIRE(c1.heldout_idx.size() == 12);
    // same seed, identical split and images
    REQUIRE(c1.examples.size() == c2.examples.size());
    for (size_t i = 0; i < c1.examples.size(); ++i) {
        REQUIRE(c1.examples[i].spec == c2.examples[i].spec);
        REQUIRE(c1.examples[i].image.px == c2.examples[i].image.px);
    }
    CorpusConfig other = cfg;
    other.seed = 6;
    const auto c3 = build_corpus(other);
    bool same_split = c1.heldout_specs.size() == c3.heldout_specs.size();
    for (size_t i = 0; same_split && i < c1.heldout_specs.size(); ++i)
        same_split = c1.heldout_specs[i] == c3.heldout_specs[i];
    REQUIRE_FALSE(same_split);
}

TEST_CASE("train noise is clamped and heldout is clean", "[data]") {
    CorpusConfig cfg;
    cfg.seed = 9;
    const auto corpus = build_corpus(cfg);
    for (int idx : corpus.heldout_idx) {
        const auto& ex = corpus.examples[static_cast<size_t>(idx)];
        REQUIRE(ex.image.px == render(ex.spec).px);
    }
    bool any_noise = false;
    for (int idx : corpus.train_idx) {
        const auto& ex = corpus.examples[static_cast<size_t>(idx)];
        for (double p : ex.image.px) {
            REQUIRE(p >= 0.0);
            REQUIRE(p <= 1.0);
        }
        any_noise = any_noise || ex.image.px != render(ex.spec).px;
    }
    REQUIRE(any_noise);
}

TEST_CASE("compositional holdout removes a whole color-shape pair from train", "[data]") {
    CorpusConfig cfg;
    cfg.seed = 17;
    cfg.compositional_holdout = true;
    const auto corpus = build_corpus(cfg);
    // find a (color, shape) pair present in heldout and absent from train
    bool found = false;
    for (int ci = 0; ci < kNumColors && !found; ++ci)
        for (int si = 0; si < kNumShapes && !found; ++si) {
            bool in_held = false, in_train = false;
            for (const auto& s : corpus.heldout_specs)
                if (static_cast<int>(s.color) == ci && static_cast<int>(s.shape) == si) in_held = true;
            for (const auto& s : corpus.train_specs)
                if (static_cast<int>(s.color) == ci && static_cast<int>(s.shape) == si) in_train = true;
            found = in_held && !in_train;
        }
    REQUIRE(found);
}

TEST_CASE("parse_prompt inverts make_caption and rejects garbage", "[data]") {
    for (int i = 0; i < kNumScenes; ++i) {
        const auto spec = scene_from_index(i);
        REQUIRE(parse_prompt(make_caption(spec)) == spec);
    }
    REQUIRE_THROWS_AS(parse_prompt("a big purple blob at nowhere"), Exception);
    REQUIRE_THROWS_AS(parse_prompt(""), Exception);
}

TEST_CASE("oracle survives the codec roundtrip on all scenes", "[data]") {
    // generated images pass through decode; the oracle must stay reliable
    // on decode(encode(render)) for evaluation to be meaningful
    codec::CodecConfig ccfg;
    ccfg.codec_seed = 1;
    int ok = 0;
    for (int i = 0; i < kNumScenes; ++i) {
        const auto spec = scene_from_index(i);
        const auto rt = codec::decode_image(codec::encode_image(render(spec), ccfg), ccfg);
        const auto res = extract_attributes(rt);
        if (res.found && res.spec == spec) ++ok;
    }
    REQUIRE(ok == kNumScenes);
}
