#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "unifluid/eval.hpp"

using namespace unifluid;
using namespace unifluid::eval;
using testutil::make_tiny_world;
using testutil::tiny_config;

namespace {
using testutil::frechet_oracle;
using testutil::random_moments;
}  // namespace

TEST_CASE("frechet distance of identical moments is ~0", "[eval]") {
    Rng rng(1);
    const auto m = random_moments(6, rng);
    REQUIRE(std::abs(frechet_distance(m, m)) < 1e-8);
}

TEST_CASE("frechet with identity covariances reduces to squared mean distance", "[eval]") {
    FeatureMoments a, b;
    a.dim = b.dim = 3;
    a.mu = {1.0, 2.0, 3.0};
    b.mu = {0.0, 2.0, 5.0};
    a.sigma = b.sigma = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    REQUIRE(frechet_distance(a, b) == Catch::Approx(1.0 + 0.0 + 4.0).margin(1e-9));
}

TEST_CASE("frechet matches the independent Denman-Beavers oracle", "[eval]") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int dim = trial % 2 == 0 ? 4 : 8;
        const auto m1 = random_moments(dim, rng);
        const auto m2 = random_moments(dim, rng);
        const double got = frechet_distance(m1, m2);
        const double expect = frechet_oracle(m1, m2);
        REQUIRE(got == Catch::Approx(expect).margin(1e-6));
    }
}

TEST_CASE("frechet is symmetric", "[eval]") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const auto m1 = random_moments(5, rng);
        const auto m2 = random_moments(5, rng);
        REQUIRE(std::abs(frechet_distance(m1, m2) - frechet_distance(m2, m1)) < 1e-8);
    }
}

TEST_CASE("moments of few samples get a ridge", "[eval]") {
    Rng rng(11);
    std::vector<std::vector<double>> feats;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> f(8);
        for (auto& x : f) x = rng.normal();
        feats.push_back(f);
    }
    const auto m = compute_moments(feats);  // 4 < dim+1 = 9
    // rank <= 3 sample covariance + ridge keeps frechet finite and sane
    const auto d = frechet_distance(m, m);
    REQUIRE(std::abs(d) < 1e-8);
}

TEST_CASE("toy_fid: identical sets give ~0, degenerate sets blow past the floor", "[eval]") {
    codec::CodecConfig ccfg;
    ccfg.codec_seed = 1;
    ccfg.enc_seed = 2;
    std::vector<codec::ToyImage> refs;
    for (int i = 0; i < data::kNumScenes; ++i) refs.push_back(data::render(data::scene_from_index(i)));

    REQUIRE(std::abs(toy_fid(refs, refs, ccfg, 16)) < 1e-6);

    const double floor = toy_fid_noise_floor(refs, ccfg, 16, 5, 16);
    REQUIRE(floor > 0.0);

    // two random disjoint same-distribution halves stay near the floor
    Rng rng(777);
    std::vector<int> idx(refs.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    for (size_t i = idx.size() - 1; i > 0; --i) std::swap(idx[i], idx[rng.below(i + 1)]);
    std::vector<codec::ToyImage> half_a, half_b;
    for (size_t i = 0; i < idx.size(); ++i)
        (i < idx.size() / 2 ? half_a : half_b).push_back(refs[static_cast<size_t>(idx[i])]);
    REQUIRE(toy_fid(half_a, half_b, ccfg, 16) < floor * 4.0);

    // all-black generated set
    std::vector<codec::ToyImage> black(100, codec::ToyImage(16, 16));
    REQUIRE(toy_fid(black, refs, ccfg, 16) > 10.0 * floor);
}

TEST_CASE("noise floor is reproducible within +-10% across seeds", "[eval]") {
    codec::CodecConfig ccfg;
    ccfg.codec_seed = 1;
    ccfg.enc_seed = 2;
    std::vector<codec::ToyImage> refs;
    for (int i = 0; i < data::kNumScenes; ++i) refs.push_back(data::render(data::scene_from_index(i)));
    const double f1 = toy_fid_noise_floor(refs, ccfg, 16, 100, 32);
    const double f2 = toy_fid_noise_floor(refs, ccfg, 16, 200, 32);
    REQUIRE(std::abs(f1 - f2) / std::max(f1, f2) < 0.10);
}

TEST_CASE("attr_match scores exact renders at 1.0 and flipped colors at 0", "[eval]") {
    std::vector<data::SceneSpec> prompts;
    std::vector<codec::ToyImage> images;
    for (int i = 0; i < 24; ++i) {
        const auto spec = data::scene_from_index(i * 5);
        prompts.push_back(spec);
        images.push_back(data::render(spec));
    }
    const auto acc = attr_match(prompts, images);
    REQUIRE(acc.color == 1.0);
    REQUIRE(acc.shape == 1.0);
    REQUIRE(acc.position == 1.0);
    REQUIRE(acc.size == 1.0);
    REQUIRE(acc.all == 1.0);

    // flip prompt color only
    auto flipped = prompts;
    for (auto& s : flipped)
        s.color = static_cast<data::Color>((static_cast<int>(s.color) + 1) % data::kNumColors);
    const auto acc2 = attr_match(flipped, images);
    REQUIRE(acc2.color == 0.0);
    REQUIRE(acc2.shape == 1.0);
    REQUIRE(acc2.position == 1.0);
    REQUIRE(acc2.size == 1.0);
    REQUIRE(acc2.all == 0.0);
}

TEST_CASE("uniform-noise images score near chance on all-correct", "[eval]") {
    Rng rng(13);
    std::vector<data::SceneSpec> prompts;
    std::vector<codec::ToyImage> images;
    for (int i = 0; i < 200; ++i) {
        prompts.push_back(data::scene_from_index(static_cast<int>(rng.below(data::kNumScenes))));
        codec::ToyImage img(16, 16);
        for (auto& p : img.px) p = rng.uniform();
        images.push_back(img);
    }
    REQUIRE(attr_match(prompts, images).all < 0.05);
}

TEST_CASE("qa harness scores an oracle-stuffed decoder at 1.0", "[eval]") {
    const auto cfg = tiny_config(33);
    auto w = make_tiny_world<double>(cfg);
    const double acc = qa_exact_match(w.ctx, w.corpus.heldout_idx, [&](int idx, const std::string& q) {
        const auto& spec = w.corpus.examples[static_cast<size_t>(idx)].spec;
        for (const auto& [qq, aa] : data::make_qa(spec))
            if (qq == q) return aa;
        return std::string();
    });
    REQUIRE(acc == 1.0);
}

TEST_CASE("untrained model answers near or below chance", "[eval]") {
    const auto cfg = tiny_config(35);
    auto w = make_tiny_world<double>(cfg);
    // color questions are 4-way; chance is ~0.25
    int correct = 0, total = 0;
    for (int idx : w.corpus.heldout_idx) {
        const auto& ex = w.corpus.examples[static_cast<size_t>(idx)];
        const auto decoded = infer::greedy_decode_answer(
            w.params, w.ctx.features[static_cast<size_t>(idx)],
            codec::tokenize_text("what color is the shape", w.ctx.vocab));
        if (codec::detokenize_text(decoded, w.ctx.vocab) == data::color_word(ex.spec.color)) ++correct;
        ++total;
    }
    REQUIRE(correct / static_cast<double>(total) <= 0.3);
}

TEST_CASE("teacher-forced accuracy dominates free-running exact match", "[eval]") {
    const auto cfg = tiny_config(37);
    auto w = make_tiny_world<double>(cfg);
    double tf = 0.0;
    int exact = 0, total = 0;
    for (int idx : w.corpus.heldout_idx) {
        const auto& ex = w.corpus.examples[static_cast<size_t>(idx)];
        const auto& feats = w.ctx.features[static_cast<size_t>(idx)];
        const auto q = codec::tokenize_text(data::caption_question(), w.ctx.vocab);
        const auto ref = codec::tokenize_text(data::make_caption(ex.spec), w.ctx.vocab);
        tf += infer::teacher_forced_token_accuracy(w.params, feats, q, ref);
        exact += infer::greedy_decode_answer(w.params, feats, q) == ref;
        ++total;
    }
    REQUIRE(tf / total >= exact / static_cast<double>(total));
}
