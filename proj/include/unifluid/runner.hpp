// Run orchestration: full training sessions with metrics logs and
// checkpoints, evaluation reports, and the lambda-sweep / order-comparison
// experiment harnesses.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unifluid/eval.hpp"
#include "unifluid/io.hpp"

namespace unifluid::runner {

using model::ModelParams;

// ------------------------------------------------------------- sessions

template <typename T>
struct Session {
    io::RunConfig cfg;
    data::Corpus corpus;
    train::TrainContext<T> ctx;
    heads::DiffusionSchedule sched;
    ModelParams<T> params;
    train::AdamState<T> opt;
    std::string metrics_log;
    std::string run_dir;
};

// Builds corpus + context + fresh model from a run config. corpus_limit
// restricts training to the first N train examples (overfit mode).
template <typename T>
Session<T> make_session(const io::RunConfig& cfg) {
    Session<T> s;
    s.cfg = cfg;
    s.corpus = data::build_corpus(cfg.corpus_config());
    if (cfg.corpus_limit > 0 && cfg.corpus_limit < static_cast<int>(s.corpus.train_idx.size()))
        s.corpus.train_idx.resize(static_cast<size_t>(cfg.corpus_limit));
    s.ctx = train::make_train_context<T>(s.corpus, cfg.codec_config(), codec::make_vocab(cfg.vocab));
    s.sched = heads::make_cosine_schedule(cfg.t_train, cfg.sample_steps, cfg.d_time);
    s.params = ModelParams<T>::make(cfg.model_config());
    model::init_params(s.params, derive_seed(cfg.seed, train::kStreamInit));
    s.opt = train::AdamState<T>::make(cfg.model_config());
    return s;
}

// Distinct train specs actually available for prompting (respects
// corpus_limit).
template <typename T>
std::vector<data::SceneSpec> train_prompt_specs(const Session<T>& s) {
    std::vector<data::SceneSpec> specs;
    for (int idx : s.corpus.train_idx) {
        const auto& spec = s.corpus.examples[static_cast<size_t>(idx)].spec;
        bool dup = false;
        for (const auto& x : specs) dup = dup || x == spec;
        if (!dup) specs.push_back(spec);
    }
    return specs;
}

// Trains to total_steps, appending metrics lines and writing periodic
// checkpoints (ckpt_latest plus the final ckpt) under out_dir.
template <typename T>
void run_training(Session<T>& s, const std::string& out_dir, int nthreads, int64_t halt_after = -1) {
    std::filesystem::create_directories(out_dir);
    const std::string log_path = out_dir + "/metrics.log";
    std::ofstream log(log_path, s.opt.step > 0 ? std::ios::app : std::ios::trunc);
    require(log.good(), Err::IoError, "cannot open " + log_path);

    train::TrainHooks<T> hooks;
    hooks.halt_after = halt_after;
    hooks.on_log = [&](const train::StepLog& l) {
        const std::string line = l.line();
        s.metrics_log += line + "\n";
        log << line << "\n";
        log.flush();
    };
    hooks.on_save = [&](int64_t, const ModelParams<T>& p, const train::AdamState<T>& opt) {
        io::save_checkpoint(out_dir + "/ckpt_latest.ufld", s.cfg, p, s.ctx.stats, &opt);
    };
    train::train_loop(s.params, s.opt, s.ctx, s.cfg.train_config(), s.sched, hooks, nthreads);
    io::save_checkpoint(out_dir + "/ckpt_final.ufld", s.cfg, s.params, s.ctx.stats, &s.opt);
    s.run_dir = out_dir;
}

// Restores a session from a checkpoint (its embedded config defines the
// corpus and model).
template <typename T>
Session<T> restore_session(const std::string& ckpt_path) {
    auto loaded = io::load_checkpoint<T>(ckpt_path);
    Session<T> s;
    s.cfg = loaded.cfg;
    s.corpus = data::build_corpus(s.cfg.corpus_config());
    if (s.cfg.corpus_limit > 0 && s.cfg.corpus_limit < static_cast<int>(s.corpus.train_idx.size()))
        s.corpus.train_idx.resize(static_cast<size_t>(s.cfg.corpus_limit));
    s.ctx = train::make_train_context<T>(s.corpus, s.cfg.codec_config(), codec::make_vocab(s.cfg.vocab));
    s.sched = heads::make_cosine_schedule(s.cfg.t_train, s.cfg.sample_steps, s.cfg.d_time);
    s.params = std::move(loaded.params);
    if (loaded.has_opt)
        s.opt = std::move(loaded.opt);
    else
        s.opt = train::AdamState<T>::make(s.cfg.model_config());
    s.ctx.stats = loaded.stats;  // frozen stats travel with the checkpoint
    return s;
}

// ----------------------------------------------------------- evaluation

struct EvalReport {
    double fid = 0.0;
    double noise_floor = 0.0;
    eval::AttrAccuracy attr;          // train-spec prompts
    eval::AttrAccuracy heldout_attr;  // compositional generalization
    double text_acc = 0.0;
    double caption_token_acc = 0.0;
    uint64_t eval_seed = 0;
    uint32_t checkpoint_crc = 0;
    std::string config_echo;

    std::string to_kv() const {
        std::string out;
        out += "toy_fid=" + g17(fid) + "\n";
        out += "noise_floor=" + g17(noise_floor) + "\n";
        out += "attr_color=" + g17(attr.color) + "\n";
        out += "attr_shape=" + g17(attr.shape) + "\n";
        out += "attr_position=" + g17(attr.position) + "\n";
        out += "attr_size=" + g17(attr.size) + "\n";
        out += "attr_all=" + g17(attr.all) + "\n";
        out += "heldout_attr_all=" + g17(heldout_attr.all) + "\n";
        out += "text_acc=" + g17(text_acc) + "\n";
        out += "caption_token_acc=" + g17(caption_token_acc) + "\n";
        out += "eval_seed=" + std::to_string(eval_seed) + "\n";
        out += "checkpoint_crc=" + std::to_string(checkpoint_crc) + "\n";
        return out;
    }

    std::string to_table() const {
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "metric               value\n"
                      "-------------------  ----------\n"
                      "toy_fid              %10.4f\n"
                      "noise_floor          %10.4f\n"
                      "attr_all             %10.4f\n"
                      "heldout_attr_all     %10.4f\n"
                      "text_acc             %10.4f\n"
                      "caption_token_acc    %10.4f\n",
                      fid, noise_floor, attr.all, heldout_attr.all, text_acc, caption_token_acc);
        return buf;
    }
};

// Clean renders of every scene; the toy-FID reference set.
inline std::vector<codec::ToyImage> reference_images(int canvas) {
    std::vector<codec::ToyImage> out;
    out.reserve(data::kNumScenes);
    for (int i = 0; i < data::kNumScenes; ++i) out.push_back(data::render(data::scene_from_index(i), canvas));
    return out;
}

// Full evaluation: n_gen raster-order samples prompted uniformly from the
// train specs, toy-FID against all clean references, attribute match,
// heldout-prompt attribute match, and understanding metrics on the heldout
// split.
template <typename T>
EvalReport run_full_eval(Session<T>& s, uint64_t eval_seed, uint32_t checkpoint_crc = 0) {
    EvalReport rep;
    rep.eval_seed = eval_seed;
    rep.checkpoint_crc = checkpoint_crc;
    rep.config_echo = io::serialize_config(s.cfg);
    const auto specs = train_prompt_specs(s);
    const int n_gen = s.cfg.eval_gen_images;
    const auto perm = seq::Permutation::identity(s.cfg.model_config().n_img);

    std::vector<data::SceneSpec> prompts(static_cast<size_t>(n_gen));
    {
        Rng prng(derive_seed(eval_seed, 0x9E0));
        for (auto& sp : prompts) sp = specs[prng.below(specs.size())];
    }
    std::vector<codec::ToyImage> gen(static_cast<size_t>(n_gen));
    parallel_for(n_gen, env_threads(), [&](int i) {
        Rng rng(derive_seed(eval_seed, 0x5A3, static_cast<uint64_t>(i)));
        gen[static_cast<size_t>(i)] = infer::generate_image(
            s.params, s.sched, s.ctx.ccfg, s.ctx.stats,
            codec::tokenize_text(data::make_caption(prompts[static_cast<size_t>(i)]), s.ctx.vocab), perm,
            rng);
    });
    const auto refs = reference_images(s.cfg.img_size);
    rep.fid = eval::toy_fid(gen, refs, s.ctx.ccfg, s.cfg.eval_d_feat);
    rep.noise_floor = eval::toy_fid_noise_floor(refs, s.ctx.ccfg, s.cfg.eval_d_feat, eval_seed);
    rep.attr = eval::attr_match(prompts, gen);

    // heldout prompts: a few samples per unseen spec
    const int per_spec = 4;
    std::vector<data::SceneSpec> hprompts;
    for (const auto& sp : s.corpus.heldout_specs)
        for (int k = 0; k < per_spec; ++k) hprompts.push_back(sp);
    std::vector<codec::ToyImage> hgen(hprompts.size());
    parallel_for(static_cast<int>(hprompts.size()), env_threads(), [&](int i) {
        Rng rng(derive_seed(eval_seed, 0x5A4, static_cast<uint64_t>(i)));
        hgen[static_cast<size_t>(i)] = infer::generate_image(
            s.params, s.sched, s.ctx.ccfg, s.ctx.stats,
            codec::tokenize_text(data::make_caption(hprompts[static_cast<size_t>(i)]), s.ctx.vocab), perm,
            rng);
    });
    rep.heldout_attr = eval::attr_match(hprompts, hgen);

    const auto und = eval::eval_understanding(s.params, s.ctx, s.corpus.heldout_idx);
    rep.text_acc = und.text_acc;
    rep.caption_token_acc = und.caption_token_acc;
    return rep;
}

// -------------------------------------------------------------- gradcheck

// The reference gradient-check configuration: 1 layer, d_model 16, 64-bit.
inline io::RunConfig gradcheck_config(uint64_t seed = 1) {
    io::RunConfig cfg;
    cfg.seed = seed;
    cfg.codec_seed = 1;
    cfg.enc_seed = 2;
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

// Builds a mixed batch from the config's corpus and checks analytic
// gradients against central finite differences.
inline train::GradCheckReport run_gradcheck(const io::RunConfig& cfg, int batch_size = 4,
                                            double lambda = 0.25) {
    auto s = make_session<double>(cfg);
    train::TrainConfig tc = cfg.train_config();
    tc.batch_size = batch_size;
    auto batch = train::assemble_batch(s.ctx, tc, 0);
    bool has_gen = false, has_und = false;
    for (const auto& b : batch) {
        has_gen = has_gen || b.is_gen;
        has_und = has_und || !b.is_gen;
    }
    // a mixed batch is part of the contract; extend until both tasks appear
    for (int64_t step = 1; !(has_gen && has_und); ++step) {
        for (auto& b : train::assemble_batch(s.ctx, tc, step)) {
            if (b.is_gen && !has_gen) {
                batch.push_back(std::move(b));
                has_gen = true;
            } else if (!b.is_gen && !has_und) {
                batch.push_back(std::move(b));
                has_und = true;
            }
        }
    }
    return train::grad_check(s.params, batch, s.sched, lambda, derive_seed(cfg.seed, 0x6CC));
}

// ---------------------------------------------------------------- sweeps

// Trains the config (or reuses a bitwise-identical cached run; training is
// deterministic, so the cache key is the serialized config).
template <typename T>
Session<T> train_or_cached(const io::RunConfig& cfg, const std::string& cache_dir, int nthreads) {
    std::filesystem::create_directories(cache_dir);
    const std::string blob = io::serialize_config(cfg);
    char key[16];
    std::snprintf(key, sizeof(key), "%08x", crc32(blob.data(), blob.size()));
    const std::string dir = cache_dir + "/run_" + key;
    const std::string final_ckpt = dir + "/ckpt_final.ufld";
    if (std::filesystem::exists(final_ckpt)) {
        auto s = restore_session<T>(final_ckpt);
        if (io::serialize_config(s.cfg) == blob && s.opt.step >= cfg.total_steps) {
            s.run_dir = dir;
            return s;
        }
    }
    auto s = make_session<T>(cfg);
    run_training(s, dir, nthreads);
    return s;
}

struct SweepRow {
    std::string label;
    bool has_gen = false, has_und = false;
    double lambda = 0.0;
    double fid = 0.0, attr_all = 0.0, text_acc = 0.0, caption_token_acc = 0.0;
    double final_lv = 0.0, final_lt = 0.0;  // last logged loss terms
};

// Pulls `key=<val>` from the final line of a metrics log.
inline double metrics_last(const std::string& log, const std::string& key) {
    const auto pos = log.rfind(" " + key + "=");
    if (pos == std::string::npos) return 0.0;
    return std::stod(log.substr(pos + key.size() + 2));
}

inline std::string sweep_table(const std::vector<SweepRow>& rows) {
    std::string out =
        "run                lambda     toy_fid    attr_all   text_acc   cap_acc    final_Lv   final_Lt\n";
    out += "-----------------  ---------  ---------  ---------  ---------  ---------  ---------  ---------\n";
    for (const auto& r : rows) {
        char buf[320];
        char lam[32], fid[32], attr[32], acc[32], cap[32], lv[32], lt[32];
        if (r.has_gen) {
            std::snprintf(fid, sizeof(fid), "%9.4f", r.fid);
            std::snprintf(attr, sizeof(attr), "%9.4f", r.attr_all);
        } else {
            std::snprintf(fid, sizeof(fid), "%9s", "-");
            std::snprintf(attr, sizeof(attr), "%9s", "-");
        }
        if (r.has_und) {
            std::snprintf(acc, sizeof(acc), "%9.4f", r.text_acc);
            std::snprintf(cap, sizeof(cap), "%9.4f", r.caption_token_acc);
        } else {
            std::snprintf(acc, sizeof(acc), "%9s", "-");
            std::snprintf(cap, sizeof(cap), "%9s", "-");
        }
        if (r.label.substr(0, 7) == "unified")
            std::snprintf(lam, sizeof(lam), "%9.4g", r.lambda);
        else
            std::snprintf(lam, sizeof(lam), "%9s", "-");
        std::snprintf(lv, sizeof(lv), "%9.4f", r.final_lv);
        std::snprintf(lt, sizeof(lt), "%9.4f", r.final_lt);
        std::snprintf(buf, sizeof(buf), "%-17s  %s  %s  %s  %s  %s  %s  %s\n", r.label.c_str(), lam,
                      fid, attr, acc, cap, lv, lt);
        out += buf;
    }
    return out;
}

// Lambda sweep: one unified run per lambda plus matched-budget T2I-only
// and I2T-only baselines (the single-task runs see the same number of
// task tokens as the unified runs do for that task).
template <typename T>
std::vector<SweepRow> run_lambda_sweep(const io::RunConfig& base, const std::vector<double>& lambdas,
                                       const std::string& cache_dir, int nthreads,
                                       std::vector<EvalReport>* reports = nullptr) {
    require(!lambdas.empty(), Err::EmptyBatch, "no lambda values");
    std::vector<SweepRow> rows;
    auto eval_run = [&](const io::RunConfig& cfg, const std::string& label, bool has_gen, bool has_und,
                        double lambda) {
        auto s = train_or_cached<T>(cfg, cache_dir, nthreads);
        auto rep = run_full_eval(s, derive_seed(base.seed, 0xE7A1));
        if (reports) reports->push_back(rep);
        SweepRow row;
        row.label = label;
        row.has_gen = has_gen;
        row.has_und = has_und;
        row.lambda = lambda;
        row.fid = rep.fid;
        row.attr_all = rep.attr.all;
        row.text_acc = rep.text_acc;
        row.caption_token_acc = rep.caption_token_acc;
        const std::string log = io::detail::read_file(s.run_dir + "/metrics.log");
        row.final_lv = metrics_last(log, "Lv");
        row.final_lt = metrics_last(log, "Lt");
        rows.push_back(row);
    };

    io::RunConfig t2i = base;
    t2i.task_mix_gen = 1.0;
    t2i.total_steps = std::llround(static_cast<double>(base.total_steps) * base.task_mix_gen);
    eval_run(t2i, "t2i_only", true, false, 0.0);

    io::RunConfig i2t = base;
    i2t.task_mix_gen = 0.0;
    i2t.lambda_text = 1.0;  // pure text objective; lambda is undefined for the baseline
    i2t.total_steps = std::llround(static_cast<double>(base.total_steps) * (1.0 - base.task_mix_gen));
    eval_run(i2t, "i2t_only", false, true, 0.0);

    for (double lam : lambdas) {
        io::RunConfig cfg = base;
        cfg.lambda_text = lam;
        eval_run(cfg, "unified_" + g17(lam), true, true, lam);
    }
    return rows;
}

// Order comparison: the paper's anneal schedule vs always-raster, same
// seed and budget.
template <typename T>
std::vector<SweepRow> run_order_comparison(const io::RunConfig& base, const std::string& cache_dir,
                                           int nthreads, std::vector<EvalReport>* reports = nullptr) {
    std::vector<SweepRow> rows;
    auto eval_run = [&](const io::RunConfig& cfg, const std::string& label) {
        auto s = train_or_cached<T>(cfg, cache_dir, nthreads);
        auto rep = run_full_eval(s, derive_seed(base.seed, 0xE7A2));
        if (reports) reports->push_back(rep);
        SweepRow row;
        row.label = label;
        row.has_gen = true;
        row.has_und = true;
        row.lambda = cfg.lambda_text;
        row.fid = rep.fid;
        row.attr_all = rep.attr.all;
        row.text_acc = rep.text_acc;
        row.caption_token_acc = rep.caption_token_acc;
        const std::string log = io::detail::read_file(s.run_dir + "/metrics.log");
        row.final_lv = metrics_last(log, "Lv");
        row.final_lt = metrics_last(log, "Lt");
        rows.push_back(row);
    };
    io::RunConfig raster = base;
    raster.order_random_frac = 0.0;
    raster.order_anneal_end_frac = 0.0;
    eval_run(raster, "raster");
    eval_run(base, "anneal_random");
    return rows;
}

}  // namespace unifluid::runner
