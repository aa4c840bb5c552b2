// File formats and configuration: `key = value` run configs, the UFLD
// checkpoint format (CRC32-protected), UFT0 raw tensors, binary PPM image
// dumps, and the corpus file.
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "unifluid/backbone.hpp"
#include "unifluid/codec.hpp"
#include "unifluid/data.hpp"
#include "unifluid/training.hpp"

namespace unifluid::io {

// ------------------------------------------------------------ run config

struct RunConfig {
    uint64_t seed = 0;
    uint64_t codec_seed = 0;
    uint64_t enc_seed = 0;
    bool f64 = false;
    std::string out_dir = "run";

    // model
    int d_model = 128, n_layers = 4, n_heads = 4, d_ff = 512, max_seq = 128, vocab = 64;
    int d_time = 64, diff_hidden = 256, t_train = 1000, sample_steps = 100;

    // data
    int img_size = 16, latent_c = 4;
    double holdout_frac = 0.1;
    int oversample = 4;
    double noise_sigma = 0.02;
    bool compositional_holdout = false;
    int corpus_limit = 0;  // 0 = full train split

    // training
    double lambda_text = 0.005;
    int64_t total_steps = 20000;
    double warmup_frac = 0.065;
    double lr = 1e-4;
    int batch_size = 32;
    double task_mix_gen = 0.5;
    double order_random_frac = 0.3;
    double order_anneal_end_frac = 0.6;
    double beta1 = 0.9, beta2 = 0.95;
    double weight_decay = 0.01;
    int64_t log_every = 100, save_every = 5000;
    double und_caption_frac = 0.5;

    // eval
    int eval_gen_images = 1000;
    int eval_d_feat = 16;

    model::ModelConfig model_config() const {
        model::ModelConfig m;
        m.vocab = vocab;
        m.d_model = d_model;
        m.n_layers = n_layers;
        m.n_heads = n_heads;
        m.d_ff = d_ff;
        m.max_seq = max_seq;
        const codec::CodecConfig c = codec_config();
        m.n_img = c.n_img();
        m.grid_w = c.token_grid_w();
        m.token_dim = c.token_dim();
        m.d_time = d_time;
        m.diff_hidden = diff_hidden;
        m.t_train = t_train;
        m.sample_steps = sample_steps;
        return m;
    }

    codec::CodecConfig codec_config() const {
        codec::CodecConfig c;
        c.img_h = img_size;
        c.img_w = img_size;
        c.latent_c = latent_c;
        c.enc_dim = d_model;  // features enter the embedding space via identity
        c.codec_seed = codec_seed;
        c.enc_seed = enc_seed;
        return c;
    }

    data::CorpusConfig corpus_config() const {
        data::CorpusConfig c;
        c.seed = seed;
        c.holdout_frac = holdout_frac;
        c.oversample = oversample;
        c.noise_sigma = noise_sigma;
        c.compositional_holdout = compositional_holdout;
        c.canvas = img_size;
        return c;
    }

    train::TrainConfig train_config() const {
        train::TrainConfig t;
        t.lambda_text = lambda_text;
        t.total_steps = total_steps;
        t.warmup_frac = warmup_frac;
        t.lr = lr;
        t.batch_size = batch_size;
        t.task_mix_gen = task_mix_gen;
        t.order_random_frac = order_random_frac;
        t.order_anneal_end_frac = order_anneal_end_frac;
        t.beta1 = beta1;
        t.beta2 = beta2;
        t.weight_decay = weight_decay;
        t.seed = seed;
        t.log_every = log_every;
        t.save_every = save_every;
        t.und_caption_frac = und_caption_frac;
        return t;
    }
};

namespace detail {

struct KeyBinding {
    enum class Type { U64, I64, Int, Double, Bool, Str } type;
    void* ptr;
};

inline std::map<std::string, KeyBinding> config_bindings(RunConfig& c) {
    using T = KeyBinding::Type;
    return {
        {"seed", {T::U64, &c.seed}},
        {"codec_seed", {T::U64, &c.codec_seed}},
        {"enc_seed", {T::U64, &c.enc_seed}},
        {"f64", {T::Bool, &c.f64}},
        {"out_dir", {T::Str, &c.out_dir}},
        {"d_model", {T::Int, &c.d_model}},
        {"n_layers", {T::Int, &c.n_layers}},
        {"n_heads", {T::Int, &c.n_heads}},
        {"d_ff", {T::Int, &c.d_ff}},
        {"max_seq", {T::Int, &c.max_seq}},
        {"vocab", {T::Int, &c.vocab}},
        {"d_time", {T::Int, &c.d_time}},
        {"diff_hidden", {T::Int, &c.diff_hidden}},
        {"t_train", {T::Int, &c.t_train}},
        {"sample_steps", {T::Int, &c.sample_steps}},
        {"img_size", {T::Int, &c.img_size}},
        {"latent_c", {T::Int, &c.latent_c}},
        {"holdout_frac", {T::Double, &c.holdout_frac}},
        {"oversample", {T::Int, &c.oversample}},
        {"noise_sigma", {T::Double, &c.noise_sigma}},
        {"compositional_holdout", {T::Bool, &c.compositional_holdout}},
        {"corpus_limit", {T::Int, &c.corpus_limit}},
        {"lambda_text", {T::Double, &c.lambda_text}},
        {"total_steps", {T::I64, &c.total_steps}},
        {"warmup_frac", {T::Double, &c.warmup_frac}},
        {"lr", {T::Double, &c.lr}},
        {"batch_size", {T::Int, &c.batch_size}},
        {"task_mix_gen", {T::Double, &c.task_mix_gen}},
        {"order_random_frac", {T::Double, &c.order_random_frac}},
        {"order_anneal_end_frac", {T::Double, &c.order_anneal_end_frac}},
        {"beta1", {T::Double, &c.beta1}},
        {"beta2", {T::Double, &c.beta2}},
        {"weight_decay", {T::Double, &c.weight_decay}},
        {"log_every", {T::I64, &c.log_every}},
        {"save_every", {T::I64, &c.save_every}},
        {"und_caption_frac", {T::Double, &c.und_caption_frac}},
        {"eval_gen_images", {T::Int, &c.eval_gen_images}},
        {"eval_d_feat", {T::Int, &c.eval_d_feat}},
    };
}

inline void assign_key(const KeyBinding& b, const std::string& value, int line) {
    try {
        switch (b.type) {
            case KeyBinding::Type::U64: *static_cast<uint64_t*>(b.ptr) = std::stoull(value); break;
            case KeyBinding::Type::I64: *static_cast<int64_t*>(b.ptr) = std::stoll(value); break;
            case KeyBinding::Type::Int: *static_cast<int*>(b.ptr) = std::stoi(value); break;
            case KeyBinding::Type::Double: *static_cast<double*>(b.ptr) = std::stod(value); break;
            case KeyBinding::Type::Bool: *static_cast<bool*>(b.ptr) = std::stoi(value) != 0; break;
            case KeyBinding::Type::Str: *static_cast<std::string*>(b.ptr) = value; break;
        }
    } catch (const std::exception&) {
        fail(Err::ConfigError, "line " + std::to_string(line) + ": bad value '" + value + "'");
    }
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

// Parses `key = value` lines with '#' comments. Unknown keys are rejected
// with their line number; seed, codec_seed and enc_seed are required.
inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    auto bindings = detail::config_bindings(cfg);
    std::map<std::string, bool> seen;
    std::istringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, Err::ConfigError,
                "line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        const auto it = bindings.find(key);
        if (it == bindings.end())
            fail(Err::ConfigError, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        detail::assign_key(it->second, value, lineno);
        seen[key] = true;
    }
    for (const char* req : {"seed", "codec_seed", "enc_seed"})
        require(seen.count(req) != 0, Err::ConfigError, std::string("missing required key '") + req + "'");
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Err::IoError, "cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

// Canonical echo of the parsed config: every key, fixed order, reparsable.
inline std::string serialize_config(const RunConfig& cfg) {
    RunConfig tmp = cfg;
    auto bindings = detail::config_bindings(tmp);
    std::string out;
    for (const auto& [key, b] : bindings) {
        out += key;
        out += " = ";
        switch (b.type) {
            case detail::KeyBinding::Type::U64: out += std::to_string(*static_cast<uint64_t*>(b.ptr)); break;
            case detail::KeyBinding::Type::I64: out += std::to_string(*static_cast<int64_t*>(b.ptr)); break;
            case detail::KeyBinding::Type::Int: out += std::to_string(*static_cast<int*>(b.ptr)); break;
            case detail::KeyBinding::Type::Double: out += g17(*static_cast<double*>(b.ptr)); break;
            case detail::KeyBinding::Type::Bool: out += *static_cast<bool*>(b.ptr) ? "1" : "0"; break;
            case detail::KeyBinding::Type::Str: out += *static_cast<std::string*>(b.ptr); break;
        }
        out += '\n';
    }
    return out;
}

// ------------------------------------------------------------ byte utils

namespace detail {

inline void put_bytes(std::string& buf, const void* p, size_t n) {
    buf.append(static_cast<const char*>(p), n);
}
template <typename U>
void put(std::string& buf, U v) {
    put_bytes(buf, &v, sizeof(v));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    void read(void* p, size_t n) {
        require(pos + n <= buf.size(), Err::IoError, "truncated file");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    template <typename U>
    U get() {
        U v;
        read(&v, sizeof(v));
        return v;
    }
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Err::IoError, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Err::IoError, "cannot write " + path);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    require(out.good(), Err::IoError, "short write to " + path);
}

}  // namespace detail

// ------------------------------------------------------------ checkpoint
// Layout: "UFLD" | version u32 | cfg_len u32 | cfg ASCII | tensor_count
// u32 | per tensor (name_len u16, name, rank u8, dims u32..., payload) |
// crc32 u32 over all preceding bytes. Little-endian throughout. Version 1
// carries f32 payloads, version 2 f64 (the 64-bit core checkpoints its
// exact state so resume equivalence is bitwise).

template <typename T>
constexpr uint32_t checkpoint_version() {
    return std::is_same_v<T, float> ? 1u : 2u;
}

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
std::string encode_checkpoint(const std::string& config_blob,
                              const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
    std::string buf;
    buf += "UFLD";
    detail::put<uint32_t>(buf, checkpoint_version<T>());
    detail::put<uint32_t>(buf, static_cast<uint32_t>(config_blob.size()));
    buf += config_blob;
    detail::put<uint32_t>(buf, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put<uint16_t>(buf, static_cast<uint16_t>(name.size()));
        buf += name;
        detail::put<uint8_t>(buf, static_cast<uint8_t>(t->dims.size()));
        for (int d : t->dims) detail::put<uint32_t>(buf, static_cast<uint32_t>(d));
        detail::put_bytes(buf, t->v.data(), t->v.size() * sizeof(T));
    }
    detail::put<uint32_t>(buf, crc32(buf.data(), buf.size()));
    return buf;
}

template <typename T>
struct DecodedCheckpoint {
    std::string config_blob;
    std::vector<NamedTensor<T>> tensors;
    uint32_t crc = 0;

    const Tensor<T>* find(const std::string& name) const {
        for (const auto& nt : tensors)
            if (nt.name == name) return &nt.tensor;
        return nullptr;
    }
};

template <typename T>
DecodedCheckpoint<T> decode_checkpoint(const std::string& buf) {
    require(buf.size() >= 16, Err::IoError, "checkpoint too small");
    const uint32_t stored_crc = crc32(buf.data(), buf.size() - 4);
    uint32_t file_crc;
    std::memcpy(&file_crc, buf.data() + buf.size() - 4, 4);
    require(stored_crc == file_crc, Err::IoError, "checkpoint CRC mismatch");

    detail::Reader r{buf};
    char magic[4];
    r.read(magic, 4);
    require(std::memcmp(magic, "UFLD", 4) == 0, Err::IoError, "bad checkpoint magic");
    const uint32_t version = r.get<uint32_t>();
    require(version == checkpoint_version<T>(), Err::IoError,
            "checkpoint version " + std::to_string(version) + " does not match numeric core");
    DecodedCheckpoint<T> out;
    out.crc = file_crc;
    const uint32_t cfg_len = r.get<uint32_t>();
    out.config_blob.resize(cfg_len);
    r.read(out.config_blob.data(), cfg_len);
    const uint32_t count = r.get<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor<T> nt;
        const uint16_t nl = r.get<uint16_t>();
        nt.name.resize(nl);
        r.read(nt.name.data(), nl);
        const uint8_t rank = r.get<uint8_t>();
        std::vector<int> dims(rank);
        for (auto& d : dims) d = static_cast<int>(r.get<uint32_t>());
        nt.tensor = Tensor<T>(dims);
        r.read(nt.tensor.v.data(), nt.tensor.v.size() * sizeof(T));
        out.tensors.push_back(std::move(nt));
    }
    require(r.pos + 4 == buf.size(), Err::IoError, "trailing bytes in checkpoint");
    return out;
}

// Model-level checkpoint: parameters, latent stats, optional optimizer
// state ("opt.*" tensors) for resume.
template <typename T>
void save_checkpoint(const std::string& path, const RunConfig& cfg, const model::ModelParams<T>& params,
                     const train::LatentStats& stats, const train::AdamState<T>* opt) {
    std::vector<std::pair<std::string, const Tensor<T>*>> list;
    for_each_tensor(params, [&](const std::string& n, const Tensor<T>& t) { list.emplace_back(n, &t); });

    Tensor<T> mean({static_cast<int>(stats.mean.size())}), stdev({static_cast<int>(stats.stdev.size())});
    for (size_t i = 0; i < stats.mean.size(); ++i) {
        mean.v[i] = static_cast<T>(stats.mean[i]);
        stdev.v[i] = static_cast<T>(stats.stdev[i]);
    }
    list.emplace_back("latent_stats.mean", &mean);
    list.emplace_back("latent_stats.std", &stdev);

    Tensor<T> step_t({1});
    if (opt) {
        step_t.v[0] = static_cast<T>(opt->step);
        list.emplace_back("opt.step", &step_t);
        for_each_tensor(opt->m, [&](const std::string& n, const Tensor<T>& t) { list.emplace_back("opt.m." + n, &t); });
        for_each_tensor(opt->v, [&](const std::string& n, const Tensor<T>& t) { list.emplace_back("opt.v." + n, &t); });
    }
    detail::write_file(path, encode_checkpoint<T>(serialize_config(cfg), list));
}

template <typename T>
struct LoadedModel {
    RunConfig cfg;
    model::ModelParams<T> params;
    train::LatentStats stats;
    bool has_opt = false;
    train::AdamState<T> opt;
    uint32_t crc = 0;
};

template <typename T>
LoadedModel<T> load_checkpoint(const std::string& path) {
    const auto decoded = decode_checkpoint<T>(detail::read_file(path));
    LoadedModel<T> out;
    out.crc = decoded.crc;
    out.cfg = parse_config(decoded.config_blob);
    out.params = model::ModelParams<T>::make(out.cfg.model_config());

    auto fill = [&](const std::string& name, Tensor<T>& t) {
        const Tensor<T>* src = decoded.find(name);
        require(src != nullptr, Err::IoError, "checkpoint missing tensor " + name);
        require(src->dims == t.dims, Err::IoError, "tensor shape mismatch for " + name);
        t.v = src->v;
    };
    for_each_tensor(out.params, fill);

    const Tensor<T>* mean = decoded.find("latent_stats.mean");
    const Tensor<T>* stdev = decoded.find("latent_stats.std");
    require(mean && stdev, Err::IoError, "checkpoint missing latent stats");
    out.stats.mean.assign(mean->v.begin(), mean->v.end());
    out.stats.stdev.assign(stdev->v.begin(), stdev->v.end());

    if (decoded.find("opt.step")) {
        out.has_opt = true;
        out.opt = train::AdamState<T>::make(out.cfg.model_config());
        out.opt.step = static_cast<int64_t>(decoded.find("opt.step")->v[0]);
        for_each_tensor(out.opt.m, [&](const std::string& n, Tensor<T>& t) { fill("opt.m." + n, t); });
        for_each_tensor(out.opt.v, [&](const std::string& n, Tensor<T>& t) { fill("opt.v." + n, t); });
    }
    return out;
}

inline uint32_t checkpoint_file_crc(const std::string& path) {
    const std::string buf = detail::read_file(path);
    require(buf.size() >= 4, Err::IoError, "checkpoint too small");
    uint32_t crc;
    std::memcpy(&crc, buf.data() + buf.size() - 4, 4);
    return crc;
}

// ------------------------------------------------------------ uft0 tensor
// Raw tensor format shared by corpus records and tensor dumps:
// "UFT0" | rank u8 | dims u32 LE ... | f32 LE payload.

inline void encode_uft0(std::string& buf, const std::vector<int>& dims, const std::vector<float>& payload) {
    require(Tensor<float>::count(dims) == static_cast<int64_t>(payload.size()), Err::ShapeMismatch,
            "uft0 payload size");
    buf += "UFT0";
    detail::put<uint8_t>(buf, static_cast<uint8_t>(dims.size()));
    for (int d : dims) detail::put<uint32_t>(buf, static_cast<uint32_t>(d));
    detail::put_bytes(buf, payload.data(), payload.size() * sizeof(float));
}

inline std::pair<std::vector<int>, std::vector<float>> decode_uft0(detail::Reader& r) {
    char magic[4];
    r.read(magic, 4);
    require(std::memcmp(magic, "UFT0", 4) == 0, Err::IoError, "bad tensor magic");
    const uint8_t rank = r.get<uint8_t>();
    std::vector<int> dims(rank);
    for (auto& d : dims) d = static_cast<int>(r.get<uint32_t>());
    std::vector<float> payload(static_cast<size_t>(Tensor<float>::count(dims)));
    r.read(payload.data(), payload.size() * sizeof(float));
    return {dims, payload};
}

inline void write_tensor_file(const std::string& path, const std::vector<int>& dims,
                              const std::vector<float>& payload) {
    std::string buf;
    encode_uft0(buf, dims, payload);
    detail::write_file(path, buf);
}

inline std::pair<std::vector<int>, std::vector<float>> read_tensor_file(const std::string& path) {
    const std::string buf = detail::read_file(path);
    detail::Reader r{buf};
    return decode_uft0(r);
}

// ------------------------------------------------------------------- ppm
// Binary PPM (P6, maxval 255); pixel = round(255 * clamped value).

inline void write_ppm(const std::string& path, const codec::ToyImage& img) {
    std::string buf = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                const double v = std::min(1.0, std::max(0.0, img.at(y, x, c)));
                buf += static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
            }
    detail::write_file(path, buf);
}

inline codec::ToyImage read_ppm(const std::string& path) {
    const std::string buf = detail::read_file(path);
    std::istringstream head(buf);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    head >> magic >> w >> h >> maxval;
    require(magic == "P6" && maxval == 255 && w > 0 && h > 0, Err::IoError, "unsupported PPM " + path);
    size_t pos = static_cast<size_t>(head.tellg());
    require(pos < buf.size() && (buf[pos] == '\n' || buf[pos] == ' '), Err::IoError, "bad PPM header");
    ++pos;
    require(buf.size() - pos >= static_cast<size_t>(w) * h * 3, Err::IoError, "truncated PPM");
    codec::ToyImage img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<unsigned char>(buf[pos++]) / 255.0;
    return img;
}

// ---------------------------------------------------------------- corpus
// One record per example: an ASCII key=value line with the scene fields,
// then the image as a UFT0 tensor (h x w x 3, f32).

inline void write_corpus_file(const std::string& path, const data::Corpus& corpus) {
    std::string buf;
    for (const auto& ex : corpus.examples) {
        buf += "shape=";
        buf += data::shape_word(ex.spec.shape);
        buf += " color=";
        buf += data::color_word(ex.spec.color);
        buf += " position=";
        buf += data::position_word(ex.spec.position);
        buf += " size=";
        buf += data::size_word(ex.spec.size);
        buf += " split=";
        buf += ex.split == data::Split::Train ? "TRAIN" : "HELDOUT";
        buf += '\n';
        std::vector<float> px(ex.image.px.begin(), ex.image.px.end());
        encode_uft0(buf, {ex.image.h, ex.image.w, 3}, px);
    }
    detail::write_file(path, buf);
}

inline data::Corpus read_corpus_file(const std::string& path) {
    const std::string buf = detail::read_file(path);
    data::Corpus corpus;
    detail::Reader r{buf};
    while (r.pos < buf.size()) {
        std::string line;
        while (r.pos < buf.size() && buf[r.pos] != '\n') line += buf[r.pos++];
        require(r.pos < buf.size(), Err::IoError, "truncated corpus record");
        ++r.pos;  // newline
        data::Example ex;
        std::istringstream ss(line);
        std::string kv;
        while (ss >> kv) {
            const auto eq = kv.find('=');
            require(eq != std::string::npos, Err::IoError, "bad corpus field " + kv);
            const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
            bool ok = false;
            if (key == "shape") {
                for (int i = 0; i < data::kNumShapes; ++i)
                    if (val == data::shape_word(static_cast<data::Shape>(i))) {
                        ex.spec.shape = static_cast<data::Shape>(i);
                        ok = true;
                    }
            } else if (key == "color") {
                for (int i = 0; i < data::kNumColors; ++i)
                    if (val == data::color_word(static_cast<data::Color>(i))) {
                        ex.spec.color = static_cast<data::Color>(i);
                        ok = true;
                    }
            } else if (key == "position") {
                for (int i = 0; i < data::kNumPositions; ++i)
                    if (val == data::position_word(static_cast<data::Position>(i))) {
                        ex.spec.position = static_cast<data::Position>(i);
                        ok = true;
                    }
            } else if (key == "size") {
                for (int i = 0; i < data::kNumSizes; ++i)
                    if (val == data::size_word(static_cast<data::SizeClass>(i))) {
                        ex.spec.size = static_cast<data::SizeClass>(i);
                        ok = true;
                    }
            } else if (key == "split") {
                ex.split = val == "TRAIN" ? data::Split::Train : data::Split::Heldout;
                ok = val == "TRAIN" || val == "HELDOUT";
            }
            require(ok, Err::IoError, "bad corpus field " + kv);
        }
        const auto [dims, payload] = decode_uft0(r);
        require(dims.size() == 3 && dims[2] == 3, Err::IoError, "bad corpus image dims");
        ex.image = codec::ToyImage(dims[0], dims[1]);
        for (size_t i = 0; i < payload.size(); ++i) ex.image.px[i] = payload[i];
        const int idx = static_cast<int>(corpus.examples.size());
        if (ex.split == data::Split::Train) {
            corpus.train_idx.push_back(idx);
            if (corpus.train_specs.empty() || !(corpus.train_specs.back() == ex.spec))
                corpus.train_specs.push_back(ex.spec);
        } else {
            corpus.heldout_idx.push_back(idx);
            corpus.heldout_specs.push_back(ex.spec);
        }
        corpus.examples.push_back(std::move(ex));
    }
    return corpus;
}

}  // namespace unifluid::io
