// Core utilities: error type, deterministic RNG, flat tensors, the dense
// kernels every module builds on, CRC32, and a small thread helper.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace unifluid {

// ---------------------------------------------------------------- errors

enum class Err {
    UnknownWord,
    DimensionMismatch,
    LengthMismatch,
    InvalidPermutation,
    EmptyQuestion,
    ShapeMismatch,
    NonFiniteActivation,
    CacheOverflow,
    PolicyViolation,
    NoLossPositions,
    EmptyBatch,
    NonFiniteLoss,
    NumericalFailure,
    UnparseablePrompt,
    ConfigError,
    IoError,
};

inline const char* err_name(Err e) {
    switch (e) {
        case Err::UnknownWord: return "UnknownWord";
        case Err::DimensionMismatch: return "DimensionMismatch";
        case Err::LengthMismatch: return "LengthMismatch";
        case Err::InvalidPermutation: return "InvalidPermutation";
        case Err::EmptyQuestion: return "EmptyQuestion";
        case Err::ShapeMismatch: return "ShapeMismatch";
        case Err::NonFiniteActivation: return "NonFiniteActivation";
        case Err::CacheOverflow: return "CacheOverflow";
        case Err::PolicyViolation: return "PolicyViolation";
        case Err::NoLossPositions: return "NoLossPositions";
        case Err::EmptyBatch: return "EmptyBatch";
        case Err::NonFiniteLoss: return "NonFiniteLoss";
        case Err::NumericalFailure: return "NumericalFailure";
        case Err::UnparseablePrompt: return "UnparseablePrompt";
        case Err::ConfigError: return "ConfigError";
        case Err::IoError: return "IoError";
    }
    return "Unknown";
}

class Exception : public std::runtime_error {
public:
    Exception(Err code, const std::string& msg)
        : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
    Err code() const { return code_; }

private:
    Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) {
    throw Exception(code, msg);
}

inline void require(bool cond, Err code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

// ------------------------------------------------------------------- rng

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Independent seed per (base, stream, index). Training derives one seed per
// step so checkpoints never need to carry generator state.
inline uint64_t derive_seed(uint64_t base, uint64_t stream, uint64_t index = 0) {
    return splitmix64(splitmix64(base ^ splitmix64(stream)) ^ index);
}

// mt19937_64 engine with explicit uniform / Box-Muller transforms so draws
// are identical across library versions. All draws are in double; callers
// working in float cast afterwards.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    double uniform() {  // [0, 1)
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u = 1.0 - uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 2.0 * 3.14159265358979323846 * uniform();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // uniform integer in [0, n), rejection sampled
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t r = eng_();
        while (r >= limit) r = eng_();
        return r % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------- tensor

template <typename T>
struct Tensor {
    std::vector<int> dims;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
        v.assign(static_cast<size_t>(count(dims)), T(0));
    }

    static int64_t count(const std::vector<int>& d) {
        int64_t n = 1;
        for (int x : d) n *= x;
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(v.size()); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& at(int i) { return v[static_cast<size_t>(i)]; }
    T at(int i) const { return v[static_cast<size_t>(i)]; }
    T& at(int i, int j) { return v[static_cast<size_t>(i) * dims[1] + j]; }
    T at(int i, int j) const { return v[static_cast<size_t>(i) * dims[1] + j]; }

    T* row(int i) { return v.data() + static_cast<size_t>(i) * dims[1]; }
    const T* row(int i) const { return v.data() + static_cast<size_t>(i) * dims[1]; }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }

    // Reshape without zeroing existing data; keeps the allocation when the
    // new extent fits the high-water capacity.
    void reshape(std::vector<int> d) {
        dims = std::move(d);
        v.resize(static_cast<size_t>(count(dims)));
    }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }
};

// --------------------------------------------------------------- kernels
// Row-major dense kernels. Fixed evaluation order keeps results bitwise
// reproducible; the 8-lane accumulator form vectorizes without -ffast-math.

template <typename T>
inline T dot(const T* a, const T* b, int n) {
    constexpr int V = 64 / sizeof(T);  // lanes per SIMD register
    T acc[4][V] = {};
    int i = 0;
    for (; i + 4 * V <= n; i += 4 * V)
        for (int c = 0; c < 4; ++c)
            for (int k = 0; k < V; ++k) acc[c][k] += a[i + c * V + k] * b[i + c * V + k];
    for (; i + V <= n; i += V)
        for (int k = 0; k < V; ++k) acc[0][k] += a[i + k] * b[i + k];
    for (int k = 0; k < V; ++k) acc[0][k] = (acc[0][k] + acc[1][k]) + (acc[2][k] + acc[3][k]);
    T s = T(0);
    for (int half = V / 2; half >= 1; half /= 2)
        for (int k = 0; k < half; ++k) acc[0][k] += acc[0][k + half];
    s = acc[0][0];
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Y[s,o] = dot(W row o, X row s).  X: seq x n, W: m x n, Y: seq x m.
template <typename T>
inline void linear_fwd(const T* X, const T* W, T* Y, int seq, int m, int n) {
    for (int o = 0; o < m; ++o) {
        const T* w = W + static_cast<size_t>(o) * n;
        for (int s = 0; s < seq; ++s)
            Y[static_cast<size_t>(s) * m + o] = dot(X + static_cast<size_t>(s) * n, w, n);
    }
}

// dX[s] += W^T dY[s]. Four weight rows per pass to amortize the
// read-modify-write on dX.
template <typename T>
inline void linear_bwd_input(const T* dY, const T* W, T* dX, int seq, int m, int n) {
    int o = 0;
    for (; o + 4 <= m; o += 4) {
        const T* w0 = W + static_cast<size_t>(o) * n;
        const T* w1 = w0 + n;
        const T* w2 = w1 + n;
        const T* w3 = w2 + n;
        for (int s = 0; s < seq; ++s) {
            const T* dy = dY + static_cast<size_t>(s) * m + o;
            const T g0 = dy[0], g1 = dy[1], g2 = dy[2], g3 = dy[3];
            T* dx = dX + static_cast<size_t>(s) * n;
            for (int i = 0; i < n; ++i) dx[i] += (g0 * w0[i] + g1 * w1[i]) + (g2 * w2[i] + g3 * w3[i]);
        }
    }
    for (; o < m; ++o) {
        const T* w = W + static_cast<size_t>(o) * n;
        for (int s = 0; s < seq; ++s) {
            const T g = dY[static_cast<size_t>(s) * m + o];
            T* dx = dX + static_cast<size_t>(s) * n;
            for (int i = 0; i < n; ++i) dx[i] += g * w[i];
        }
    }
}

// dW[o] += sum_s dY[s,o] * X[s]. Four positions per pass.
template <typename T>
inline void linear_bwd_weight(const T* dY, const T* X, T* dW, int seq, int m, int n) {
    for (int o = 0; o < m; ++o) {
        T* dw = dW + static_cast<size_t>(o) * n;
        int s = 0;
        for (; s + 4 <= seq; s += 4) {
            const T g0 = dY[static_cast<size_t>(s) * m + o];
            const T g1 = dY[(static_cast<size_t>(s) + 1) * m + o];
            const T g2 = dY[(static_cast<size_t>(s) + 2) * m + o];
            const T g3 = dY[(static_cast<size_t>(s) + 3) * m + o];
            const T* x0 = X + static_cast<size_t>(s) * n;
            const T* x1 = x0 + n;
            const T* x2 = x1 + n;
            const T* x3 = x2 + n;
            for (int i = 0; i < n; ++i) dw[i] += (g0 * x0[i] + g1 * x1[i]) + (g2 * x2[i] + g3 * x3[i]);
        }
        for (; s < seq; ++s) {
            const T g = dY[static_cast<size_t>(s) * m + o];
            const T* x = X + static_cast<size_t>(s) * n;
            for (int i = 0; i < n; ++i) dw[i] += g * x[i];
        }
    }
}

template <typename T>
inline void axpy(T a, const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475)));
}

template <typename T>
inline T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475)));
    const T pdf = T(0.3989422804014327) * std::exp(T(-0.5) * x * x);
    return cdf + x * pdf;
}

template <typename T>
inline bool all_finite(const T* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i)
        if (!std::isfinite(static_cast<double>(x[i]))) return false;
    return true;
}

// ----------------------------------------------------------------- crc32

inline uint32_t crc32_update(uint32_t crc, const void* buf, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(buf);
    crc ^= 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline uint32_t crc32(const void* buf, size_t len) { return crc32_update(0, buf, len); }

// ------------------------------------------------------------ formatting

// Shortest round-trip decimal for doubles; logs rely on this for bitwise
// replayable output.
inline std::string g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

// --------------------------------------------------------------- threads

inline int env_threads() {
    if (const char* s = std::getenv("UNIFLUID_THREADS")) {
        const int v = std::atoi(s);
        if (v >= 1) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

// Persistent worker pool behind parallel_for; workers are created lazily
// and pick items off a shared counter. Calls must not nest.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool(env_threads() - 1);
        return pool;
    }

    // Runs fn(i) for i in [0, n) on up to nthreads threads (the caller
    // participates), blocking until done.
    void run(int n, int nthreads, const std::function<void(int)>& fn) {
        nthreads = std::min(nthreads, n);
        if (n <= 0) return;
        if (nthreads <= 1 || workers_.empty()) {
            for (int i = 0; i < n; ++i) fn(i);
            return;
        }
        {
            std::unique_lock<std::mutex> lock(mu_);
            fn_ = &fn;
            next_ = 0;
            limit_ = n;
            active_ = std::min(static_cast<int>(workers_.size()), nthreads - 1);
            pending_ = active_;
            ++epoch_;
        }
        cv_.notify_all();
        for (int i = next_.fetch_add(1); i < n; i = next_.fetch_add(1)) fn(i);
        std::unique_lock<std::mutex> lock(mu_);
        done_cv_.wait(lock, [&] { return pending_ == 0; });
        fn_ = nullptr;
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
            ++epoch_;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

private:
    explicit ThreadPool(int n_workers) {
        for (int t = 0; t < std::max(0, n_workers); ++t)
            workers_.emplace_back([this, t] { worker_loop(t); });
    }

    void worker_loop(int id) {
        uint64_t seen = 0;
        while (true) {
            const std::function<void(int)>* fn = nullptr;
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_.wait(lock, [&] { return stop_ || epoch_ != seen; });
                seen = epoch_;
                if (stop_) return;
                if (id >= active_) continue;
                fn = fn_;
            }
            if (!fn) continue;
            for (int i = next_.fetch_add(1); i < limit_; i = next_.fetch_add(1)) (*fn)(i);
            {
                std::unique_lock<std::mutex> lock(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int)>* fn_ = nullptr;
    std::atomic<int> next_{0};
    int limit_ = 0;
    int active_ = 0;
    int pending_ = 0;
    uint64_t epoch_ = 0;
    bool stop_ = false;
};

template <class F>
inline void parallel_for(int n, int nthreads, F&& fn) {
    if (nthreads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::function<void(int)> wrapped = std::forward<F>(fn);
    ThreadPool::instance().run(n, nthreads, wrapped);
}

}  // namespace unifluid
