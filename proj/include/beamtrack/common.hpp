#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace beamtrack {

// Errors surfaced at the CLI/file boundary. Internal modules throw the
// std:: exception that matches the contract (invalid_argument for shape
// and usage errors, domain_error, logic_error for state errors).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct mismatch_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Deterministic RNG. std::mt19937_64 has a portable bit stream; the
// distributions below are implemented here because the std:: ones are
// implementation-defined and would break byte-identical reruns across
// library versions.
class Rng {
   public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t u64() { return state_(); }

    // [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(state_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value cached
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

    // modulo bias is < 2^-32 for the n used here
    uint64_t below(uint64_t n) { return state_() % n; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // derive an independent stream (e.g. one per frame)
    static uint64_t mix(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

   private:
    std::mt19937_64 state_;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

// RGB frame (or any channel-major raster), values in [0,1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> v;

    Image() = default;
    Image(int c, int h, int w) : channels(c), height(h), width(w), v(static_cast<size_t>(c) * h * w, 0.0f) {}

    float& at(int c, int y, int x) { return v[(static_cast<size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return v[(static_cast<size_t>(c) * height + y) * width + x]; }
    size_t size() const { return v.size(); }
};

// little-endian binary I/O (file formats are pinned to LE)
inline void put_u32(std::ostream& os, uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x), static_cast<unsigned char>(x >> 8),
                          static_cast<unsigned char>(x >> 16), static_cast<unsigned char>(x >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw io_error("unexpected end of stream");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& os, float x) {
    uint32_t u;
    static_assert(sizeof(u) == sizeof(x));
    std::memcpy(&u, &x, 4);
    put_u32(os, u);
}

inline float get_f32(std::istream& is) {
    uint32_t u = get_u32(is);
    float x;
    std::memcpy(&x, &u, 4);
    return x;
}

inline void put_f64(std::ostream& os, double x) {
    uint64_t u;
    std::memcpy(&u, &x, 8);
    put_u32(os, static_cast<uint32_t>(u));
    put_u32(os, static_cast<uint32_t>(u >> 32));
}

inline double get_f64(std::istream& is) {
    uint64_t lo = get_u32(is);
    uint64_t hi = get_u32(is);
    uint64_t u = lo | (hi << 32);
    double x;
    std::memcpy(&x, &u, 8);
    return x;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
// handled exactly once; callers must only write to per-index slots so the
// result is identical for any thread count.
template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        size_t lo = n * w / workers;
        size_t hi = n * (w + 1) / workers;
        pool.emplace_back([lo, hi, &fn] {
            for (size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace beamtrack
