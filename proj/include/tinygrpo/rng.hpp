#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace tinygrpo {

// Deterministic counter-based RNG built on splitmix64. Every random decision
// in the trainer is drawn from a stream derived purely from (seed, purpose,
// ids), so replays are bit-identical across platforms and thread counts.
inline uint64_t splitmix64_next(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Order-sensitive combine; used to derive stream ids from structured keys.
inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    return splitmix64_next(s);
}

class RngStream {
public:
    explicit RngStream(uint64_t stream_id) : state_(stream_id) {
        // burn one draw so near-identical ids decorrelate immediately
        splitmix64_next(state_);
    }

    uint64_t next_u64() { return splitmix64_next(state_); }

    // uniform in [0, 1), 53-bit resolution
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n), n > 0; multiply-high method, no rejection loop
    uint64_t uniform_below(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

// Stream id for a named substream. Typical use:
//   RngStream rng(stream_id(seed, "rollout", step, fnv1a64(prompt_id), k));
template <class... Parts>
uint64_t stream_id(uint64_t seed, std::string_view purpose, Parts... parts) {
    uint64_t h = hash_combine(seed, fnv1a64(purpose));
    ((h = hash_combine(h, static_cast<uint64_t>(parts))), ...);
    return h;
}

} // namespace tinygrpo
