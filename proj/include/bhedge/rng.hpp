#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace bhedge {

inline std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_key(std::uint64_t a, std::uint64_t b) {
    return splitmix(a ^ splitmix(b + 0x632be59bd9b4e019ULL));
}

// Counter-based stream. Every (seed, a, b) key owns an independent sequence,
// so draws never depend on thread scheduling or on how many paths run.
class StreamRng {
public:
    using result_type = std::uint64_t;

    StreamRng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0)
        : state_(mix_key(mix_key(seed, a), b)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // in [0, 1)
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double normal() { return normal_(*this); }
    double exponential(double rate) { return std::exponential_distribution<double>(rate)(*this); }

private:
    std::uint64_t state_;
    std::normal_distribution<double> normal_;
};

} // namespace bhedge
