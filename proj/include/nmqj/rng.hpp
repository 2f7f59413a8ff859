#pragma once

// Counter-based per-trajectory random streams. Each trajectory's stream is a
// pure function of (base_seed, trajectory_index), so ensembles are
// reproducible independently of thread count and scheduling.

#include <cstdint>
#include <random>

namespace nmqj {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
}  // namespace detail

class TrajectoryRng {
public:
    TrajectoryRng(std::uint64_t base_seed, std::uint64_t trajectory_index) {
        std::uint64_t s = base_seed;
        (void)detail::splitmix64(s);
        s ^= 0xA3EC647659359ACDULL * (trajectory_index + 1);
        const std::uint64_t stream_seed = detail::splitmix64(s);
        engine_.seed(stream_seed);
    }

    // Uniform on the open interval (0,1); derived from the raw 64-bit output
    // so the value sequence does not depend on the standard library's
    // distribution implementation.
    double uniform() {
        const std::uint64_t x = engine_();
        return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
    }

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace nmqj
