#pragma once

#include <cstdint>

#include "mvscale/common.hpp"

namespace mvscale::rng {

// Noise channel tags. Streams for distinct tags never overlap: every draw is
// a pure function of (seed, replica, particle, channel, step, component).
inline constexpr std::uint64_t kChanSlowNoise  = 1;  // slow-equation Brownian driver
inline constexpr std::uint64_t kChanFastNoise  = 2;  // fast-equation Brownian driver
inline constexpr std::uint64_t kChanLimitNoise = 3;  // extra driver of the limiting SDE
inline constexpr std::uint64_t kChanInit       = 4;  // Gaussian initial conditions
inline constexpr std::uint64_t kChanProjection = 5;  // sliced-W2 directions
inline constexpr std::uint64_t kChanProbe      = 6;  // assumption probes / box sampling

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Sponge-style fold of one key field into the stream state.
inline constexpr std::uint64_t fold(std::uint64_t state, std::uint64_t field) {
    return splitmix64(state ^ field);
}

// Uniform in the open interval (0,1); safe as a quantile-function argument.
inline double uniform01(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1p-53;
}

// Standard normal quantile (Wichura's PPND16 rational approximation,
// absolute error below 1e-15 over (0,1)).
double normal_quantile(double p);

struct StreamKey {
    std::uint64_t replica = 0;
    std::uint64_t particle = 0;
    std::uint64_t channel = 0;
    std::uint64_t step = 0;
    std::uint64_t component = 0;
};

// Counter-based noise source. Stateless: draws depend only on the seed and
// the key tuple, so schedules and worker counts never change outputs.
class NoiseSource {
public:
    explicit NoiseSource(std::uint64_t seed) : state0_(splitmix64(seed)) {}

    std::uint64_t raw(const StreamKey& k) const {
        std::uint64_t s = fold(state0_, k.replica);
        s = fold(s, k.particle);
        s = fold(s, k.channel);
        s = fold(s, k.step);
        return fold(s, k.component);
    }

    double uniform(const StreamKey& k) const { return uniform01(raw(k)); }
    double normal(const StreamKey& k) const { return normal_quantile(uniform(k)); }

    // Prefix with (replica, particle) pre-folded, for hot per-step loops.
    std::uint64_t particle_prefix(std::uint64_t replica, std::uint64_t particle) const {
        return fold(fold(state0_, replica), particle);
    }
    static double normal_from_prefix(std::uint64_t prefix, std::uint64_t channel,
                                     std::uint64_t step, std::uint64_t component) {
        return normal_quantile(uniform01(fold(fold(fold(prefix, channel), step), component)));
    }

    std::uint64_t seed_state() const { return state0_; }

private:
    std::uint64_t state0_;
};

}  // namespace mvscale::rng
