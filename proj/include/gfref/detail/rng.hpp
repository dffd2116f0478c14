#pragma once

#include <cstdint>
#include <random>

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/distributions/normal.hpp>

namespace gfref::detail {

// SplitMix64 step; used only to mix (seed, stream) into engine seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Splittable stream: substream(seed, k) is independent of substream(seed, k')
// for k != k', and every draw is an inverse-CDF transform of the engine's
// uniforms, so a (seed, stream) pair reproduces bit-for-bit.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t s = seed;
        std::uint64_t a = splitmix64(s);
        s ^= stream * 0xda942042e4dd58b5ULL + 0x9e3779b97f4a7c15ULL;
        std::uint64_t b = splitmix64(s);
        std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                          static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
        engine_.seed(seq);
    }

    // Uniform on (0, 1), endpoints excluded so quantile transforms stay finite.
    double uniform() {
        constexpr double scale = 1.0 / 9007199254740992.0;  // 2^-53
        double u = static_cast<double>(engine_() >> 11) * scale;
        return u > 0.0 ? u : scale;
    }

    double normal() { return boost::math::quantile(boost::math::normal_distribution<>(), uniform()); }

    double gamma(double shape, double scale = 1.0) {
        return boost::math::quantile(boost::math::gamma_distribution<>(shape, scale), uniform());
    }

    // sigma2 ~ InverseGamma(shape, rate): 1/sigma2 ~ Gamma(shape, 1/rate).
    double inverse_gamma(double shape, double rate) { return 1.0 / gamma(shape, 1.0 / rate); }

private:
    std::mt19937_64 engine_;
};

}  // namespace gfref::detail
