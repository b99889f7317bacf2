#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace semcodec {

// Seeded generator with platform-independent real conversions.
// std::uniform_real_distribution / std::normal_distribution are
// implementation-defined, so the conversions are done here by hand.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Open interval (-0.5, 0.5); zero-probability endpoints are redrawn.
    double centered_unit()
    {
        for (;;) {
            double u = uniform() - 0.5;
            if (u != -0.5) {
                return u;
            }
        }
    }

    // Box-Muller; the spare value is cached.
    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n), rejection sampled.
    std::uint64_t below(std::uint64_t n)
    {
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = 0;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    // Derive an independent child stream.
    Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Fisher-Yates with Rng::below so shuffles are reproducible everywhere.
template <typename Vec>
void shuffle(Vec& v, Rng& rng)
{
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

} // namespace semcodec
