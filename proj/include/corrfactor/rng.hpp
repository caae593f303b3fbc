#ifndef CORRFACTOR_RNG_HPP
#define CORRFACTOR_RNG_HPP

#include <cmath>
#include <cstdint>
#include <vector>

namespace corrfactor {

// Deterministic random streams. The standard <random> distributions are
// implementation-defined, so every sampler here is spelled out; outputs are
// identical across platforms and library versions for a given seed, which the
// reproducibility contract (bit-identical reruns) depends on.

// splitmix64, the usual seeding/stream-derivation mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ core.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
        have_cached_normal_ = false;
        cached_normal_ = 0.0;
    }

    // Derive an independent stream for a tagged subtask (fold, row, ...).
    Rng child(std::uint64_t tag) const {
        std::uint64_t sm = s_[0] ^ (0x9e3779b97f4a7c15ULL + tag);
        sm = sm * 0xd1342543de82ef95ULL + s_[2];
        std::uint64_t mix = sm;
        return Rng(splitmix64(mix) ^ s_[3]);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound), rejection-free bias via Lemire would be
    // overkill here; plain rejection keeps it obviously correct.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % bound);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % bound;
    }

    // Standard normal, Box-Muller pair with one value cached.
    double normal() {
        if (have_cached_normal_) {
            have_cached_normal_ = false;
            return cached_normal_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        cached_normal_ = radius * std::sin(angle);
        have_cached_normal_ = true;
        return radius * std::cos(angle);
    }

    // Gamma(shape, scale) by Marsaglia-Tsang; shape < 1 boosted by the usual
    // u^(1/shape) trick.
    double gamma(double shape, double scale) {
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x;
            double v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
        }
    }

    double chi2(double df) { return gamma(0.5 * df, 2.0); }

    // Student t with df degrees of freedom (not standardized).
    double student_t(double df) { return normal() / std::sqrt(chi2(df) / df); }

    // Fisher-Yates; spelled out because std::shuffle's draw pattern is
    // implementation-defined.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    bool have_cached_normal_;
    double cached_normal_;
};

}  // namespace corrfactor

#endif
