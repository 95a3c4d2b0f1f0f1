#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace segb {

// Reproducible random stream.
//
// Sub-streams are keyed by (seed, label): the label is hashed with 64-bit
// FNV-1a, combined with the seed, and passed through two SplitMix64 rounds
// to seed a std::mt19937_64. Uniform and normal variates are derived from
// the raw 64-bit output by hand, so sequences are identical on every
// platform (std:: distributions are implementation-defined).
class SeededStream {
public:
    explicit SeededStream(std::uint64_t seed);

    static SeededStream derive(std::uint64_t seed, std::string_view label);

    // Child stream keyed by this stream's seed and a label. Does not advance
    // this stream.
    SeededStream child(std::string_view label) const;
    SeededStream child(std::string_view label, std::uint64_t index) const;

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 bits of precision.
    double uniform();
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller; the spare value is cached.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    double lognormal(double mu, double sigma);
    bool bernoulli(double p) { return uniform() < p; }
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace segb
