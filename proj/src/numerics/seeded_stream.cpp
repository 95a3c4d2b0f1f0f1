#include "segb/numerics/seeded_stream.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace segb {

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

SeededStream::SeededStream(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

SeededStream SeededStream::derive(std::uint64_t seed, std::string_view label) {
    return SeededStream(splitmix64(splitmix64(seed) ^ fnv1a64(label)));
}

SeededStream SeededStream::child(std::string_view label) const { return derive(seed_, label); }

SeededStream SeededStream::child(std::string_view label, std::uint64_t index) const {
    std::string key(label);
    key.push_back('#');
    key += std::to_string(index);
    return derive(seed_, key);
}

std::uint64_t SeededStream::next_u64() { return engine_(); }

double SeededStream::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double SeededStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double SeededStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double SeededStream::lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

std::uint64_t SeededStream::below(std::uint64_t n) {
    if (n <= 1) return 0;
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

}  // namespace segb
