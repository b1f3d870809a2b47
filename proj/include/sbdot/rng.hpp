#ifndef SBDOT_RNG_HPP
#define SBDOT_RNG_HPP

#include <cstdint>
#include <random>
#include <vector>

#include "sbdot/core.hpp"

namespace sbdot {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seeded random stream. Chains and dataset items get independent streams
/// derived from one master seed (see derive_stream); reruns with the same
/// seed replay the same draws.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}

    double normal() { return normal_(eng_); }
    double uniform() { return unit_(eng_); }  // [0, 1)
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    std::uint64_t next_u64() { return eng_(); }
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(eng_() % static_cast<std::uint64_t>(n));
    }

    std::mt19937_64& engine() { return eng_; }

  private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

/// Stream-splitting rule: stream k of a master seed is seeded with
/// splitmix64(master ^ splitmix64(k+1)). Documented so ensembles are
/// reproducible chain by chain.
inline RngStream derive_stream(std::uint64_t master, std::uint64_t index) {
    return RngStream(splitmix64(master ^ splitmix64(index + 1)));
}

inline std::vector<double> standard_normal(RngStream& rng, std::size_t n) {
    std::vector<double> z(n);
    for (auto& x : z) x = rng.normal();
    return z;
}

}  // namespace sbdot

#endif
