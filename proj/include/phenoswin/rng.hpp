#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace phenoswin {

/// Mixes a base seed with a string key (FNV-1a then SplitMix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key);

/// Deterministic generator; distributions are implemented here so draws do not
/// depend on the standard library's distribution algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    double uniform();                          // [0, 1)
    double uniform(double lo, double hi);
    std::int64_t uniform_int(std::int64_t n);  // [0, n)
    double normal();

    /// `count` distinct indices from [0, n), sorted ascending.
    std::vector<int> sorted_sample(int n, int count);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace phenoswin
