#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace seqvae {

// Deterministic random stream. All distribution transforms are implemented
// here rather than through std:: distributions, so sequences are identical
// across standard libraries and platforms.
//
// Streams are split with fork(tag, index): the child seed depends only on
// the parent's construction seed and the (tag, index) pair, never on how
// much of the parent stream has been consumed.
class Rng {
public:
    explicit Rng(uint64_t seed);

    Rng fork(std::string_view tag, uint64_t index = 0) const;

    uint64_t next_u64();

    // Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller (pairs cached).
    double normal();

    std::vector<double> normal_vec(size_t n);
    std::vector<double> uniform_vec(size_t n, double lo, double hi);

    // Uniform integer on [lo, hi] inclusive.
    int uniform_int(int lo, int hi);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace seqvae
