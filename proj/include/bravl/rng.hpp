#ifndef BRAVL_RNG_HPP
#define BRAVL_RNG_HPP

#include <cstdint>
#include <random>
#include <string>

#include "bravl/matrix.hpp"

namespace bravl {

// Deterministic random stream. Gaussian draws go through an explicit
// Box-Muller transform (with cached spare) instead of std::normal_distribution
// so that sequences are reproducible across standard libraries, and the full
// state round-trips through checkpoints.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t uniform_index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    double normal();

    Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0);

    std::string save_state() const;
    void load_state(const std::string& s);

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace bravl

#endif
