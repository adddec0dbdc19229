#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "errors.hpp"

namespace ff {

// mt19937_64 with hand-rolled value mappings. The standard distributions are
// not pinned across library implementations; these mappings are, which keeps
// fixed-seed runs bitwise reproducible and lets checkpoints resume exactly.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t raw() { return gen_(); }

    // uniform in [0,1), 53-bit resolution
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), Lemire multiply-shift
    int64_t uniform_int(int64_t n) {
        if (n <= 0) throw UsageError("uniform_int: n must be positive");
        const auto x = static_cast<unsigned __int128>(gen_());
        return static_cast<int64_t>((x * static_cast<uint64_t>(n)) >> 64);
    }

    bool coin() { return (gen_() & 1u) != 0; }

    std::string save_state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void load_state(const std::string& blob) {
        std::istringstream is(blob);
        is >> gen_;
        if (is.fail()) throw DataError("Rng::load_state: malformed state blob");
    }

private:
    std::mt19937_64 gen_;
};

} // namespace ff
