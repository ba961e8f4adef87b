#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dstlab {

// Deterministic random stream. Wraps std::mt19937_64 (whose output sequence is
// fully specified by the standard) and avoids std::*_distribution, whose
// results are implementation-defined. All sampling helpers below are written
// out explicitly so that the same seed yields the same draws on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Independent substream identified by a label, e.g. per-dialogue streams
    // derived from (seed, dialogue id).
    static Rng derive(std::uint64_t seed, std::string_view stream);

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be positive.
    int uniform_int(int n);

    // Standard normal via Box-Muller. Consumes two uniforms per call; no
    // cached spare, so the draw sequence is position-independent.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace dstlab
