#include "dstlab/rng.hpp"

#include <cmath>
#include <stdexcept>

#include "dstlab/hash.hpp"

namespace dstlab {

Rng Rng::derive(std::uint64_t seed, std::string_view stream) {
    std::uint64_t h = fnv1a64(stream);
    // splitmix64 finalizer over the combination keeps substreams decorrelated
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    z = z ^ (z >> 31);
    return Rng(z);
}

int Rng::uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    // floor(u * n) over a 53-bit uniform; bias is < 2^-40 for desk-scale n
    int k = static_cast<int>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
}

double Rng::normal() {
    // Box-Muller; 1 - u keeps the log argument strictly positive
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace dstlab
