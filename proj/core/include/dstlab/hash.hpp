#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace dstlab {

// FNV-1a, 64 bit. Used for content-addressing pipeline artifacts and for
// deriving named random substreams. Not cryptographic.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hash_hex(std::uint64_t h);

// Hash of a whole file's bytes. Throws std::runtime_error if unreadable.
std::uint64_t hash_file(const std::string& path);

}  // namespace dstlab
