#include "xpod/hash.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "xpod/error.hpp"

namespace xpod {

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t state) {
    for (unsigned char b : bytes) {
        state ^= b;
        state *= 0x100000001B3ull;
    }
    return state;
}

std::uint64_t fnv1a64(std::string_view text) {
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::uint64_t state = 0xCBF29CE484222325ull;
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        const auto n = static_cast<std::size_t>(in.gcount());
        state = fnv1a64(std::span(reinterpret_cast<const unsigned char*>(buf.data()), n), state);
    }
    return state;
}

std::string hex64(std::uint64_t v) {
    char out[17];
    std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(v));
    return out;
}

}  // namespace xpod
