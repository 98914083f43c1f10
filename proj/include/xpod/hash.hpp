#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace xpod {

// FNV-1a 64-bit. Used for provenance fingerprints, not security.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t state = 0xCBF29CE484222325ull);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t fnv1a64_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace xpod
