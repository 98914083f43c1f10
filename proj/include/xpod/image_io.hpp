#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "xpod/image.hpp"

namespace xpod {

// ".xri" image pair on disk:
//   <name>.f32   raw little-endian float32 payload, row-major
//   <name>.json  {"width", "height", "pitch_mm", "dtype": "f32", "role", ...extra}
//
// Paths passed here may name the stem, the .f32 file, or the .json sidecar.

struct XriPaths {
    std::filesystem::path payload;
    std::filesystem::path sidecar;
};

XriPaths xri_paths(const std::filesystem::path& path);

struct XriFile {
    ImageGrid grid;
    nlohmann::json meta;
};

/// Writes grid as float32. Values outside float32 range are rejected rather
/// than silently stored as infinities. `extra` keys are merged into the
/// sidecar; the five format keys cannot be overridden.
void write_image(const ImageGrid& grid, const std::filesystem::path& path,
                 const std::string& role = "intensity",
                 const nlohmann::json& extra = nlohmann::json::object());

XriFile read_xri(const std::filesystem::path& path);
ImageGrid read_image(const std::filesystem::path& path);

void write_mask(const BinaryMask& mask, double pitch_mm, const std::filesystem::path& path,
                const nlohmann::json& extra = nlohmann::json::object());

/// Accepts only payload values 0 and 1.
BinaryMask read_mask(const std::filesystem::path& path);

/// Sidecar-only read, for tools that need dimensions or provenance.
nlohmann::json read_sidecar(const std::filesystem::path& path);

}  // namespace xpod
