#include "xpod/image_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "xpod/error.hpp"

namespace xpod {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

std::uint32_t to_little(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
    }
    return v;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_sidecar(const fs::path& p, const json& meta) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + p.string());
    out << meta.dump(2) << '\n';
    if (!out) throw RuntimeFailure("write failed: " + p.string());
}

json make_meta(int w, int h, double pitch, const std::string& role, const json& extra) {
    json meta = json::object();
    if (extra.is_object()) {
        for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
    }
    meta["width"] = w;
    meta["height"] = h;
    meta["pitch_mm"] = pitch;
    meta["dtype"] = "f32";
    meta["role"] = role;
    return meta;
}

void write_payload(const fs::path& p, std::span<const double> values) {
    std::vector<std::uint32_t> words(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double v = values[i];
        if (!std::isfinite(v) || std::fabs(v) > std::numeric_limits<float>::max()) {
            throw ValidationError("value at index " + std::to_string(i) +
                                  " is not representable as finite float32");
        }
        words[i] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + p.string());
    out.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
    if (!out) throw RuntimeFailure("write failed: " + p.string());
}

}  // namespace

XriPaths xri_paths(const fs::path& path) {
    fs::path stem = path;
    const auto ext = path.extension();
    if (ext == ".f32" || ext == ".json" || ext == ".xri") stem.replace_extension();
    fs::path payload = stem;
    payload += ".f32";
    fs::path sidecar = stem;
    sidecar += ".json";
    return {payload, sidecar};
}

void write_image(const ImageGrid& grid, const fs::path& path, const std::string& role,
                 const json& extra) {
    const auto paths = xri_paths(path);
    write_payload(paths.payload, grid.values());
    write_sidecar(paths.sidecar, make_meta(grid.width(), grid.height(), grid.pitch(), role, extra));
}

json read_sidecar(const fs::path& path) {
    const auto paths = xri_paths(path);
    json meta;
    try {
        meta = json::parse(read_text(paths.sidecar));
    } catch (const json::parse_error& e) {
        throw ValidationError("malformed sidecar " + paths.sidecar.string() + ": " + e.what());
    }
    auto require = [&](const char* key) -> const json& {
        if (!meta.is_object() || !meta.contains(key)) {
            throw ValidationError("sidecar " + paths.sidecar.string() + " lacks \"" + key + "\"");
        }
        return meta.at(key);
    };
    const auto& w = require("width");
    const auto& h = require("height");
    const auto& pitch = require("pitch_mm");
    const auto& dtype = require("dtype");
    if (!w.is_number_integer() || !h.is_number_integer() || w.get<long long>() <= 0 ||
        h.get<long long>() <= 0 || w.get<long long>() > (1 << 20) ||
        h.get<long long>() > (1 << 20)) {
        throw ValidationError("sidecar " + paths.sidecar.string() + " has invalid dimensions");
    }
    if (!pitch.is_number() || !(pitch.get<double>() > 0.0)) {
        throw ValidationError("sidecar " + paths.sidecar.string() + " has invalid pitch_mm");
    }
    if (!dtype.is_string() || dtype.get<std::string>() != "f32") {
        throw ValidationError("sidecar " + paths.sidecar.string() + " has unsupported dtype");
    }
    if (meta.contains("role") && !meta["role"].is_string()) {
        throw ValidationError("sidecar " + paths.sidecar.string() + " has non-string role");
    }
    return meta;
}

XriFile read_xri(const fs::path& path) {
    const auto paths = xri_paths(path);
    json meta = read_sidecar(path);
    const int w = meta["width"].get<int>();
    const int h = meta["height"].get<int>();
    const double pitch = meta["pitch_mm"].get<double>();

    const std::string bytes = read_text(paths.payload);
    const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() != n * 4) {
        throw ValidationError("payload " + paths.payload.string() + " holds " +
                              std::to_string(bytes.size()) + " bytes, header declares " +
                              std::to_string(w) + "x" + std::to_string(h) + " float32 (" +
                              std::to_string(n * 4) + " bytes)");
    }
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t word;
        std::memcpy(&word, bytes.data() + 4 * i, 4);
        const float f = std::bit_cast<float>(to_little(word));
        if (!std::isfinite(f)) {
            throw ValidationError("payload " + paths.payload.string() +
                                  " has non-finite value at index " + std::to_string(i));
        }
        data[i] = f;
    }
    return {ImageGrid(w, h, pitch, std::move(data)), std::move(meta)};
}

ImageGrid read_image(const fs::path& path) { return read_xri(path).grid; }

void write_mask(const BinaryMask& mask, double pitch_mm, const fs::path& path, const json& extra) {
    write_image(mask.to_grid(pitch_mm), path, "mask", extra);
}

BinaryMask read_mask(const fs::path& path) {
    auto file = read_xri(path);
    const auto& g = file.grid;
    std::vector<std::uint8_t> data(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] == 1.0) {
            data[i] = 1;
        } else if (g[i] != 0.0) {
            throw ValidationError("mask " + xri_paths(path).payload.string() +
                                  " has value other than 0/1 at index " + std::to_string(i));
        }
    }
    return BinaryMask(g.width(), g.height(), std::move(data));
}

}  // namespace xpod
