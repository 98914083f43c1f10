// Test double for the external detector interface.
//   xpod_stub_detector <gt|empty|wrongdim|fail> <manifest>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include "xpod/detect.hpp"
#include "xpod/image_io.hpp"

namespace fs = std::filesystem;
using namespace xpod;

int main(int argc, char** argv) {
    if (argc != 3) {
        std::fprintf(stderr, "usage: %s <gt|empty|wrongdim|fail> <manifest>\n", argv[0]);
        return 64;
    }
    const std::string mode = argv[1];
    if (mode == "fail") return 5;
    try {
        const fs::path manifest_path = argv[2];
        const auto manifest = detect::read_manifest(manifest_path);
        const fs::path base = manifest_path.parent_path();
        auto at = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
        for (const auto& s : manifest.samples) {
            const auto meta = read_sidecar(at(s.channel_a));
            const int w = meta.at("width").get<int>();
            const int h = meta.at("height").get<int>();
            const double pitch = meta.at("pitch_mm").get<double>();
            const fs::path out = at(s.out_mask);
            fs::create_directories(out.parent_path());
            if (mode == "gt") {
                write_mask(s.gt_mask ? read_mask(at(*s.gt_mask)) : BinaryMask(w, h), pitch, out);
            } else if (mode == "empty") {
                write_mask(BinaryMask(w, h), pitch, out);
            } else if (mode == "wrongdim") {
                write_mask(BinaryMask(w + 1, h), pitch, out);
            } else {
                std::fprintf(stderr, "unknown mode %s\n", mode.c_str());
                return 64;
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "stub: %s\n", e.what());
        return 1;
    }
    return 0;
}
