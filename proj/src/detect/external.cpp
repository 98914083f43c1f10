#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "xpod/detect.hpp"
#include "xpod/error.hpp"
#include "xpod/image_io.hpp"

namespace xpod::detect {

namespace fs = std::filesystem;
using nlohmann::json;

DetectorManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest " + path.string());
    DetectorManifest m;
    try {
        const json j = json::parse(in);
        m.exposure_ms = j.at("exposure_ms").get<double>();
        m.calibration = j.value("calibration", std::string());
        for (const auto& s : j.at("samples")) {
            ManifestSample ms;
            ms.id = s.at("id").get<std::string>();
            ms.channel_a = s.at("channel_a").get<std::string>();
            ms.channel_b = s.at("channel_b").get<std::string>();
            if (s.contains("gt_mask") && !s["gt_mask"].is_null()) {
                ms.gt_mask = s["gt_mask"].get<std::string>();
            }
            ms.out_mask = s.at("out_mask").get<std::string>();
            m.samples.push_back(std::move(ms));
        }
    } catch (const json::exception& e) {
        throw ValidationError("malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
}

void write_manifest(const DetectorManifest& m, const fs::path& path) {
    json samples = json::array();
    for (const auto& s : m.samples) {
        json js{{"id", s.id}, {"channel_a", s.channel_a}, {"channel_b", s.channel_b},
                {"out_mask", s.out_mask}};
        if (s.gt_mask) js["gt_mask"] = *s.gt_mask;
        samples.push_back(std::move(js));
    }
    json j{{"samples", samples}, {"exposure_ms", m.exposure_ms}, {"calibration", m.calibration}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
}

namespace {

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out += c;
        }
    }
    return out + "'";
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

std::vector<BinaryMask> run_external_detector(const fs::path& manifest_path,
                                              const std::string& command_template) {
    const auto manifest = read_manifest(manifest_path);
    const fs::path base = manifest_path.parent_path();
    if (command_template.empty()) throw ValidationError("external detector command is empty");

    std::string command = command_template;
    const std::string quoted = shell_quote(manifest_path.string());
    const std::string placeholder = "{manifest}";
    if (auto pos = command.find(placeholder); pos != std::string::npos) {
        do {
            command.replace(pos, placeholder.size(), quoted);
            pos = command.find(placeholder, pos + quoted.size());
        } while (pos != std::string::npos);
    } else {
        command += " " + quoted;
    }

    const int status = std::system(command.c_str());
    if (status == -1) throw RuntimeFailure("could not launch external detector: " + command);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        throw RuntimeFailure("external detector exited with status " + std::to_string(code) +
                             ": " + command);
    }

    std::vector<BinaryMask> masks;
    masks.reserve(manifest.samples.size());
    for (const auto& s : manifest.samples) {
        const json input = read_sidecar(resolve(base, s.channel_a));
        const int w = input.at("width").get<int>();
        const int h = input.at("height").get<int>();
        const fs::path out = resolve(base, s.out_mask);
        if (!fs::exists(xri_paths(out).payload) || !fs::exists(xri_paths(out).sidecar)) {
            throw RuntimeFailure("external detector wrote no mask for sample " + s.id);
        }
        BinaryMask mask = [&] {
            try {
                return read_mask(out);
            } catch (const ValidationError& e) {
                throw ValidationError("invalid mask for sample " + s.id + ": " + e.what());
            }
        }();
        if (mask.width() != w || mask.height() != h) {
            throw ValidationError("mask for sample " + s.id + " is " + std::to_string(mask.width()) +
                                 "x" + std::to_string(mask.height()) + ", expected " +
                                 std::to_string(w) + "x" + std::to_string(h));
        }
        masks.push_back(std::move(mask));
    }
    return masks;
}

}  // namespace xpod::detect
