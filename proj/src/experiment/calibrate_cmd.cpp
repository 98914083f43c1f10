#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "xpod/calib.hpp"
#include "xpod/error.hpp"
#include "xpod/experiment.hpp"
#include "xpod/image_io.hpp"
#include "xpod/noisegen.hpp"

namespace xpod::experiment {

using nlohmann::json;

namespace {

struct SeriesEntry {
    fs::path dir;
    double exposure_ms = 0.0;
    std::string tube;
};

std::vector<fs::path> frame_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ValidationError("series directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".f32") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2) throw ValidationError("series " + dir.string() + " needs at least two frames");
    return files;
}

struct SeriesResult {
    calib::SeriesMoments moments;
    ImageGrid first;
};

SeriesResult accumulate(const SeriesEntry& s) {
    calib::MomentAccumulator acc;
    std::optional<ImageGrid> first;
    for (const auto& f : frame_files(s.dir)) {
        ImageGrid frame = read_image(f);
        acc.add(frame);
        if (!first) first = std::move(frame);
    }
    return {calib::moments_from(acc, s.exposure_ms, s.tube, s.dir.filename().string()), std::move(*first)};
}

}  // namespace

json run_calibration(const fs::path& manifest_path, const std::optional<fs::path>& maps_dir) {
    std::ifstream in(manifest_path);
    if (!in) throw ValidationError("cannot open calibration manifest " + manifest_path.string());
    const fs::path base = manifest_path.parent_path();
    SeriesEntry dark;
    std::vector<SeriesEntry> levels;
    int window = 4;
    try {
        const json j = json::parse(in);
        if (!j.contains("darkfield")) throw ValidationError("calibration manifest lacks a darkfield series");
        dark.dir = base / j["darkfield"].at("dir").get<std::string>();
        dark.exposure_ms = j["darkfield"].value("exposure_ms", 0.0);
        if (!j.contains("levels") || j["levels"].size() < 3) {
            throw ValidationError("calibration manifest needs at least three flatfield levels");
        }
        for (const auto& l : j["levels"]) {
            levels.push_back({base / l.at("dir").get<std::string>(), l.at("exposure_ms").get<double>(),
                              l.value("tube", std::string("default"))});
        }
        window = j.value("psf_window", window);
    } catch (const json::exception& e) {
        throw ValidationError("malformed calibration manifest: " + std::string(e.what()));
    }

    calib::CalibrationMoments moments{accumulate(dark).moments, {}};
    std::vector<ImageGrid> firsts;
    for (const auto& l : levels) {
        auto r = accumulate(l);
        moments.levels.push_back(std::move(r.moments));
        firsts.push_back(std::move(r.first));
    }
    const calib::NoiseFit fit = calib::fit_noise_params(moments);
    DetectorCalibration summary = fit.scalar_summary();

    std::size_t bright = 0;
    for (std::size_t i = 0; i < moments.levels.size(); ++i) {
        if (moments.levels[i].mean.mean() > moments.levels[bright].mean.mean()) bright = i;
    }
    ImageGrid residual = firsts[bright];
    {
        auto v = residual.mutable_values();
        const auto& m = moments.levels[bright].mean;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= m[i];
    }
    summary.psf_sigma = calib::estimate_psf_sigma(residual, window);

    std::map<std::string, std::vector<calib::FluxPoint>> by_tube;
    for (const auto& m : moments.levels) by_tube[m.tube_label].push_back({m.exposure_ms, m.mean.mean()});
    json flux = json::object();
    json flux_fits = json::object();
    for (const auto& [tube, points] : by_tube) {
        const auto f = calib::fit_flux_coefficient(points, summary.dark_offset.scalar());
        flux[tube] = f.k;
        flux_fits[tube] = {{"k", f.k}, {"residual_rms", f.residual_rms}, {"n_points", f.n_points}};
    }

    json out = calibration_scalars_to_json(summary);
    out["flux_coefficients"] = flux;
    out["flux_fits"] = flux_fits;
    out["pixels"] = {{"valid", fit.n_valid},
                     {"negative_gain", fit.n_negative_gain},
                     {"intercept_mismatch", fit.n_intercept_mismatch},
                     {"degenerate", fit.n_degenerate}};
    out["max_intercept_discrepancy"] = fit.max_intercept_discrepancy;
    out["levels"] = moments.levels.size();
    out["frames_dark"] = moments.dark.frames;

    if (maps_dir) {
        fs::create_directories(*maps_dir);
        const std::string prefix = maps_dir->filename().string();
        json maps = json::object();
        auto save = [&](const PixelParam& p, const char* name) {
            if (!p.is_map()) return;
            write_image(*p.map(), *maps_dir / name, "calibration_map");
            maps[name] = prefix + "/" + name + ".f32";
        };
        save(fit.per_pixel.gain, "gain");
        save(fit.per_pixel.dark_offset, "dark_offset");
        save(fit.per_pixel.dark_var, "dark_var");
        write_mask(fit.valid, fit.slope.pitch(), *maps_dir / "valid");
        maps["valid"] = prefix + "/valid.f32";
        out["maps"] = maps;
    }
    return out;
}

fs::path write_calibration_fixture(const CalibrationFixture& fx, const fs::path& dir) {
    fx.truth.validate();
    fs::create_directories(dir);
    auto series = [&](const fs::path& sub, double intensity, std::uint64_t series_index) {
        fs::create_directories(dir / sub);
        const ImageGrid expected(fx.width, fx.height, 1.0, intensity);
        for (int f = 0; f < fx.frames; ++f) {
            const SeedSpec seed = derive_seed({fx.seed, series_index}, static_cast<std::uint64_t>(f));
            ImageGrid frame = noise::blur(noise::sample_noisy(expected, fx.truth, seed), fx.truth.psf_sigma);
            char name[32];
            std::snprintf(name, sizeof name, "f%05d", f);
            write_image(frame, dir / sub / name, "raw");
        }
    };
    series("dark", 0.0, 0);
    json levels = json::array();
    for (std::size_t i = 0; i < fx.levels.size(); ++i) {
        const auto& l = fx.levels[i];
        char sub[64];
        std::snprintf(sub, sizeof sub, "level%02zu_%s", i, l.tube.c_str());
        series(sub, l.k * l.exposure_ms, i + 1);
        levels.push_back({{"dir", sub}, {"exposure_ms", l.exposure_ms}, {"tube", l.tube}});
    }
    const json manifest{{"darkfield", {{"dir", "dark"}}}, {"levels", levels}};
    const fs::path path = dir / "calibration_manifest.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << manifest.dump(2) << '\n';
    return path;
}

}  // namespace xpod::experiment
