#include <cstdio>
#include <fstream>
#include <set>

#include "xpod/error.hpp"
#include "xpod/experiment.hpp"
#include "xpod/hash.hpp"
#include "xpod/image_io.hpp"

namespace xpod::experiment {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
        if (!ok.count(key)) throw ValidationError("unknown key '" + key + "' in " + where);
    }
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

phantom::EllipsoidShape parse_main(const json& j, const phantom::GridGeometry& grid) {
    reject_unknown(j, {"semi_a_mm", "semi_b_mm", "semi_c_mm", "center_x_px", "center_y_px"}, "phantom.main");
    phantom::EllipsoidShape e;
    e.semi_a_mm = j.value("semi_a_mm", e.semi_a_mm);
    e.semi_b_mm = j.value("semi_b_mm", e.semi_b_mm);
    e.semi_c_mm = j.value("semi_c_mm", e.semi_c_mm);
    e.center_x_px = j.value("center_x_px", 0.5 * (grid.width - 1));
    e.center_y_px = j.value("center_y_px", 0.5 * (grid.height - 1));
    return e;
}

phantom::RodShape parse_rod(const json& j, const phantom::EllipsoidShape& main) {
    reject_unknown(j, {"length_mm", "diameter_mm", "orientation_rad", "center_x_px", "center_y_px"},
                   "phantom.fo");
    phantom::RodShape r;
    r.length_mm = j.value("length_mm", r.length_mm);
    r.diameter_mm = j.value("diameter_mm", r.diameter_mm);
    r.orientation_rad = j.value("orientation_rad", r.orientation_rad);
    r.center_x_px = j.value("center_x_px", main.center_x_px);
    r.center_y_px = j.value("center_y_px", main.center_y_px);
    return r;
}

phantom::RecipeJitter parse_jitter(const json& j) {
    reject_unknown(j, {"center_px", "fo_center_px", "orientation_rad", "main_axes_log", "main_height_log",
                       "rod_length_log", "rod_diameter_log"},
                   "phantom.jitter");
    phantom::RecipeJitter r;
    r.center_px = j.value("center_px", 0.0);
    r.fo_center_px = j.value("fo_center_px", 0.0);
    r.orientation_rad = j.value("orientation_rad", 0.0);
    r.main_axes_log = j.value("main_axes_log", 0.0);
    r.main_height_log = j.value("main_height_log", 0.0);
    r.rod_length_log = j.value("rod_length_log", 0.0);
    r.rod_diameter_log = j.value("rod_diameter_log", 0.0);
    return r;
}

detect::DetectorConfig parse_baseline(const json& j) {
    detect::DetectorConfig c;
    c.z_threshold = j.value("z_threshold", c.z_threshold);
    c.min_area = j.value("min_area", c.min_area);
    c.denom_floor = j.value("denom_floor", c.denom_floor);
    c.object_mask_threshold = j.value("object_mask_threshold", c.object_mask_threshold);
    c.min_delta = j.value("min_delta", c.min_delta);
    return c;
}

}  // namespace

DetectorChoice parse_detector(const json& det) {
    DetectorChoice d;
    try {
        const auto type = det.value("type", std::string("baseline"));
        if (type == "baseline") {
            reject_unknown(det, {"type", "z_threshold", "min_area", "denom_floor", "object_mask_threshold",
                                 "min_delta"},
                           "detector");
            d.baseline = parse_baseline(det);
        } else if (type == "external") {
            reject_unknown(det, {"type", "command"}, "detector");
            d.external = true;
            d.command = det.at("command").get<std::string>();
        } else {
            throw ValidationError("unknown detector type '" + type + "'");
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed detector: ") + e.what());
    }
    return d;
}

forward::Aggregator parse_aggregator(const json& a) {
    if (a.is_string() && a.get<std::string>() == "mean") return forward::Aggregator::mean();
    if (a.is_object() && a.contains("percentile") && a["percentile"].is_number()) {
        return forward::Aggregator::percentile(a["percentile"].get<double>());
    }
    throw ValidationError("contrast_aggregator must be \"mean\" or {\"percentile\": q}");
}

ExperimentConfig parse_config(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ValidationError("config must be a JSON object");
    reject_unknown(j,
                   {"seed", "threads", "output_dir", "grid", "calibration", "channels", "materials",
                    "reference_exposure_ms", "exposures_ms", "phantom", "counts", "detector",
                    "contrast_aggregator", "pod", "generation"},
                   "config");
    ExperimentConfig c;
    try {
        c.seed = j.value("seed", std::uint64_t{0});
        c.threads = j.value("threads", 0u);
        if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());

        if (j.contains("grid")) {
            const auto& g = j["grid"];
            reject_unknown(g, {"width", "height", "pitch_mm"}, "grid");
            c.grid.width = g.value("width", c.grid.width);
            c.grid.height = g.value("height", c.grid.height);
            c.grid.pitch_mm = g.value("pitch_mm", c.grid.pitch_mm);
        }

        if (j.contains("calibration")) {
            const auto& cal = j["calibration"];
            if (cal.contains("file")) {
                c.calibration_file = resolve(base_dir, cal["file"].get<std::string>());
                if (!fs::exists(*c.calibration_file)) {
                    throw ValidationError("calibration file not found: " + c.calibration_file->string());
                }
                c.calibration = load_calibration(*c.calibration_file);
            } else {
                reject_unknown(cal, {"gain", "dark_offset", "dark_var", "psf_sigma"}, "calibration");
                c.calibration = calibration_from_json(cal);
            }
        }

        auto materials = std::vector<phantom::MaterialRef>{phantom::default_meat(), phantom::default_bone()};
        if (j.contains("materials")) {
            const auto& m = j["materials"];
            reject_unknown(m, {"main", "fo"}, "materials");
            if (m.contains("main")) materials[0] = phantom::material_from_json(m["main"]);
            if (m.contains("fo")) materials[1] = phantom::material_from_json(m["fo"]);
        }

        if (!j.contains("channels")) throw ValidationError("config needs two channels");
        for (const auto& ch : j["channels"]) {
            reject_unknown(ch, {"label", "k", "spectrum"}, "channels[]");
            ChannelConfig cc;
            cc.label = ch.at("label").get<std::string>();
            cc.k = ch.at("k").get<double>();
            if (ch.contains("spectrum")) {
                cc.spectrum = resolve(base_dir, ch["spectrum"].get<std::string>());
                if (!fs::exists(*cc.spectrum)) {
                    throw ValidationError("spectrum file not found: " + cc.spectrum->string());
                }
                const auto spectrum = forward::read_spectrum_csv(*cc.spectrum);
                for (auto& mat : materials) {
                    if (mat.attenuation_curve.empty()) {
                        throw ValidationError("channel '" + cc.label + "' has a spectrum but material '" +
                                              mat.name + "' has no attenuation curve");
                    }
                    mat.effective_mu[cc.label] = forward::effective_mu(spectrum, mat.attenuation_curve);
                }
            }
            c.channels.push_back(std::move(cc));
        }

        c.reference_exposure_ms = j.value("reference_exposure_ms", c.reference_exposure_ms);
        if (!j.contains("exposures_ms")) throw ValidationError("config needs exposures_ms");
        c.exposures_ms = j["exposures_ms"].get<std::vector<double>>();

        const json ph = j.value("phantom", json::object());
        reject_unknown(ph, {"main", "fo", "jitter"}, "phantom");
        c.recipe.main = parse_main(ph.value("main", json::object()), c.grid);
        c.recipe.fo = parse_rod(ph.value("fo", json::object()), c.recipe.main);
        c.recipe.jitter = parse_jitter(ph.value("jitter", json::object()));
        c.recipe.main_material = materials[0];
        c.recipe.fo_material = materials[1];

        const json counts = j.value("counts", json::object());
        reject_unknown(counts, {"fo_present", "fo_absent"}, "counts");
        c.fo_present = counts.value("fo_present", 0);
        c.fo_absent = counts.value("fo_absent", 0);

        c.detector = parse_detector(j.value("detector", json::object()));
        if (j.contains("contrast_aggregator")) c.aggregator = parse_aggregator(j["contrast_aggregator"]);

        const json pod = j.value("pod", json::object());
        reject_unknown(pod, {"targets", "bootstrap", "level", "curve_points"}, "pod");
        c.pod.targets = pod.value("targets", c.pod.targets);
        c.pod.bootstrap = pod.value("bootstrap", c.pod.bootstrap);
        c.pod.level = pod.value("level", c.pod.level);
        c.pod.curve_points = pod.value("curve_points", c.pod.curve_points);

        const json gen = j.value("generation", json::object());
        reject_unknown(gen, {"quality_factor", "strict", "blur_before_noise", "normalize_to_flux"},
                       "generation");
        c.generation.quality_factor = gen.value("quality_factor", c.generation.quality_factor);
        c.generation.strict = gen.value("strict", c.generation.strict);
        c.generation.blur_before_noise = gen.value("blur_before_noise", c.generation.blur_before_noise);
        c.generation.normalize_to_flux = gen.value("normalize_to_flux", c.generation.normalize_to_flux);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed config: ") + e.what());
    }

    c.canonical = j;
    c.canonical.erase("threads");
    c.canonical.erase("output_dir");
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j, path.parent_path());
}

void ExperimentConfig::validate() const {
    if (grid.width < 1 || grid.height < 1 || !(grid.pitch_mm > 0.0)) {
        throw ValidationError("grid needs positive width, height and pitch_mm");
    }
    calibration.validate();
    calibration.check_shape(grid.width, grid.height);
    if (channels.size() != 2) throw ValidationError("config needs exactly two channels (a, b)");
    if (channels[0].label == channels[1].label) throw ValidationError("channel labels must differ");
    for (const auto& ch : channels) {
        if (!(ch.k > 0.0)) throw ValidationError("channel '" + ch.label + "' needs k > 0");
        recipe.main_material.mu_for(ch.label);
        recipe.fo_material.mu_for(ch.label);
    }
    if (!(reference_exposure_ms > 0.0)) throw ValidationError("reference_exposure_ms must be > 0");
    if (exposures_ms.empty()) throw ValidationError("config needs at least one exposure");
    std::set<std::string> names;
    for (double t : exposures_ms) {
        if (!(t > 0.0)) throw ValidationError("exposure times must be > 0");
        if (t > reference_exposure_ms) {
            throw ValidationError("exposure " + exposure_dir_name(t) + " ms exceeds the reference exposure");
        }
        if (!names.insert(exposure_dir_name(t)).second) {
            throw ValidationError("duplicate exposure " + exposure_dir_name(t) + " ms");
        }
    }
    recipe.validate();
    if (fo_present < 1) throw ValidationError("counts.fo_present must be > 0");
    if (fo_absent < 0) throw ValidationError("counts.fo_absent must be >= 0");
    if (detector.external) {
        if (detector.command.empty()) throw ValidationError("external detector needs a command");
    } else {
        detector.baseline.validate();
    }
    if (aggregator.kind == forward::Aggregator::Kind::kPercentile && !(aggregator.q >= 0.0 && aggregator.q <= 100.0)) {
        throw ValidationError("contrast percentile must lie in [0, 100]");
    }
    if (pod.targets.empty()) throw ValidationError("pod.targets must not be empty");
    for (double p : pod.targets) {
        if (!(p > 0.0 && p < 1.0)) throw ValidationError("POD targets must lie in (0, 1)");
    }
    if (pod.bootstrap < 1) throw ValidationError("pod.bootstrap must be >= 1");
    if (!(pod.level > 0.0 && pod.level < 1.0)) throw ValidationError("pod.level must lie in (0, 1)");
    if (pod.curve_points < 2) throw ValidationError("pod.curve_points must be >= 2");
    if (!(generation.quality_factor >= 0.0)) throw ValidationError("quality_factor must be >= 0");
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical.dump())); }

DetectorCalibration load_calibration(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open calibration " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("calibration " + path.string() + " is not valid JSON: " + e.what());
    }
    DetectorCalibration c = calibration_from_json(j);
    if (j.contains("maps")) {
        const auto base = path.parent_path();
        const auto& maps = j["maps"];
        if (maps.contains("gain")) c.gain = PixelParam(read_image(resolve(base, maps["gain"].get<std::string>())));
        if (maps.contains("dark_offset")) {
            c.dark_offset = PixelParam(read_image(resolve(base, maps["dark_offset"].get<std::string>())));
        }
        if (maps.contains("dark_var")) c.dark_var = PixelParam(read_image(resolve(base, maps["dark_var"].get<std::string>())));
    }
    c.validate();
    return c;
}

json Provenance::to_json() const {
    return json{{"config_hash", config_hash}, {"master_seed", master_seed}, {"version", kVersion}};
}

SeedSpec bootstrap_seed(std::uint64_t master_seed, double exposure_ms) {
    return derive_seed({master_seed, 0}, fnv1a64("bootstrap:" + exposure_dir_name(exposure_ms)));
}

std::string exposure_dir_name(double exposure_ms) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", exposure_ms);
    return buf;
}

}  // namespace xpod::experiment
