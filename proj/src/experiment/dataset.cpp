#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <string_view>

#include "xpod/error.hpp"
#include "xpod/experiment.hpp"
#include "xpod/hash.hpp"
#include "xpod/image_io.hpp"
#include "xpod/noisegen.hpp"
#include "xpod/parallel.hpp"

namespace xpod::experiment {

using nlohmann::json;

namespace {

std::uint64_t tag(std::string_view purpose) { return fnv1a64(purpose); }

std::string sample_id(int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%04d", i);
    return buf;
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw RuntimeFailure("failed writing " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + " is not valid JSON: " + e.what());
    }
}

// Adds the payload fingerprint to a sidecar that was just written.
void stamp_payload(const fs::path& stem) {
    const auto paths = xri_paths(stem);
    json meta = read_sidecar(paths.sidecar);
    meta["payload_fnv1a64"] = hex64(fnv1a64_file(paths.payload));
    write_json(meta, paths.sidecar);
}

void write_tracked(const ImageGrid& grid, const fs::path& stem, const std::string& role, json extra) {
    write_image(grid, stem, role, extra);
    stamp_payload(stem);
}

void write_tracked_mask(const BinaryMask& mask, double pitch, const fs::path& stem, json extra) {
    write_mask(mask, pitch, stem, extra);
    stamp_payload(stem);
}

void write_calibration_file(const DetectorCalibration& calib, const Provenance& prov, const fs::path& out) {
    json j = calibration_scalars_to_json(calib);
    j["provenance"] = prov.to_json();
    json maps = json::object();
    const json extra{{"config_hash", prov.config_hash}, {"master_seed", prov.master_seed}};
    auto save = [&](const PixelParam& p, const char* name) {
        if (!p.is_map()) return;
        fs::create_directories(out / "calibration_maps");
        write_tracked(*p.map(), out / "calibration_maps" / name, "calibration_map", extra);
        maps[name] = std::string("calibration_maps/") + name + ".f32";
    };
    save(calib.gain, "gain");
    save(calib.dark_offset, "dark_offset");
    save(calib.dark_var, "dark_var");
    if (!maps.empty()) j["maps"] = maps;
    write_json(j, out / "calibration.json");
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class Fn>
auto with_sample_context(const std::string& id, Fn&& fn) {
    try {
        return fn();
    } catch (const ValidationError& e) {
        throw ValidationError("sample " + id + ": " + e.what());
    } catch (const RuntimeFailure& e) {
        throw RuntimeFailure("sample " + id + ": " + e.what());
    }
}

}  // namespace

DatasetManifest read_dataset_manifest(const fs::path& dataset_dir) {
    const json j = read_json(dataset_dir / "manifest.json");
    DatasetManifest m;
    try {
        m.provenance.config_hash = j.at("config_hash").get<std::string>();
        m.provenance.master_seed = j.at("master_seed").get<std::uint64_t>();
        m.exposures_ms = j.at("exposures_ms").get<std::vector<double>>();
        m.reference_exposure_ms = j.at("reference_exposure_ms").get<double>();
        for (const auto& ch : j.at("channels")) {
            m.labels.push_back(ch.at("label").get<std::string>());
            m.k.push_back(ch.at("k").get<double>());
        }
        for (const auto& s : j.at("samples")) {
            m.samples.push_back({s.at("id").get<std::string>(), s.at("fo_present").get<bool>(),
                                 s.at("contrast").get<double>()});
        }
    } catch (const json::exception& e) {
        throw ValidationError("malformed dataset manifest in " + dataset_dir.string() + ": " + e.what());
    }
    if (m.labels.size() != 2) throw ValidationError("dataset manifest needs two channels");
    return m;
}

DatasetManifest generate_dataset(const ExperimentConfig& config, const fs::path& out, unsigned threads) {
    config.validate();
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw RuntimeFailure("cannot create output directory " + out.string());

    DatasetManifest manifest;
    manifest.provenance = {config.hash(), config.seed};
    manifest.exposures_ms = config.exposures_ms;
    manifest.reference_exposure_ms = config.reference_exposure_ms;
    for (const auto& ch : config.channels) {
        manifest.labels.push_back(ch.label);
        manifest.k.push_back(ch.k);
    }
    const int n = config.fo_present + config.fo_absent;
    manifest.samples.resize(static_cast<std::size_t>(n));

    const json prov_extra{{"config_hash", manifest.provenance.config_hash},
                          {"master_seed", config.seed}};
    const std::vector<phantom::MaterialRef> materials{config.recipe.main_material, config.recipe.fo_material};
    const double t_ref = config.reference_exposure_ms;
    const auto& calib = config.calibration;

    noise::GenerationOptions gen_opt;
    gen_opt.quality_factor = config.generation.quality_factor;
    gen_opt.strict = config.generation.strict;
    gen_opt.blur_before_noise = config.generation.blur_before_noise;
    gen_opt.normalize_to_flux = config.generation.normalize_to_flux;

    for (double t : config.exposures_ms) fs::create_directories(out / exposure_dir_name(t));

    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t idx) {
        const int i = static_cast<int>(idx);
        const std::string id = sample_id(i);
        with_sample_context(id, [&] {
            const SeedSpec sample_seed{config.seed, idx};
            phantom::PhantomRecipe recipe = config.recipe;
            const bool fo = i < config.fo_present;
            if (!fo) recipe.fo.reset();
            const auto ph = phantom::build_phantom(recipe, config.grid, derive_seed(sample_seed, tag("phantom")));

            std::vector<forward::ChannelSettings> channels;
            std::vector<ImageGrid> reference;
            for (std::size_t c = 0; c < 2; ++c) {
                const auto& cc = config.channels[c];
                channels.push_back(forward::ChannelSettings::for_materials(cc.label, cc.k, t_ref, materials));
                const ImageGrid expected = forward::project(ph, channels.back());
                const SeedSpec s = derive_seed(sample_seed, tag("reference:" + cc.label));
                if (gen_opt.blur_before_noise) {
                    reference.push_back(noise::sample_noisy(noise::blur(expected, calib.psf_sigma), calib, s));
                } else {
                    reference.push_back(noise::blur(noise::sample_noisy(expected, calib, s), calib.psf_sigma));
                }
            }
            const ImageGrid dr = forward::contrast_map(ph, channels[0], channels[1]);
            const BinaryMask gt = ph.ground_truth();
            const double contrast = fo ? forward::sample_contrast(dr, gt, config.aggregator) : 0.0;
            manifest.samples[idx] = {id, fo, contrast};

            for (double t : config.exposures_ms) {
                const std::string tname = exposure_dir_name(t);
                const fs::path dir = out / tname / id;
                fs::create_directories(dir);
                for (std::size_t c = 0; c < 2; ++c) {
                    const auto& cc = config.channels[c];
                    ImageGrid img = reference[c];
                    if (t != t_ref) {
                        noise::GenerationRequest req{reference[c],
                                                     t_ref,
                                                     t,
                                                     cc.k,
                                                     calib,
                                                     derive_seed(sample_seed, tag("generate:" + tname + ":" + cc.label)),
                                                     true};
                        img = noise::generate_from_reference(req, gen_opt).image;
                    }
                    json extra = prov_extra;
                    extra["exposure_ms"] = t;
                    extra["channel"] = cc.label;
                    extra["i0"] = cc.k * t;
                    extra["sample_id"] = id;
                    write_tracked(img, dir / (c == 0 ? "a" : "b"), "raw", extra);
                }
                json extra = prov_extra;
                extra["sample_id"] = id;
                write_tracked_mask(gt, config.grid.pitch_mm, dir / "gt", extra);
                write_tracked(dr, dir / "dr", "contrast_map", extra);
            }
            return 0;
        });
    });

    write_calibration_file(calib, manifest.provenance, out);
    write_json(config.canonical, out / "config.json");

    for (double t : config.exposures_ms) {
        detect::DetectorManifest dm;
        dm.exposure_ms = t;
        dm.calibration = "../calibration.json";
        for (const auto& s : manifest.samples) {
            dm.samples.push_back({s.id, s.id + "/a.f32", s.id + "/b.f32", s.id + "/gt.f32", s.id + "/pred.f32"});
        }
        detect::write_manifest(dm, out / exposure_dir_name(t) / "detector_manifest.json");
    }

    json samples = json::array();
    for (const auto& s : manifest.samples) {
        samples.push_back({{"id", s.id}, {"fo_present", s.fo_present}, {"contrast", s.contrast}});
    }
    json channels = json::array();
    for (std::size_t c = 0; c < 2; ++c) channels.push_back({{"label", manifest.labels[c]}, {"k", manifest.k[c]}});
    const json mj{{"config_hash", manifest.provenance.config_hash},
                  {"master_seed", manifest.provenance.master_seed},
                  {"version", kVersion},
                  {"exposures_ms", manifest.exposures_ms},
                  {"reference_exposure_ms", manifest.reference_exposure_ms},
                  {"channels", channels},
                  {"samples", samples}};
    write_json(mj, out / "manifest.json");
    return manifest;
}

void write_outcomes_csv(const std::vector<detect::DetectionOutcome>& outcomes, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << "sample_id,fo_present,contrast,outcome,recall,false_positive\n";
    for (const auto& o : outcomes) {
        out << o.sample_id << ',' << (o.fo_present ? 1 : 0) << ',' << format_double(o.contrast) << ','
            << (o.detected ? 1 : 0) << ',' << format_double(o.recall) << ',' << (o.false_positive ? 1 : 0)
            << '\n';
    }
    if (!out) throw RuntimeFailure("failed writing " + path.string());
}

std::vector<detect::DetectionOutcome> detect_exposure(const fs::path& dataset, double exposure_ms,
                                                      const DetectorChoice& detector,
                                                      const forward::Aggregator& aggregator,
                                                      unsigned threads) {
    const DatasetManifest m = read_dataset_manifest(dataset);
    const std::string tname = exposure_dir_name(exposure_ms);
    if (std::find_if(m.exposures_ms.begin(), m.exposures_ms.end(),
                     [&](double t) { return exposure_dir_name(t) == tname; }) == m.exposures_ms.end()) {
        throw ValidationError("dataset has no exposure " + tname + " ms");
    }
    const fs::path dir = dataset / tname;
    const DetectorCalibration calib = load_calibration(dataset / "calibration.json");
    const double i0_a = m.i0(0, exposure_ms);
    const double i0_b = m.i0(1, exposure_ms);

    std::vector<BinaryMask> external;
    if (detector.external) {
        external = detect::run_external_detector(dir / "detector_manifest.json", detector.command);
        if (external.size() != m.samples.size()) {
            throw RuntimeFailure("external detector returned " + std::to_string(external.size()) +
                                 " masks for " + std::to_string(m.samples.size()) + " samples");
        }
    } else {
        detector.baseline.validate();
    }

    std::vector<detect::DetectionOutcome> outcomes(m.samples.size());
    parallel_for(m.samples.size(), threads, [&](std::size_t i) {
        const auto& s = m.samples[i];
        outcomes[i] = with_sample_context(s.id, [&] {
            const fs::path sd = dir / s.id;
            const BinaryMask gt = read_mask(sd / "gt");
            BinaryMask predicted = [&] {
                if (detector.external) return external[i];
                const detect::DualImage raw{read_image(sd / "a"), read_image(sd / "b"), detect::Stage::kRaw,
                                            exposure_ms, m.labels[0], m.labels[1]};
                const auto corrected = detect::correct_pair(raw, i0_a, i0_b, calib);
                return detect::baseline_segment(corrected, detector.baseline, calib);
            }();
            double contrast = 0.0;
            if (!gt.empty_set()) contrast = forward::sample_contrast(read_image(sd / "dr"), gt, aggregator);
            return detect::to_outcome(predicted, gt, contrast, s.id);
        });
    });
    write_outcomes_csv(outcomes, dir / "outcomes.csv");
    return outcomes;
}

void record_outputs(const fs::path& dir, const Provenance& provenance, const std::vector<std::string>& files) {
    const fs::path path = dir / "provenance.json";
    json j = fs::exists(path) ? read_json(path) : json::object();
    json pj = provenance.to_json();
    for (auto& [k, v] : pj.items()) j[k] = v;
    if (!j.contains("files")) j["files"] = json::object();
    for (const auto& f : files) j["files"][f] = hex64(fnv1a64_file(dir / f));
    write_json(j, path);
}

SweepReport run_pipeline(const ExperimentConfig& config, const fs::path& out, unsigned threads,
                         const std::vector<double>& query_exposures) {
    const DatasetManifest m = generate_dataset(config, out, threads);
    std::vector<PodReport> reports;
    for (double t : config.exposures_ms) {
        const std::string tname = exposure_dir_name(t);
        detect_exposure(out, t, config.detector, config.aggregator, threads);
        const SeedSpec boot = bootstrap_seed(config.seed, t);
        PodReport r = pod_from_outcomes(out / tname / "outcomes.csv", config.pod, boot, threads);
        r.exposure_ms = t;
        r.provenance = m.provenance;
        write_pod_report(r, config.pod, out / tname);
        record_outputs(out / tname, m.provenance,
                       {"outcomes.csv", "pod.json", "pod.svg", "pod_curve.csv", "detector_manifest.json"});
        reports.push_back(std::move(r));
    }
    SweepReport sweep;
    if (reports.size() >= 2) {
        sweep = build_sweep(reports, config.pod.targets.front(), query_exposures);
        sweep.provenance = m.provenance;
        fs::create_directories(out / "report");
        write_sweep(sweep, out / "report");
        record_outputs(out / "report", m.provenance,
                       {"sweep.csv", "sweep_report.json", "pod_overlay.svg", "threshold_vs_exposure.svg"});
    } else {
        sweep.reports = std::move(reports);
        sweep.target = config.pod.targets.front();
        sweep.provenance = m.provenance;
    }
    record_outputs(out, m.provenance, {"manifest.json", "config.json", "calibration.json"});
    return sweep;
}

int verify_dataset(const fs::path& dataset, std::ostream& log) {
    int problems = 0;
    auto fail = [&](const std::string& msg) {
        log << "MISMATCH " << msg << '\n';
        ++problems;
    };
    const DatasetManifest m = read_dataset_manifest(dataset);
    const fs::path config_path = dataset / "config.json";
    if (!fs::exists(config_path)) {
        fail("config.json missing");
    } else {
        const std::string h = hex64(fnv1a64(read_json(config_path).dump()));
        if (h != m.provenance.config_hash) {
            fail("config.json hashes to " + h + ", manifest records " + m.provenance.config_hash);
        }
    }

    std::size_t images = 0;
    std::vector<fs::path> entries;
    for (const auto& e : fs::recursive_directory_iterator(dataset)) {
        if (e.is_regular_file() && e.path().extension() == ".json") entries.push_back(e.path());
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& p : entries) {
        const std::string rel = fs::relative(p, dataset).string();
        const json j = read_json(p);
        if (j.is_object() && j.contains("dtype")) {
            ++images;
            if (j.value("config_hash", std::string()) != m.provenance.config_hash) {
                fail(rel + ": config hash differs from manifest");
            }
            if (!j.contains("master_seed") || j["master_seed"].get<std::uint64_t>() != m.provenance.master_seed) {
                fail(rel + ": master seed differs from manifest");
            }
            const auto payload = xri_paths(p).payload;
            if (!j.contains("payload_fnv1a64")) {
                fail(rel + ": no payload fingerprint");
            } else if (!fs::exists(payload)) {
                fail(rel + ": payload missing");
            } else if (hex64(fnv1a64_file(payload)) != j["payload_fnv1a64"].get<std::string>()) {
                fail(rel + ": payload fingerprint mismatch");
            }
        } else if (p.filename() == "provenance.json") {
            if (j.value("config_hash", std::string()) != m.provenance.config_hash) {
                fail(rel + ": config hash differs from manifest");
            }
            const json files = j.value("files", json::object());
            for (const auto& [name, h] : files.items()) {
                const fs::path f = p.parent_path() / name;
                if (!fs::exists(f)) {
                    fail(fs::relative(f, dataset).string() + ": missing");
                } else if (hex64(fnv1a64_file(f)) != h.get<std::string>()) {
                    fail(fs::relative(f, dataset).string() + ": fingerprint mismatch");
                }
            }
        }
    }

    for (double t : m.exposures_ms) {
        for (const auto& s : m.samples) {
            for (const char* name : {"a", "b", "gt", "dr"}) {
                const fs::path stem = dataset / exposure_dir_name(t) / s.id / name;
                if (!fs::exists(xri_paths(stem).payload) || !fs::exists(xri_paths(stem).sidecar)) {
                    fail(fs::relative(stem, dataset).string() + ": missing image");
                }
            }
        }
    }
    log << "checked " << images << " images, " << problems << " problem(s)\n";
    return problems;
}

}  // namespace xpod::experiment
