#include <cmath>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xpod/error.hpp"
#include "xpod/experiment.hpp"

namespace fs = std::filesystem;
namespace ex = xpod::experiment;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw xpod::ValidationError("cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw xpod::ValidationError(p.string() + " is not valid JSON: " + e.what());
    }
}

// Exposure and provenance of an outcomes file that lives inside a dataset.
struct DatasetContext {
    fs::path root;
    ex::DatasetManifest manifest;
    double exposure_ms = 0.0;
};

std::optional<DatasetContext> dataset_context(const fs::path& outcomes) {
    const fs::path dir = fs::absolute(outcomes).parent_path();
    const fs::path root = dir.parent_path();
    if (!fs::exists(root / "manifest.json")) return std::nullopt;
    DatasetContext c{root, ex::read_dataset_manifest(root), 0.0};
    for (double t : c.manifest.exposures_ms) {
        if (ex::exposure_dir_name(t) == dir.filename().string()) {
            c.exposure_ms = t;
            return c;
        }
    }
    return std::nullopt;
}

int cmd_calibrate(const fs::path& manifest, const fs::path& out, bool maps) {
    std::optional<fs::path> maps_dir;
    if (maps) maps_dir = out.parent_path() / (out.stem().string() + "_maps");
    const json j = ex::run_calibration(manifest, maps_dir);
    if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f) throw xpod::RuntimeFailure("cannot write " + out.string());
    f << j.dump(2) << '\n';
    std::cout << "gain " << j["gain"] << ", dark_offset " << j["dark_offset"] << ", dark_var " << j["dark_var"]
              << ", psf_sigma " << j["psf_sigma"] << '\n';
    return 0;
}

fs::path output_for(const ex::ExperimentConfig& cfg, const std::string& flag) {
    if (!flag.empty()) return flag;
    if (cfg.output_dir.empty()) throw xpod::ValidationError("no output directory: set output_dir or pass --out");
    return cfg.output_dir;
}

int cmd_detect(const fs::path& dataset, std::vector<double> exposures, const std::string& external,
               const std::string& detector_json, unsigned threads) {
    const auto manifest = ex::read_dataset_manifest(dataset);
    const json config = read_json_file(dataset / "config.json");
    ex::DetectorChoice det = ex::parse_detector(config.value("detector", json::object()));
    xpod::forward::Aggregator agg;
    if (config.contains("contrast_aggregator")) agg = ex::parse_aggregator(config["contrast_aggregator"]);
    if (!detector_json.empty()) det = ex::parse_detector(read_json_file(detector_json));
    if (!external.empty()) {
        det.external = true;
        det.command = external;
    }
    if (exposures.empty()) exposures = manifest.exposures_ms;
    for (double t : exposures) {
        const auto outcomes = ex::detect_exposure(dataset, t, det, agg, threads);
        std::size_t hits = 0, fo = 0, fp = 0, absent = 0;
        for (const auto& o : outcomes) {
            if (o.fo_present) {
                ++fo;
                hits += o.detected;
            } else {
                ++absent;
                fp += o.false_positive;
            }
        }
        ex::record_outputs(dataset / ex::exposure_dir_name(t), manifest.provenance, {"outcomes.csv"});
        std::cout << ex::exposure_dir_name(t) << " ms: " << hits << "/" << fo << " detected, " << fp << "/"
                  << absent << " false positives\n";
    }
    return 0;
}

int cmd_pod(const fs::path& outcomes, std::vector<double> targets, int bootstrap, std::optional<std::uint64_t> seed,
            double level, const std::string& out_dir, const std::string& stem, unsigned threads) {
    ex::PodSettings settings;
    if (!targets.empty()) settings.targets = targets;
    settings.bootstrap = bootstrap;
    settings.level = level;
    const auto ctx = dataset_context(outcomes);
    xpod::SeedSpec s{seed.value_or(0), 0};
    if (ctx && !seed) s = ex::bootstrap_seed(ctx->manifest.provenance.master_seed, ctx->exposure_ms);
    ex::PodReport r = ex::pod_from_outcomes(outcomes, settings, s, threads);
    if (ctx) {
        r.exposure_ms = ctx->exposure_ms;
        r.provenance = ctx->manifest.provenance;
    }
    const fs::path dir = out_dir.empty() ? fs::absolute(outcomes).parent_path() : fs::path(out_dir);
    ex::write_pod_report(r, settings, dir, stem);
    if (ctx && fs::equivalent(dir, fs::absolute(outcomes).parent_path())) {
        ex::record_outputs(dir, ctx->manifest.provenance, {stem + ".json", stem + ".svg", stem + "_curve.csv"});
    }
    for (const auto& iv : r.intervals) {
        std::cout << "dR@" << iv.target << " = " << iv.point << " [" << iv.ci_low << ", " << iv.ci_high << "]"
                  << (iv.unstable ? " unstable" : "") << '\n';
    }
    return 0;
}

int cmd_sweep(std::vector<std::string> reports, const std::string& dataset, double target,
              const std::vector<double>& queries, const std::string& out) {
    std::vector<ex::PodReport> parsed;
    std::optional<ex::Provenance> prov;
    if (!dataset.empty()) {
        const auto m = ex::read_dataset_manifest(dataset);
        prov = m.provenance;
        for (double t : m.exposures_ms) {
            const fs::path p = fs::path(dataset) / ex::exposure_dir_name(t) / "pod.json";
            if (!fs::exists(p)) throw xpod::ValidationError("missing POD fit for exposure " + ex::exposure_dir_name(t) + " ms");
            reports.push_back(p.string());
        }
    }
    for (const auto& r : reports) parsed.push_back(ex::PodReport::from_json(read_json_file(r)));
    auto sweep = ex::build_sweep(std::move(parsed), target, queries);
    if (!prov && !sweep.reports.empty()) prov = sweep.reports.front().provenance;
    sweep.provenance = prov;
    fs::path dir = out;
    if (dir.empty()) dir = dataset.empty() ? fs::path("report") : fs::path(dataset) / "report";
    ex::write_sweep(sweep, dir);
    if (prov) {
        ex::record_outputs(dir, *prov, {"sweep.csv", "sweep_report.json", "pod_overlay.svg", "threshold_vs_exposure.svg"});
    }
    for (const auto& row : sweep.rows) {
        std::cout << ex::exposure_dir_name(row.exposure_ms) << " ms: " << row.interval.point << " ["
                  << row.interval.ci_low << ", " << row.interval.ci_high << "]\n";
    }
    for (const auto& q : sweep.queries) {
        std::cout << "interpolated " << ex::exposure_dir_name(q.exposure_ms) << " ms: " << q.contrast << '\n';
    }
    std::cout << (sweep.monotone ? "monotone" : "NOT monotone") << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Foreign-object detectability from synthetic dual-energy X-ray images"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", ex::kVersion);
    unsigned threads = 0;
    app.add_option("--threads", threads, "Worker threads (0 = all cores)");

    fs::path cal_manifest, cal_out = "calibration.json";
    bool cal_maps = false;
    auto* cal = app.add_subcommand("calibrate", "Fit detector noise, flux and blur from flatfield series");
    cal->add_option("manifest", cal_manifest, "Calibration manifest JSON")->required();
    cal->add_option("-o,--out", cal_out, "Calibration JSON to write");
    cal->add_flag("--maps", cal_maps, "Also write per-pixel maps next to the output");

    fs::path gen_config;
    std::string gen_out;
    auto* gen = app.add_subcommand("generate", "Synthesize a dataset over an exposure sweep");
    gen->add_option("config", gen_config, "Experiment config JSON")->required();
    gen->add_option("-o,--out", gen_out, "Dataset directory (default: config output_dir)");

    fs::path det_dataset;
    std::vector<double> det_exposures;
    std::string det_external, det_json;
    auto* det = app.add_subcommand("detect", "Run a detector and write outcomes.csv per exposure");
    det->add_option("dataset", det_dataset, "Dataset directory")->required();
    det->add_option("-e,--exposure", det_exposures, "Exposure(s) in ms (default: all)");
    det->add_option("--external", det_external, "External detector command; {manifest} is replaced by the manifest path");
    det->add_option("--detector", det_json, "Detector JSON overriding the dataset config");

    fs::path pod_csv;
    std::vector<double> pod_targets;
    int pod_b = 200;
    std::optional<std::uint64_t> pod_seed;
    double pod_level = 0.90;
    std::string pod_out, pod_stem = "pod";
    auto* podc = app.add_subcommand("pod", "Fit a POD curve to an outcomes CSV");
    podc->add_option("outcomes", pod_csv, "Outcomes CSV (sample_id, contrast, outcome)")->required();
    podc->add_option("-p,--target", pod_targets, "Target probabilities (default 0.9)");
    podc->add_option("-b,--bootstrap", pod_b, "Bootstrap resamples");
    podc->add_option("--seed", pod_seed, "Bootstrap seed (default: from the dataset manifest)");
    podc->add_option("--level", pod_level, "Interval level");
    podc->add_option("-o,--out", pod_out, "Output directory (default: next to the CSV)");
    podc->add_option("--stem", pod_stem, "Output file stem");

    std::vector<std::string> sw_reports;
    std::string sw_dataset, sw_out;
    double sw_target = 0.9;
    std::vector<double> sw_queries;
    auto* sw = app.add_subcommand("sweep-report", "Summarize POD fits across exposures");
    sw->add_option("reports", sw_reports, "POD report JSON files");
    sw->add_option("-d,--dataset", sw_dataset, "Dataset directory; uses <exposure>/pod.json");
    sw->add_option("-p,--target", sw_target, "Target probability");
    sw->add_option("-q,--query", sw_queries, "Exposure(s) in ms to interpolate");
    sw->add_option("-o,--out", sw_out, "Output directory");

    fs::path ver_dataset;
    auto* ver = app.add_subcommand("verify", "Re-check config hash and file fingerprints of a dataset");
    ver->add_option("dataset", ver_dataset, "Dataset directory")->required();

    fs::path run_config;
    std::string run_out;
    std::vector<double> run_queries;
    auto* run = app.add_subcommand("run", "generate, detect, pod and sweep-report in one go");
    run->add_option("config", run_config, "Experiment config JSON")->required();
    run->add_option("-o,--out", run_out, "Dataset directory (default: config output_dir)");
    run->add_option("-q,--query", run_queries, "Exposure(s) in ms to interpolate");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*cal) return cmd_calibrate(cal_manifest, cal_out, cal_maps);
        if (*gen) {
            const auto cfg = ex::load_config(gen_config);
            const fs::path out = output_for(cfg, gen_out);
            const auto m = ex::generate_dataset(cfg, out, threads ? threads : cfg.threads);
            std::cout << "wrote " << m.samples.size() << " samples x " << m.exposures_ms.size() << " exposures to "
                      << out.string() << '\n';
            return 0;
        }
        if (*det) return cmd_detect(det_dataset, det_exposures, det_external, det_json, threads);
        if (*podc) return cmd_pod(pod_csv, pod_targets, pod_b, pod_seed, pod_level, pod_out, pod_stem, threads);
        if (*sw) {
            if (sw_reports.empty() && sw_dataset.empty()) {
                throw xpod::ValidationError("sweep-report needs report files or --dataset");
            }
            return cmd_sweep(sw_reports, sw_dataset, sw_target, sw_queries, sw_out);
        }
        if (*ver) {
            const int problems = ex::verify_dataset(ver_dataset, std::cout);
            if (problems > 0) throw xpod::ValidationError(std::to_string(problems) + " provenance problem(s)");
            return 0;
        }
        if (*run) {
            const auto cfg = ex::load_config(run_config);
            const fs::path out = output_for(cfg, run_out);
            const auto sweep = ex::run_pipeline(cfg, out, threads ? threads : cfg.threads, run_queries);
            for (const auto& row : sweep.rows) {
                std::cout << ex::exposure_dir_name(row.exposure_ms) << " ms: " << row.interval.point << " ["
                          << row.interval.ci_low << ", " << row.interval.ci_high << "]\n";
            }
            for (const auto& q : sweep.queries) {
                std::cout << "interpolated " << ex::exposure_dir_name(q.exposure_ms) << " ms: " << q.contrast << '\n';
            }
            if (sweep.rows.size() >= 2) std::cout << (sweep.monotone ? "monotone" : "NOT monotone") << '\n';
            return 0;
        }
    } catch (const xpod::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const xpod::RuntimeFailure& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
